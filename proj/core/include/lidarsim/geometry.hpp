#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lidarsim/kdtree.hpp"
#include "lidarsim/point_cloud.hpp"

namespace lidarsim {

inline constexpr int kDefaultNeighbors = 16;

struct NormalEstimate {
    Vec3d normal = Vec3d::UnitZ();
    double planarity = 0.0;  // lambda_min / (lambda_0 + lambda_1 + lambda_2), in [0, 1/3]
    bool degenerate = false;
};

struct IncidenceResult {
    double angle = 0.0;      // radians, [0, pi/2]
    double cos_angle = 1.0;  // [0, 1]
    Vec3d direction = Vec3d::UnitX();
};

// k nearest neighbours of point q (excluding q), ascending distance, ties by index.
std::vector<int> knn(const PointCloud& cloud, int k, int q);

// PCA normal over q and its k neighbours. Rank-deficient neighbourhoods or a
// near-repeated smallest eigenvalue are flagged degenerate and return -u.
NormalEstimate estimate_normal(const PointCloud& cloud, const KdTree& tree, int q, int k);
NormalEstimate estimate_normal(const PointCloud& cloud, int q, int k);

// Flips n so that it faces the sensor (dot(p/|p|, n) <= 0).
Vec3d orient_toward_sensor(const Vec3d& p, const Vec3d& n);

// theta = arccos(clamp(|u . n|, 0, 1)) with u = p / |p|.
IncidenceResult incidence_angle(const Vec3d& p, const Vec3d& n);

struct IncidenceChannel {
    std::vector<float> angle;
    std::vector<Vec3f> normal;  // oriented toward the sensor
    std::vector<std::uint8_t> degenerate;
};

// Normal estimation + orientation + angle for every point. Degenerate points
// get angle 0. Requires at least k + 1 points.
IncidenceChannel incidence_channel(const PointCloud& cloud, int k = kDefaultNeighbors);

// Fills cloud.normal and cloud.incidence.
void attach_incidence(PointCloud& cloud, int k = kDefaultNeighbors);

// CSV rows: index,angle_rad,degenerate_flag
void write_angle_csv(const std::filesystem::path& path, const IncidenceChannel& channel);

}  // namespace lidarsim
