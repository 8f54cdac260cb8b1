#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace lidarsim {

using Vec3f = Eigen::Vector3f;
using Vec3d = Eigen::Vector3d;

// Sensor-centred point cloud. Optional attribute arrays, when present, have one
// entry per point.
struct PointCloud {
    std::vector<Vec3f> points;
    std::vector<float> intensity;                 // unitless, [0, 1]
    std::optional<std::vector<std::uint16_t>> label;
    std::optional<std::vector<Vec3f>> rgb;        // [0, 1]
    std::optional<std::vector<std::uint8_t>> color_mask;
    std::optional<std::vector<Vec3f>> normal;     // unit vectors
    std::optional<std::vector<float>> incidence;  // radians, [0, pi/2]

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }

    double range(std::size_t i) const { return points[i].cast<double>().norm(); }

    // Throws lidarsim::Error(InvalidPoint / Shape) when an invariant is broken.
    void validate() const;
};

struct CameraFrame {
    int height = 0;
    int width = 0;
    std::vector<Vec3f> pixels;  // row-major, height * width
    Eigen::Matrix<double, 3, 4> proj = Eigen::Matrix<double, 3, 4>::Zero();

    const Vec3f& pixel(int row, int col) const {
        return pixels[static_cast<std::size_t>(row) * width + col];
    }
    void validate() const;
};

}  // namespace lidarsim
