#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "lidarsim/pipeline.hpp"
#include "lidarsim/point_cloud.hpp"

namespace fixtures {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

struct OracleScene {
    lidarsim::PointCloud cloud;
    std::vector<double> analytic_angle;
    std::vector<bool> interior;
};

// Uniformly random points (density per square meter) on a square patch of a
// randomly oriented plane away from the origin. Interior points lie at least
// `margin` from the patch border.
OracleScene plane_scene(std::uint64_t seed, double density = 10.0, double side = 10.0, double margin = 1.0);

// Points on a sphere centred at the sensor: every ray meets the surface head-on.
OracleScene sphere_scene(std::uint64_t seed, double radius = 15.0, double density = 10.0);

lidarsim::PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, double extent = 20.0);

// Small, fast training configuration on the synthetic generator.
lidarsim::TrainConfig tiny_config(const std::filesystem::path& out_dir);

std::string read_text(const std::filesystem::path& path);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

}  // namespace fixtures
