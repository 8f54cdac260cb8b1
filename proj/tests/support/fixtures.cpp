#include "fixtures.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Geometry>

namespace fixtures {

TempDir::TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("lidarsim_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

OracleScene plane_scene(std::uint64_t seed, double density, double side, double margin) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> dist(5.0, 25.0);
    Eigen::Vector3d normal;
    do {
        normal = {unit(rng), unit(rng), unit(rng)};
    } while (normal.norm() < 0.1);
    normal.normalize();
    // Patch centre along a random direction that is not grazing.
    Eigen::Vector3d dir;
    do {
        dir = {unit(rng), unit(rng), 0.3 * unit(rng)};
        dir.normalize();
    } while (std::abs(dir.dot(normal)) < 0.2);
    const Eigen::Vector3d center = dist(rng) * dir;
    const Eigen::Vector3d a = normal.unitOrthogonal();
    const Eigen::Vector3d b = normal.cross(a);

    OracleScene scene;
    const int n = static_cast<int>(std::lround(density * side * side));
    std::uniform_real_distribution<double> coord(-side / 2.0, side / 2.0);
    for (int i = 0; i < n; ++i) {
        const double s = coord(rng);
        const double t = coord(rng);
        const Eigen::Vector3d p = center + s * a + t * b;
        scene.cloud.points.push_back(p.cast<float>());
        scene.cloud.intensity.push_back(0.5f);
        const Eigen::Vector3d u = p.cast<float>().cast<double>().normalized();
        scene.analytic_angle.push_back(std::acos(std::min(1.0, std::abs(u.dot(normal)))));
        scene.interior.push_back(std::abs(s) <= side / 2.0 - margin && std::abs(t) <= side / 2.0 - margin);
    }
    return scene;
}

OracleScene sphere_scene(std::uint64_t seed, double radius, double density) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    const int n = static_cast<int>(std::lround(density * 4.0 * std::numbers::pi * radius * radius));
    OracleScene scene;
    for (int i = 0; i < n; ++i) {
        Eigen::Vector3d v(g(rng), g(rng), g(rng));
        v = radius * v.normalized();
        scene.cloud.points.push_back(v.cast<float>());
        scene.cloud.intensity.push_back(0.5f);
        scene.analytic_angle.push_back(0.0);
        scene.interior.push_back(true);
    }
    return scene;
}

lidarsim::PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, double extent) {
    std::uniform_real_distribution<float> c(static_cast<float>(-extent), static_cast<float>(extent));
    std::uniform_real_distribution<float> i(0.0f, 1.0f);
    lidarsim::PointCloud cloud;
    while (cloud.points.size() < n) {
        Eigen::Vector3f p(c(rng), c(rng), c(rng));
        if (p.norm() < 0.1f) continue;
        cloud.points.push_back(p);
        cloud.intensity.push_back(i(rng));
    }
    return cloud;
}

lidarsim::TrainConfig tiny_config(const std::filesystem::path& out_dir) {
    lidarsim::TrainConfig cfg;
    cfg.projection.height = 32;
    cfg.projection.width = 128;
    cfg.depth = 3;
    cfg.base_width = 4;
    cfg.disc_base_width = 4;
    cfg.disc_layers = 2;
    cfg.synth_frames = 10;
    cfg.train_size = 6;
    cfg.val_size = 2;
    cfg.test_size = 2;
    cfg.epochs = 2;
    cfg.batch_size = 2;
    cfg.out_dir = out_dir;
    cfg.deterministic = true;
    return cfg;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace fixtures
