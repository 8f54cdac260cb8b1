#include "lidarsim/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "lidarsim/error.hpp"

namespace lidarsim {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kMinRange = 0.5;

void consider(std::optional<RayHit>& best, double t, const Vec3d& normal, std::uint16_t label,
              const Vec3f& color, double max_range) {
    if (t >= kMinRange && t <= max_range && (!best || t < best->range)) {
        best = RayHit{t, normal, label, color};
    }
}

void hit_wall(const WallPrimitive& wall, const Vec3d& dir, double max_range, std::optional<RayHit>& best) {
    const double denom = dir.dot(wall.normal);
    if (std::abs(denom) < 1e-12) {
        return;
    }
    const double t = wall.center.dot(wall.normal) / denom;
    const Vec3d p = t * dir;
    const Vec3d along = Vec3d::UnitZ().cross(wall.normal);
    const Vec3d d = p - wall.center;
    if (std::abs(d.dot(along)) <= wall.half_width && std::abs(d.z()) <= wall.half_height) {
        consider(best, t, wall.normal, wall.label, wall.color, max_range);
    }
}

void hit_box(const BoxPrimitive& box, const Vec3d& dir, double max_range, std::optional<RayHit>& best) {
    const double c = std::cos(box.yaw);
    const double s = std::sin(box.yaw);
    // Ray in box-local coordinates (origin at the sensor).
    const Vec3d o(-(c * box.center.x() + s * box.center.y()),
                  -(-s * box.center.x() + c * box.center.y()), -box.center.z());
    const Vec3d d(c * dir.x() + s * dir.y(), -s * dir.x() + c * dir.y(), dir.z());
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    int axis_near = -1;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-12) {
            if (std::abs(o[a]) > box.half_size[a]) {
                return;
            }
            continue;
        }
        double t0 = (-box.half_size[a] - o[a]) / d[a];
        double t1 = (box.half_size[a] - o[a]) / d[a];
        if (t0 > t1) std::swap(t0, t1);
        if (t0 > t_near) {
            t_near = t0;
            axis_near = a;
        }
        t_far = std::min(t_far, t1);
    }
    if (axis_near < 0 || t_near > t_far || t_near <= 0.0) {
        return;
    }
    Vec3d local_n = Vec3d::Zero();
    local_n[axis_near] = 1.0;
    const Vec3d world_n(c * local_n.x() - s * local_n.y(), s * local_n.x() + c * local_n.y(), local_n.z());
    consider(best, t_near, world_n, box.label, box.color, max_range);
}

void hit_cylinder(const CylinderPrimitive& cyl, const Vec3d& dir, double max_range,
                  std::optional<RayHit>& best) {
    const double a = dir.x() * dir.x() + dir.y() * dir.y();
    if (a < 1e-12) {
        return;
    }
    const double b = -2.0 * (dir.x() * cyl.x + dir.y() * cyl.y);
    const double cc = cyl.x * cyl.x + cyl.y * cyl.y - cyl.radius * cyl.radius;
    const double disc = b * b - 4.0 * a * cc;
    if (disc < 0.0) {
        return;
    }
    const double t = (-b - std::sqrt(disc)) / (2.0 * a);
    const Vec3d p = t * dir;
    if (p.z() < cyl.z_min || p.z() > cyl.z_max) {
        return;
    }
    const Vec3d n = Vec3d(p.x() - cyl.x, p.y() - cyl.y, 0.0).normalized();
    consider(best, t, n, cyl.label, cyl.color, max_range);
}

}  // namespace

void SynthSceneConfig::validate() const {
    if (n_planes < 0 || n_boxes < 0 || n_cylinders < 0) {
        throw Error(ErrorCode::Config, "synth: primitive counts must be non-negative");
    }
    for (const auto& [label, rho] : albedo) {
        if (!(rho > 0.0 && rho <= 1.0)) {
            throw Error(ErrorCode::Config, "synth: albedo of class " + std::to_string(label) +
                                               " must lie in (0, 1]");
        }
    }
    if (!(attenuation > 0.0) || !(noise_sigma >= 0.0) || !(sensor_height > 0.0)) {
        throw Error(ErrorCode::Config, "synth: attenuation and sensor height must be positive, sigma >= 0");
    }
}

double SynthSceneConfig::albedo_of(std::uint16_t label) const {
    auto it = albedo.find(label);
    if (it == albedo.end()) {
        throw Error(ErrorCode::Config, "synth: no albedo for class " + std::to_string(label));
    }
    return it->second;
}

std::optional<RayHit> cast_ray(const Scene& scene, const Vec3d& dir, double max_range) {
    std::optional<RayHit> best;
    if (scene.ground && dir.z() < -1e-12) {
        consider(best, scene.ground_z / dir.z(), Vec3d::UnitZ(), synth_class::kRoad, scene.ground_color,
                 max_range);
    }
    for (const auto& wall : scene.walls) hit_wall(wall, dir, max_range, best);
    for (const auto& box : scene.boxes) hit_box(box, dir, max_range, best);
    for (const auto& cyl : scene.cylinders) hit_cylinder(cyl, dir, max_range, best);
    return best;
}

double lambertian_intensity(double albedo, double cos_theta, double range, double attenuation) {
    return albedo * cos_theta * std::exp(-range / attenuation);
}

Vec3d pixel_ray(int row, int col, const ProjectionConfig& cfg) {
    const double azimuth = kPi * (1.0 - 2.0 * (col + 0.5) / cfg.width);
    const double elevation = cfg.fov_up - (row + 0.5) / cfg.height * (cfg.fov_up - cfg.fov_down);
    return {std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
            std::sin(elevation)};
}

Scene random_scene(std::uint64_t seed, const SynthSceneConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto jitter = [&](const Vec3f& base) { return Vec3f(base * static_cast<float>(uniform(0.7, 1.0))); };

    Scene scene;
    scene.ground_z = -cfg.sensor_height;
    for (int i = 0; i < cfg.n_planes; ++i) {
        const double dist = uniform(8.0, 40.0);
        const double az = uniform(-kPi, kPi);
        const double yaw = uniform(deg2rad(-70.0), deg2rad(70.0));
        const Vec3d to_sensor(-std::cos(az), -std::sin(az), 0.0);
        const Vec3d normal(std::cos(yaw) * to_sensor.x() - std::sin(yaw) * to_sensor.y(),
                           std::sin(yaw) * to_sensor.x() + std::cos(yaw) * to_sensor.y(), 0.0);
        const double half_height = 0.5 * uniform(3.0, 12.0);
        WallPrimitive wall;
        wall.center = Vec3d(dist * std::cos(az), dist * std::sin(az), scene.ground_z + half_height);
        wall.normal = normal.normalized();
        wall.half_width = 0.5 * uniform(6.0, 25.0);
        wall.half_height = half_height;
        wall.color = jitter(Vec3f(0.7f, 0.6f, 0.5f));
        scene.walls.push_back(wall);
    }
    for (int i = 0; i < cfg.n_boxes; ++i) {
        const double dist = uniform(5.0, 30.0);
        const double az = uniform(-kPi, kPi);
        BoxPrimitive box;
        box.half_size = Vec3d(0.5 * uniform(4.0, 5.0), 0.5 * uniform(1.6, 2.0), 0.5 * uniform(1.3, 1.7));
        box.center = Vec3d(dist * std::cos(az), dist * std::sin(az), scene.ground_z + box.half_size.z());
        box.yaw = uniform(-kPi, kPi);
        box.color = jitter(Vec3f(0.8f, 0.1f, 0.1f));
        scene.boxes.push_back(box);
    }
    for (int i = 0; i < cfg.n_cylinders; ++i) {
        const double dist = uniform(3.0, 25.0);
        const double az = uniform(-kPi, kPi);
        CylinderPrimitive cyl;
        cyl.x = dist * std::cos(az);
        cyl.y = dist * std::sin(az);
        cyl.radius = uniform(0.1, 0.4);
        cyl.z_min = scene.ground_z;
        cyl.z_max = scene.ground_z + uniform(2.0, 6.0);
        cyl.color = jitter(Vec3f(0.3f, 0.5f, 0.3f));
        scene.cylinders.push_back(cyl);
    }
    return scene;
}

SynthScene render_scene(const Scene& scene, const ProjectionConfig& proj, const SynthSceneConfig& cfg,
                        std::uint64_t noise_seed) {
    proj.validate();
    cfg.validate();
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> noise(0.0, 1.0);

    SynthScene out;
    PointCloud& cloud = out.cloud;
    std::vector<std::uint16_t> labels;
    std::vector<Vec3f> colors;
    std::vector<std::uint8_t> color_mask;
    for (int row = 0; row < proj.height; ++row) {
        for (int col = 0; col < proj.width; ++col) {
            const Vec3d dir = pixel_ray(row, col, proj);
            const auto hit = cast_ray(scene, dir, proj.r_max);
            if (!hit) {
                ++out.no_hit_rays;
                continue;
            }
            const double cos_theta = std::min(1.0, std::abs(dir.dot(hit->normal)));
            double value = lambertian_intensity(cfg.albedo_of(hit->label), cos_theta, hit->range,
                                                cfg.attenuation);
            if (cfg.noise_sigma > 0.0) {
                value += cfg.noise_sigma * noise(rng);
            }
            cloud.points.push_back((hit->range * dir).cast<float>());
            cloud.intensity.push_back(static_cast<float>(std::clamp(value, 0.0, 1.0)));
            labels.push_back(hit->label);
            out.analytic_angle.push_back(std::acos(cos_theta));
            const bool in_view = std::abs(std::atan2(dir.y(), dir.x())) <= cfg.camera_half_fov;
            colors.push_back(in_view ? hit->color : Vec3f::Zero());
            color_mask.push_back(in_view ? 1 : 0);
        }
    }
    cloud.label = std::move(labels);
    if (cfg.with_rgb) {
        cloud.rgb = std::move(colors);
        cloud.color_mask = std::move(color_mask);
    }
    return out;
}

SynthScene synth_scene(std::uint64_t seed, const SynthSceneConfig& cfg, const ProjectionConfig& proj) {
    // Geometry and sensor noise draw from separate streams of the same seed.
    const Scene scene = random_scene(seed, cfg);
    std::seed_seq seq{seed, std::uint64_t{0x9e3779b97f4a7c15ull}};
    std::uint64_t noise_seed = 0;
    seq.generate(reinterpret_cast<std::uint32_t*>(&noise_seed),
                 reinterpret_cast<std::uint32_t*>(&noise_seed) + 2);
    return render_scene(scene, proj, cfg, noise_seed);
}

}  // namespace lidarsim
