#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "lidarsim/point_cloud.hpp"
#include "lidarsim/projection.hpp"

namespace lidarsim {

// SemanticKITTI class ids used by the synthetic generator.
namespace synth_class {
inline constexpr std::uint16_t kCar = 10;
inline constexpr std::uint16_t kRoad = 40;
inline constexpr std::uint16_t kBuilding = 50;
inline constexpr std::uint16_t kPole = 80;
}  // namespace synth_class

struct SynthSceneConfig {
    int n_planes = 4;
    int n_boxes = 6;
    int n_cylinders = 6;
    std::map<std::uint16_t, double> albedo{{synth_class::kCar, 0.9},
                                           {synth_class::kRoad, 0.3},
                                           {synth_class::kBuilding, 0.6},
                                           {synth_class::kPole, 0.45}};
    double attenuation = 60.0;  // a0, meters
    double noise_sigma = 0.01;
    double sensor_height = 1.73;
    // Attach per-point colour for points inside a forward camera cone.
    bool with_rgb = true;
    double camera_half_fov = deg2rad(45.0);

    void validate() const;
    double albedo_of(std::uint16_t label) const;
};

// Vertical finite rectangle.
struct WallPrimitive {
    Vec3d center;
    Vec3d normal;  // horizontal unit vector
    double half_width;
    double half_height;
    std::uint16_t label = synth_class::kBuilding;
    Vec3f color = Vec3f::Ones();
};

// Box resting on the ground, rotated about z.
struct BoxPrimitive {
    Vec3d center;
    double yaw;
    Vec3d half_size;
    std::uint16_t label = synth_class::kCar;
    Vec3f color = Vec3f::Ones();
};

// Vertical cylinder (side surface only).
struct CylinderPrimitive {
    double x;
    double y;
    double radius;
    double z_min;
    double z_max;
    std::uint16_t label = synth_class::kPole;
    Vec3f color = Vec3f::Ones();
};

struct Scene {
    bool ground = true;
    double ground_z = -1.73;
    Vec3f ground_color = Vec3f(0.35f, 0.35f, 0.38f);
    std::vector<WallPrimitive> walls;
    std::vector<BoxPrimitive> boxes;
    std::vector<CylinderPrimitive> cylinders;
};

struct RayHit {
    double range;
    Vec3d normal;  // analytic surface normal (any sign)
    std::uint16_t label;
    Vec3f color;
};

// First intersection along the unit direction `dir` from the origin within max_range.
std::optional<RayHit> cast_ray(const Scene& scene, const Vec3d& dir, double max_range);

// rho * cos(theta) * exp(-r / a0)
double lambertian_intensity(double albedo, double cos_theta, double range, double attenuation);

// Direction through the centre of pixel (row, col) of the projection grid.
Vec3d pixel_ray(int row, int col, const ProjectionConfig& cfg);

Scene random_scene(std::uint64_t seed, const SynthSceneConfig& cfg);

struct SynthScene {
    PointCloud cloud;                     // intensity and labels (and rgb when enabled)
    std::vector<double> analytic_angle;   // radians, per point
    std::size_t no_hit_rays = 0;
};

// Casts one ray per grid pixel; intensity = lambertian + N(0, sigma), clamped to [0, 1].
SynthScene render_scene(const Scene& scene, const ProjectionConfig& proj, const SynthSceneConfig& cfg,
                        std::uint64_t noise_seed);

SynthScene synth_scene(std::uint64_t seed, const SynthSceneConfig& cfg, const ProjectionConfig& proj);

}  // namespace lidarsim
