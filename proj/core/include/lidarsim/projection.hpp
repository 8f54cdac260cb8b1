#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "lidarsim/point_cloud.hpp"

namespace lidarsim {

constexpr double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }

// Uniform elevation/azimuth grid. Defaults follow an HDL-64-like sensor.
struct ProjectionConfig {
    int height = 64;
    int width = 1024;
    double fov_up = deg2rad(2.0);
    double fov_down = deg2rad(-24.8);
    double r_max = 80.0;

    void validate() const;
    bool operator==(const ProjectionConfig&) const = default;
};

struct PixelCoord {
    int row;
    int col;
};

namespace channel {
inline constexpr const char* kDepth = "depth";
inline constexpr const char* kMask = "mask";
inline constexpr const char* kIncidence = "incidence";
inline constexpr const char* kLabel = "label";
inline constexpr const char* kRed = "r";
inline constexpr const char* kGreen = "g";
inline constexpr const char* kBlue = "b";
inline constexpr const char* kColorMask = "color_mask";
// Ground-truth target plane; never part of an input stack.
inline constexpr const char* kIntensity = "intensity";
}  // namespace channel

// H x W multi-channel range image. Channel planes are row-major H*W floats; the
// label plane holds raw class ids.
struct SphericalImage {
    ProjectionConfig config;
    std::map<std::string, std::vector<float>> channels;
    std::vector<std::int32_t> point_index;  // -1 where no point won the pixel
    std::size_t source_points = 0;
    std::size_t dropped_out_of_fov = 0;

    std::size_t pixel_count() const {
        return static_cast<std::size_t>(config.height) * config.width;
    }
    bool has(const std::string& name) const { return channels.contains(name); }
    // Throws ModalityUnavailable when absent.
    const std::vector<float>& channel(const std::string& name) const;
};

// Pixel of a point, or nullopt-like {-1,-1} when its elevation lies outside the FOV.
PixelCoord pixel_of(const Vec3f& p, const ProjectionConfig& cfg);

// Nearest range wins each pixel; equal ranges keep the lowest point index.
SphericalImage spherical_project(const PointCloud& cloud, const ProjectionConfig& cfg);

// Per-point values read back from `pred` at each point's winning pixel; points
// that won no pixel receive -1.
std::vector<float> unproject(const SphericalImage& img, const std::vector<float>& pred);

enum class Modality : unsigned { Depth = 1, Incidence = 2, Label = 4, Rgb = 8 };

// Subset of {D, I, L, RGB}; always contains D.
class ModalityCombo {
public:
    ModalityCombo() = default;
    static ModalityCombo from_bits(unsigned bits);
    // Accepts "D+L+I", "d+rgb", ... in any order.
    static ModalityCombo parse(const std::string& text);
    // The eight canonical combos: D, D+I, D+L, D+L+I, D+RGB, D+RGB+I, D+RGB+L, D+RGB+L+I.
    static const std::array<ModalityCombo, 8>& all();

    bool contains(Modality m) const { return (bits_ & static_cast<unsigned>(m)) != 0; }
    unsigned bits() const { return bits_; }
    std::string name() const;
    // Fixed order: depth, mask, incidence, label, r, g, b, color_mask (subset preserved).
    std::vector<std::string> channel_names() const;
    std::size_t channel_count() const { return channel_names().size(); }
    bool operator==(const ModalityCombo&) const = default;

private:
    unsigned bits_ = static_cast<unsigned>(Modality::Depth);
};

struct ChannelStack {
    std::vector<std::string> names;
    int height = 0;
    int width = 0;
    std::vector<float> data;  // C * H * W

    std::size_t channels() const { return names.size(); }
};

// Label plane is encoded as class_id / 255.
ChannelStack select_channels(const SphericalImage& img, const ModalityCombo& combo);

}  // namespace lidarsim
