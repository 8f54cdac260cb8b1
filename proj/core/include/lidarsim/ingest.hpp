#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "lidarsim/point_cloud.hpp"

namespace lidarsim {

struct ParseReport {
    std::size_t records = 0;
    std::size_t dropped_zero_range = 0;
    std::size_t dropped_non_finite = 0;
    std::size_t clamped_intensity = 0;
    // Record index of every retained point, for aligning per-record side files.
    std::vector<std::size_t> kept;

    std::size_t dropped() const { return dropped_zero_range + dropped_non_finite; }
};

// KITTI velodyne layout: little-endian float32 (x, y, z, intensity) per 16-byte record.
// Intensities are divided by `intensity_max` and clamped to [0, 1].
PointCloud read_point_cloud(const std::filesystem::path& path, ParseReport* report = nullptr,
                            float intensity_max = 1.0f);
PointCloud decode_point_cloud(const std::vector<std::uint8_t>& bytes, ParseReport* report = nullptr,
                              float intensity_max = 1.0f);
std::vector<std::uint8_t> encode_point_cloud(const PointCloud& cloud);
void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud);

// SemanticKITTI .label: little-endian uint32 per record, semantic class in the low 16 bits.
std::vector<std::uint16_t> read_labels(const std::filesystem::path& path, std::size_t n);
std::vector<std::uint16_t> decode_labels(const std::vector<std::uint8_t>& bytes, std::size_t n);
void write_labels(const std::filesystem::path& path, const std::vector<std::uint16_t>& labels);

// Keeps the entries at report.kept (labels read against the raw record count).
std::vector<std::uint16_t> select_kept(const std::vector<std::uint16_t>& labels,
                                       const ParseReport& report);

// Binary PPM (P6, maxval 255) or PNG (8-bit RGB/RGBA/gray), chosen by extension.
CameraFrame read_camera(const std::filesystem::path& image_path,
                        const std::filesystem::path& proj_path);
// Plain text, 12 numbers, row-major 3x4.
Eigen::Matrix<double, 3, 4> read_projection_matrix(const std::filesystem::path& path);

// Nearest-pixel colour lookup. Points outside the image or at non-positive
// projected depth get rgb (0,0,0) and color_mask 0.
PointCloud colorize(const PointCloud& cloud, const CameraFrame& cam);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace lidarsim
