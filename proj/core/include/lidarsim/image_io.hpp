#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lidarsim/projection.hpp"

namespace lidarsim {

// "LSI1" packed planes: magic, u32 H, u32 W, u32 C, C names (u32 length + bytes),
// then C*H*W little-endian float32 in channel-major order.
struct PackedPlanes {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<std::string> names;
    std::vector<float> data;
};

std::vector<std::uint8_t> encode_lsi(const PackedPlanes& planes);
// Parses one block starting at `offset`; advances it past the block.
PackedPlanes decode_lsi(const std::vector<std::uint8_t>& bytes, std::size_t& offset);
void write_lsi(const std::filesystem::path& path, const PackedPlanes& planes);
PackedPlanes read_lsi(const std::filesystem::path& path);

PackedPlanes pack_image(const SphericalImage& img);

// Binary PGM (P5). 16-bit samples are big-endian as the format requires.
void write_pgm8(const std::filesystem::path& path, int height, int width,
                const std::vector<std::uint8_t>& gray);
void write_pgm16(const std::filesystem::path& path, int height, int width,
                 const std::vector<std::uint16_t>& gray);
struct Pgm {
    int height = 0;
    int width = 0;
    int maxval = 0;
    std::vector<std::uint16_t> samples;
};
Pgm read_pgm(const std::filesystem::path& path);

// Writes <prefix>.lsi, one <prefix>_<channel>.pgm per channel and a <prefix>.json
// sidecar (grid config, channel names and the value scale of each PGM).
void export_spherical_image(const std::filesystem::path& prefix, const SphericalImage& img);

}  // namespace lidarsim
