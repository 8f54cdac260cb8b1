#include "lidarsim/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "byte_io.hpp"
#include "lidarsim/error.hpp"
#include "lidarsim/ingest.hpp"

namespace lidarsim {

namespace fs = std::filesystem;

namespace {
constexpr char kLsiMagic[4] = {'L', 'S', 'I', '1'};
}

std::vector<std::uint8_t> encode_lsi(const PackedPlanes& planes) {
    const std::size_t expected =
        static_cast<std::size_t>(planes.height) * planes.width * planes.names.size();
    if (planes.data.size() != expected) {
        throw Error(ErrorCode::Shape, "LSI1: data size does not match H*W*C");
    }
    std::vector<std::uint8_t> out(kLsiMagic, kLsiMagic + 4);
    detail::append_le(out, planes.height);
    detail::append_le(out, planes.width);
    detail::append_le(out, static_cast<std::uint32_t>(planes.names.size()));
    for (const auto& name : planes.names) {
        detail::append_le(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
    }
    out.reserve(out.size() + 4 * planes.data.size());
    for (float v : planes.data) {
        detail::append_le(out, v);
    }
    return out;
}

PackedPlanes decode_lsi(const std::vector<std::uint8_t>& bytes, std::size_t& offset) {
    if (offset > bytes.size() || bytes.size() - offset < 16 ||
        !std::equal(kLsiMagic, kLsiMagic + 4, bytes.begin() + static_cast<std::ptrdiff_t>(offset))) {
        throw Error(ErrorCode::MalformedFile, "missing LSI1 magic");
    }
    std::size_t pos = offset + 4;
    auto u32 = [&]() {
        if (bytes.size() - pos < 4) {
            throw Error(ErrorCode::MalformedFile, "truncated LSI1 block");
        }
        const auto v = detail::load_le<std::uint32_t>(bytes.data() + pos);
        pos += 4;
        return v;
    };
    PackedPlanes planes;
    planes.height = u32();
    planes.width = u32();
    const std::uint32_t count = u32();
    planes.names.reserve(count);
    for (std::uint32_t c = 0; c < count; ++c) {
        const std::uint32_t len = u32();
        if (bytes.size() - pos < len) {
            throw Error(ErrorCode::MalformedFile, "truncated LSI1 channel name");
        }
        planes.names.emplace_back(reinterpret_cast<const char*>(bytes.data() + pos), len);
        pos += len;
    }
    const std::size_t values = static_cast<std::size_t>(planes.height) * planes.width * count;
    if ((bytes.size() - pos) / 4 < values) {
        throw Error(ErrorCode::MalformedFile, "truncated LSI1 payload");
    }
    planes.data.resize(values);
    for (std::size_t i = 0; i < values; ++i) {
        planes.data[i] = detail::load_le<float>(bytes.data() + pos + 4 * i);
    }
    offset = pos + 4 * values;
    return planes;
}

void write_lsi(const fs::path& path, const PackedPlanes& planes) {
    write_file_bytes(path, encode_lsi(planes));
}

PackedPlanes read_lsi(const fs::path& path) {
    const auto bytes = read_file_bytes(path);
    std::size_t offset = 0;
    return decode_lsi(bytes, offset);
}

PackedPlanes pack_image(const SphericalImage& img) {
    PackedPlanes planes;
    planes.height = static_cast<std::uint32_t>(img.config.height);
    planes.width = static_cast<std::uint32_t>(img.config.width);
    for (const auto& [name, plane] : img.channels) {
        planes.names.push_back(name);
        planes.data.insert(planes.data.end(), plane.begin(), plane.end());
    }
    return planes;
}

void write_pgm8(const fs::path& path, int height, int width, const std::vector<std::uint8_t>& gray) {
    if (gray.size() != static_cast<std::size_t>(height) * width) {
        throw Error(ErrorCode::Shape, "pgm: sample count mismatch");
    }
    const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), gray.begin(), gray.end());
    write_file_bytes(path, out);
}

void write_pgm16(const fs::path& path, int height, int width, const std::vector<std::uint16_t>& gray) {
    if (gray.size() != static_cast<std::size_t>(height) * width) {
        throw Error(ErrorCode::Shape, "pgm: sample count mismatch");
    }
    const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n65535\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + 2 * gray.size());
    for (std::uint16_t v : gray) {
        out.push_back(static_cast<std::uint8_t>(v >> 8));
        out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    }
    write_file_bytes(path, out);
}

Pgm read_pgm(const fs::path& path) {
    const auto bytes = read_file_bytes(path);
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size() && (std::isspace(bytes[pos]) || bytes[pos] == '#')) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                ++pos;
            }
        }
        std::string t;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
        return t;
    };
    Pgm pgm;
    if (token() != "P5") {
        throw Error(ErrorCode::MalformedFile, path.string() + " is not a binary PGM");
    }
    try {
        pgm.width = std::stoi(token());
        pgm.height = std::stoi(token());
        pgm.maxval = std::stoi(token());
    } catch (const std::exception&) {
        throw Error(ErrorCode::MalformedFile, "bad PGM header " + path.string());
    }
    ++pos;
    const std::size_t count = static_cast<std::size_t>(pgm.width) * pgm.height;
    const std::size_t bps = pgm.maxval > 255 ? 2 : 1;
    if (bytes.size() < pos + bps * count) {
        throw Error(ErrorCode::MalformedFile, "truncated PGM " + path.string());
    }
    pgm.samples.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        pgm.samples[i] = bps == 2 ? static_cast<std::uint16_t>((bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1])
                                  : bytes[pos + i];
    }
    return pgm;
}

namespace {

// Value represented by the PGM maximum (65535) for each channel.
double pgm_scale(const std::string& name) {
    if (name == channel::kIncidence) return std::numbers::pi / 2.0;
    if (name == channel::kLabel) return 65535.0;
    return 1.0;
}

}  // namespace

void export_spherical_image(const fs::path& prefix, const SphericalImage& img) {
    const fs::path lsi_path = fs::path(prefix.string() + ".lsi");
    write_lsi(lsi_path, pack_image(img));

    nlohmann::json sidecar;
    sidecar["format"] = "LSI1";
    sidecar["height"] = img.config.height;
    sidecar["width"] = img.config.width;
    sidecar["fov_up_rad"] = img.config.fov_up;
    sidecar["fov_down_rad"] = img.config.fov_down;
    sidecar["r_max"] = img.config.r_max;
    sidecar["source_points"] = img.source_points;
    sidecar["dropped_out_of_fov"] = img.dropped_out_of_fov;
    sidecar["packed"] = lsi_path.filename().string();
    nlohmann::json channels = nlohmann::json::array();
    for (const auto& [name, plane] : img.channels) {
        const double scale = pgm_scale(name);
        std::vector<std::uint16_t> gray(plane.size());
        for (std::size_t i = 0; i < plane.size(); ++i) {
            const double v = std::clamp(plane[i] / scale, 0.0, 1.0);
            gray[i] = static_cast<std::uint16_t>(std::floor(v * 65535.0 + 0.5));
        }
        const fs::path pgm_path = fs::path(prefix.string() + "_" + name + ".pgm");
        write_pgm16(pgm_path, img.config.height, img.config.width, gray);
        channels.push_back({{"name", name}, {"pgm", pgm_path.filename().string()}, {"scale", scale}});
    }
    sidecar["channels"] = channels;
    std::ofstream out(prefix.string() + ".json");
    if (!out) {
        throw Error(ErrorCode::Io, "cannot write sidecar for " + prefix.string());
    }
    out << sidecar.dump(2) << "\n";
}

}  // namespace lidarsim
