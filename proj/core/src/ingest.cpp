#include "lidarsim/ingest.hpp"

#include <png.h>

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "byte_io.hpp"
#include "lidarsim/error.hpp"

namespace lidarsim {

namespace fs = std::filesystem;
using detail::append_le;
using detail::load_le;

void PointCloud::validate() const {
    const std::size_t n = points.size();
    auto check_len = [n](std::size_t len, const char* name) {
        if (len != n) {
            throw Error(ErrorCode::Shape, std::string(name) + " has " + std::to_string(len) +
                                              " entries for " + std::to_string(n) + " points");
        }
    };
    check_len(intensity.size(), "intensity");
    if (label) check_len(label->size(), "label");
    if (rgb) check_len(rgb->size(), "rgb");
    if (color_mask) check_len(color_mask->size(), "color_mask");
    if (normal) check_len(normal->size(), "normal");
    if (incidence) check_len(incidence->size(), "incidence");
    for (std::size_t i = 0; i < n; ++i) {
        if (!points[i].allFinite() || !(range(i) > 0.0)) {
            throw Error(ErrorCode::InvalidPoint, "point " + std::to_string(i) +
                                                     " is non-finite or at zero range");
        }
        if (!(intensity[i] >= 0.0f && intensity[i] <= 1.0f)) {
            throw Error(ErrorCode::InvalidPoint, "intensity of point " + std::to_string(i) +
                                                     " outside [0, 1]");
        }
        if (normal && std::abs((*normal)[i].cast<double>().norm() - 1.0) > 1e-6) {
            throw Error(ErrorCode::InvalidPoint, "normal of point " + std::to_string(i) +
                                                     " is not unit length");
        }
    }
}

void CameraFrame::validate() const {
    if (height <= 0 || width <= 0 ||
        pixels.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
        throw Error(ErrorCode::Shape, "camera image dimensions do not match pixel count");
    }
    Eigen::FullPivLU<Eigen::Matrix<double, 3, 4>> lu(proj);
    if (lu.rank() < 3) {
        throw Error(ErrorCode::MalformedFile, "projection matrix is not full row rank");
    }
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw Error(ErrorCode::Io, "failed reading " + path.string());
    }
    return bytes;
}

void write_file_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::Io, "cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error(ErrorCode::Io, "failed writing " + path.string());
    }
}

PointCloud decode_point_cloud(const std::vector<std::uint8_t>& bytes, ParseReport* report,
                              float intensity_max) {
    if (bytes.size() % 16 != 0) {
        throw Error(ErrorCode::MalformedFile, "point cloud size " + std::to_string(bytes.size()) +
                                                  " is not a multiple of 16 bytes");
    }
    if (!(intensity_max > 0.0f)) {
        throw Error(ErrorCode::Config, "intensity_max must be positive");
    }
    ParseReport local;
    ParseReport& rep = report ? *report : local;
    rep = ParseReport{};
    rep.records = bytes.size() / 16;

    PointCloud cloud;
    cloud.points.reserve(rep.records);
    cloud.intensity.reserve(rep.records);
    rep.kept.reserve(rep.records);
    for (std::size_t i = 0; i < rep.records; ++i) {
        const std::uint8_t* rec = bytes.data() + i * 16;
        const Vec3f p(load_le<float>(rec), load_le<float>(rec + 4), load_le<float>(rec + 8));
        float intensity = load_le<float>(rec + 12);
        if (!p.allFinite() || !std::isfinite(intensity)) {
            ++rep.dropped_non_finite;
            continue;
        }
        if (!(p.cast<double>().norm() > 0.0)) {
            ++rep.dropped_zero_range;
            continue;
        }
        intensity /= intensity_max;
        if (intensity < 0.0f || intensity > 1.0f) {
            intensity = std::clamp(intensity, 0.0f, 1.0f);
            ++rep.clamped_intensity;
        }
        cloud.points.push_back(p);
        cloud.intensity.push_back(intensity);
        rep.kept.push_back(i);
    }
    return cloud;
}

PointCloud read_point_cloud(const fs::path& path, ParseReport* report, float intensity_max) {
    return decode_point_cloud(read_file_bytes(path), report, intensity_max);
}

std::vector<std::uint8_t> encode_point_cloud(const PointCloud& cloud) {
    std::vector<std::uint8_t> out;
    out.reserve(cloud.size() * 16);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        append_le(out, cloud.points[i].x());
        append_le(out, cloud.points[i].y());
        append_le(out, cloud.points[i].z());
        append_le(out, cloud.intensity[i]);
    }
    return out;
}

void write_point_cloud(const fs::path& path, const PointCloud& cloud) {
    write_file_bytes(path, encode_point_cloud(cloud));
}

std::vector<std::uint16_t> decode_labels(const std::vector<std::uint8_t>& bytes, std::size_t n) {
    if (bytes.size() % 4 != 0 || bytes.size() / 4 != n) {
        throw Error(ErrorCode::LabelMismatch, "label file holds " + std::to_string(bytes.size() / 4) +
                                                  " records, expected " + std::to_string(n));
    }
    std::vector<std::uint16_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<std::uint16_t>(load_le<std::uint32_t>(bytes.data() + 4 * i) & 0xFFFFu);
    }
    return labels;
}

std::vector<std::uint16_t> read_labels(const fs::path& path, std::size_t n) {
    return decode_labels(read_file_bytes(path), n);
}

void write_labels(const fs::path& path, const std::vector<std::uint16_t>& labels) {
    std::vector<std::uint8_t> out;
    out.reserve(labels.size() * 4);
    for (std::uint16_t l : labels) {
        append_le(out, static_cast<std::uint32_t>(l));
    }
    write_file_bytes(path, out);
}

std::vector<std::uint16_t> select_kept(const std::vector<std::uint16_t>& labels,
                                       const ParseReport& report) {
    if (labels.size() != report.records) {
        throw Error(ErrorCode::LabelMismatch, "label count does not match raw record count");
    }
    std::vector<std::uint16_t> out;
    out.reserve(report.kept.size());
    for (std::size_t idx : report.kept) {
        out.push_back(labels[idx]);
    }
    return out;
}

namespace {

// Reads the next whitespace/comment-delimited token of a PNM header.
std::string pnm_token(const std::vector<std::uint8_t>& bytes, std::size_t& pos) {
    std::string tok;
    while (pos < bytes.size()) {
        const char c = static_cast<char>(bytes[pos]);
        if (c == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            ++pos;
        } else {
            break;
        }
    }
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        tok.push_back(static_cast<char>(bytes[pos++]));
    }
    return tok;
}

void read_ppm(const fs::path& path, CameraFrame& cam) {
    const auto bytes = read_file_bytes(path);
    std::size_t pos = 0;
    if (pnm_token(bytes, pos) != "P6") {
        throw Error(ErrorCode::MalformedFile, path.string() + " is not a binary PPM (P6)");
    }
    int width = 0;
    int height = 0;
    int maxval = 0;
    try {
        width = std::stoi(pnm_token(bytes, pos));
        height = std::stoi(pnm_token(bytes, pos));
        maxval = std::stoi(pnm_token(bytes, pos));
    } catch (const std::exception&) {
        throw Error(ErrorCode::MalformedFile, "bad PPM header in " + path.string());
    }
    ++pos;  // single whitespace before raster
    if (width <= 0 || height <= 0 || maxval != 255) {
        throw Error(ErrorCode::MalformedFile, "unsupported PPM (only 8-bit) " + path.string());
    }
    const std::size_t count = static_cast<std::size_t>(width) * height;
    if (bytes.size() < pos + 3 * count) {
        throw Error(ErrorCode::MalformedFile, "truncated PPM raster " + path.string());
    }
    cam.width = width;
    cam.height = height;
    cam.pixels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint8_t* px = bytes.data() + pos + 3 * i;
        cam.pixels[i] = Vec3f(px[0], px[1], px[2]) / 255.0f;
    }
}

void read_png(const fs::path& path, CameraFrame& cam) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
        throw Error(ErrorCode::MalformedFile, "cannot decode PNG " + path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&image);
        throw Error(ErrorCode::MalformedFile, "cannot decode PNG " + path.string() + ": " + image.message);
    }
    cam.width = static_cast<int>(image.width);
    cam.height = static_cast<int>(image.height);
    const std::size_t count = static_cast<std::size_t>(cam.width) * cam.height;
    cam.pixels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        cam.pixels[i] = Vec3f(buffer[3 * i], buffer[3 * i + 1], buffer[3 * i + 2]) / 255.0f;
    }
}

}  // namespace

Eigen::Matrix<double, 3, 4> read_projection_matrix(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open " + path.string());
    }
    Eigen::Matrix<double, 3, 4> proj;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) {
            if (!(in >> proj(r, c))) {
                throw Error(ErrorCode::MalformedFile, "projection file needs 12 numbers: " + path.string());
            }
        }
    }
    return proj;
}

CameraFrame read_camera(const fs::path& image_path, const fs::path& proj_path) {
    CameraFrame cam;
    std::string ext = image_path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") {
        read_png(image_path, cam);
    } else {
        read_ppm(image_path, cam);
    }
    cam.proj = read_projection_matrix(proj_path);
    cam.validate();
    return cam;
}

PointCloud colorize(const PointCloud& cloud, const CameraFrame& cam) {
    if (cloud.empty()) {
        throw Error(ErrorCode::EmptyInput, "colorize: empty cloud");
    }
    PointCloud out = cloud;
    std::vector<Vec3f> rgb(cloud.size(), Vec3f::Zero());
    std::vector<std::uint8_t> mask(cloud.size(), 0);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Eigen::Vector4d ph(cloud.points[i].x(), cloud.points[i].y(), cloud.points[i].z(), 1.0);
        const Eigen::Vector3d q = cam.proj * ph;
        if (!(q.z() > 0.0)) {
            continue;
        }
        const double col = std::floor(q.x() / q.z() + 0.5);
        const double row = std::floor(q.y() / q.z() + 0.5);
        if (col < 0.0 || row < 0.0 || col >= cam.width || row >= cam.height) {
            continue;
        }
        rgb[i] = cam.pixel(static_cast<int>(row), static_cast<int>(col));
        mask[i] = 1;
    }
    out.rgb = std::move(rgb);
    out.color_mask = std::move(mask);
    return out;
}

}  // namespace lidarsim
