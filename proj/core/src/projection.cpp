#include "lidarsim/projection.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "lidarsim/error.hpp"

namespace lidarsim {

void ProjectionConfig::validate() const {
    if (height < 1 || width < 2) {
        throw Error(ErrorCode::Config, "projection grid needs height >= 1 and width >= 2");
    }
    if (!(fov_up > fov_down)) {
        throw Error(ErrorCode::Config, "projection fov_up must exceed fov_down");
    }
    if (!(r_max > 0.0)) {
        throw Error(ErrorCode::Config, "projection r_max must be positive");
    }
}

const std::vector<float>& SphericalImage::channel(const std::string& name) const {
    auto it = channels.find(name);
    if (it == channels.end()) {
        throw Error(ErrorCode::ModalityUnavailable, "channel '" + name + "' not present");
    }
    return it->second;
}

PixelCoord pixel_of(const Vec3f& p, const ProjectionConfig& cfg) {
    const double x = p.x();
    const double y = p.y();
    const double z = p.z();
    const double r = std::sqrt(x * x + y * y + z * z);
    const double azimuth = std::atan2(y, x);
    const double elevation = std::asin(std::clamp(z / r, -1.0, 1.0));
    if (elevation < cfg.fov_down || elevation > cfg.fov_up) {
        return {-1, -1};
    }
    const double span = cfg.fov_up - cfg.fov_down;
    int col = static_cast<int>(std::floor(0.5 * (1.0 - azimuth / std::numbers::pi) * cfg.width));
    int row = static_cast<int>(std::floor((1.0 - (elevation - cfg.fov_down) / span) * cfg.height));
    col = std::clamp(col, 0, cfg.width - 1);
    row = std::clamp(row, 0, cfg.height - 1);
    return {row, col};
}

SphericalImage spherical_project(const PointCloud& cloud, const ProjectionConfig& cfg) {
    cfg.validate();
    if (cloud.empty()) {
        throw Error(ErrorCode::EmptyInput, "spherical_project: empty cloud");
    }
    SphericalImage img;
    img.config = cfg;
    img.source_points = cloud.size();
    const std::size_t pixels = img.pixel_count();
    img.point_index.assign(pixels, -1);
    std::vector<double> best_range(pixels, std::numeric_limits<double>::infinity());

    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const double r = cloud.range(i);
        if (!(r > 0.0) || !cloud.points[i].allFinite()) {
            throw Error(ErrorCode::InvalidPoint, "spherical_project: point " + std::to_string(i) +
                                                     " has zero range or non-finite coordinates");
        }
        const PixelCoord px = pixel_of(cloud.points[i], cfg);
        if (px.row < 0) {
            ++img.dropped_out_of_fov;
            continue;
        }
        const std::size_t idx = static_cast<std::size_t>(px.row) * cfg.width + px.col;
        // Strict comparison: on equal range the earlier (lower) index stays.
        if (r < best_range[idx]) {
            best_range[idx] = r;
            img.point_index[idx] = static_cast<std::int32_t>(i);
        }
    }

    auto plane = [&](const char* name) -> std::vector<float>& {
        return img.channels[name] = std::vector<float>(pixels, 0.0f);
    };
    auto& depth = plane(channel::kDepth);
    auto& mask = plane(channel::kMask);
    auto& intensity = plane(channel::kIntensity);
    std::vector<float>* label = cloud.label ? &plane(channel::kLabel) : nullptr;
    std::vector<float>* incidence = cloud.incidence ? &plane(channel::kIncidence) : nullptr;
    std::vector<float>* red = nullptr;
    std::vector<float>* green = nullptr;
    std::vector<float>* blue = nullptr;
    std::vector<float>* color_mask = nullptr;
    if (cloud.rgb) {
        red = &plane(channel::kRed);
        green = &plane(channel::kGreen);
        blue = &plane(channel::kBlue);
        color_mask = &plane(channel::kColorMask);
    }

    for (std::size_t idx = 0; idx < pixels; ++idx) {
        const std::int32_t pi = img.point_index[idx];
        if (pi < 0) {
            continue;
        }
        depth[idx] = static_cast<float>(std::min(best_range[idx] / cfg.r_max, 1.0));
        mask[idx] = 1.0f;
        intensity[idx] = cloud.intensity[pi];
        if (label) {
            (*label)[idx] = static_cast<float>((*cloud.label)[pi]);
        }
        if (incidence) {
            (*incidence)[idx] = std::clamp((*cloud.incidence)[pi], 0.0f,
                                           static_cast<float>(std::numbers::pi / 2.0));
        }
        if (red) {
            const Vec3f& c = (*cloud.rgb)[pi];
            (*red)[idx] = c.x();
            (*green)[idx] = c.y();
            (*blue)[idx] = c.z();
            (*color_mask)[idx] = cloud.color_mask ? static_cast<float>((*cloud.color_mask)[pi]) : 1.0f;
        }
    }
    return img;
}

std::vector<float> unproject(const SphericalImage& img, const std::vector<float>& pred) {
    if (pred.size() != img.pixel_count() || img.point_index.size() != img.pixel_count()) {
        throw Error(ErrorCode::Shape, "unproject: prediction has " + std::to_string(pred.size()) +
                                          " pixels, image has " + std::to_string(img.pixel_count()));
    }
    std::vector<float> out(img.source_points, -1.0f);
    for (std::size_t idx = 0; idx < pred.size(); ++idx) {
        const std::int32_t pi = img.point_index[idx];
        if (pi >= 0) {
            out[pi] = pred[idx];
        }
    }
    return out;
}

ModalityCombo ModalityCombo::from_bits(unsigned bits) {
    if ((bits & static_cast<unsigned>(Modality::Depth)) == 0 || bits > 15u) {
        throw Error(ErrorCode::Config, "modality combo must include depth (D)");
    }
    ModalityCombo combo;
    combo.bits_ = bits;
    return combo;
}

ModalityCombo ModalityCombo::parse(const std::string& text) {
    unsigned bits = 0;
    std::string token;
    auto flush = [&]() {
        std::string t;
        for (char c : token) {
            if (!std::isspace(static_cast<unsigned char>(c))) {
                t.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
            }
        }
        token.clear();
        if (t == "D") bits |= static_cast<unsigned>(Modality::Depth);
        else if (t == "I") bits |= static_cast<unsigned>(Modality::Incidence);
        else if (t == "L") bits |= static_cast<unsigned>(Modality::Label);
        else if (t == "RGB") bits |= static_cast<unsigned>(Modality::Rgb);
        else throw Error(ErrorCode::Config, "unknown modality '" + t + "' in combo '" + text + "'");
    };
    for (char c : text) {
        if (c == '+' || c == ',') {
            flush();
        } else {
            token.push_back(c);
        }
    }
    flush();
    return from_bits(bits);
}

const std::array<ModalityCombo, 8>& ModalityCombo::all() {
    static const std::array<ModalityCombo, 8> combos = [] {
        constexpr unsigned D = 1, I = 2, L = 4, RGB = 8;
        return std::array<ModalityCombo, 8>{
            from_bits(D),           from_bits(D | I),           from_bits(D | L),
            from_bits(D | L | I),   from_bits(D | RGB),         from_bits(D | RGB | I),
            from_bits(D | RGB | L), from_bits(D | RGB | L | I)};
    }();
    return combos;
}

std::string ModalityCombo::name() const {
    std::string s = "D";
    if (contains(Modality::Rgb)) s += "+RGB";
    if (contains(Modality::Label)) s += "+L";
    if (contains(Modality::Incidence)) s += "+I";
    return s;
}

std::vector<std::string> ModalityCombo::channel_names() const {
    std::vector<std::string> names{channel::kDepth, channel::kMask};
    if (contains(Modality::Incidence)) names.emplace_back(channel::kIncidence);
    if (contains(Modality::Label)) names.emplace_back(channel::kLabel);
    if (contains(Modality::Rgb)) {
        names.emplace_back(channel::kRed);
        names.emplace_back(channel::kGreen);
        names.emplace_back(channel::kBlue);
        names.emplace_back(channel::kColorMask);
    }
    return names;
}

ChannelStack select_channels(const SphericalImage& img, const ModalityCombo& combo) {
    ChannelStack stack;
    stack.names = combo.channel_names();
    stack.height = img.config.height;
    stack.width = img.config.width;
    const std::size_t pixels = img.pixel_count();
    for (const auto& name : stack.names) {
        if (!img.has(name)) {
            throw Error(ErrorCode::ModalityUnavailable,
                        "combo " + combo.name() + " needs channel '" + name + "' which the data lacks");
        }
    }
    stack.data.reserve(stack.names.size() * pixels);
    for (const auto& name : stack.names) {
        const auto& src = img.channel(name);
        if (name == channel::kLabel) {
            for (float v : src) {
                stack.data.push_back(v / 255.0f);
            }
        } else {
            stack.data.insert(stack.data.end(), src.begin(), src.end());
        }
    }
    return stack;
}

}  // namespace lidarsim
