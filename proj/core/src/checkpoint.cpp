#include "lidarsim/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include "byte_io.hpp"
#include "lidarsim/error.hpp"
#include "lidarsim/image_io.hpp"
#include "lidarsim/ingest.hpp"

namespace lidarsim {

namespace {

constexpr char kMagic[] = "LICKPT1";
constexpr std::size_t kMagicLen = 7;

const char* head_name(OutputHead head) { return head == OutputHead::Sigmoid ? "sigmoid" : "linear"; }

nlohmann::json to_json(const ModelDescriptor& d, const std::vector<NamedTensor>& params) {
    nlohmann::json j;
    j["kind"] = d.kind;
    j["in_channels"] = d.generator.in_channels;
    j["base_width"] = d.generator.base_width;
    j["depth"] = d.generator.depth;
    j["max_width_mult"] = d.generator.max_width_mult;
    j["leaky_slope"] = d.generator.leaky_slope;
    j["dropout"] = d.generator.dropout;
    j["head"] = head_name(d.generator.head);
    std::vector<int> widths;
    for (int i = 0; i < d.generator.depth; ++i) {
        widths.push_back(d.generator.base_width * std::min(1 << i, d.generator.max_width_mult));
    }
    j["widths"] = widths;
    if (d.kind == "pix2pix") {
        j["disc_in_channels"] = d.discriminator.in_channels;
        j["disc_base_width"] = d.discriminator.base_width;
        j["disc_layers"] = d.discriminator.n_layers;
    }
    j["combo"] = d.combo;
    j["channel_order"] = d.channel_order;
    j["norm_mean"] = d.norm_mean;
    j["norm_std"] = d.norm_std;
    j["projection"] = {{"height", d.projection.height},
                       {"width", d.projection.width},
                       {"fov_up_rad", d.projection.fov_up},
                       {"fov_down_rad", d.projection.fov_down},
                       {"r_max", d.projection.r_max}};
    j["epoch"] = d.epoch;
    j["val_mse"] = d.val_mse;
    nlohmann::json shapes = nlohmann::json::array();
    for (const auto& [name, t] : params) {
        const ad::Shape& s = t.shape();
        shapes.push_back({{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}});
    }
    j["params"] = shapes;
    return j;
}

ModelDescriptor from_json(const nlohmann::json& j) {
    ModelDescriptor d;
    d.kind = j.at("kind").get<std::string>();
    d.generator.in_channels = j.at("in_channels").get<int>();
    d.generator.base_width = j.at("base_width").get<int>();
    d.generator.depth = j.at("depth").get<int>();
    d.generator.max_width_mult = j.at("max_width_mult").get<int>();
    d.generator.leaky_slope = j.at("leaky_slope").get<float>();
    d.generator.dropout = j.at("dropout").get<float>();
    d.generator.head = j.at("head").get<std::string>() == "sigmoid" ? OutputHead::Sigmoid : OutputHead::Linear;
    if (d.kind == "pix2pix") {
        d.discriminator.in_channels = j.at("disc_in_channels").get<int>();
        d.discriminator.base_width = j.at("disc_base_width").get<int>();
        d.discriminator.n_layers = j.at("disc_layers").get<int>();
    } else if (d.kind != "unet") {
        throw Error(ErrorCode::MalformedFile, "unknown model kind '" + d.kind + "'");
    }
    d.combo = j.at("combo").get<std::string>();
    d.channel_order = j.at("channel_order").get<std::vector<std::string>>();
    d.norm_mean = j.at("norm_mean").get<std::vector<double>>();
    d.norm_std = j.at("norm_std").get<std::vector<double>>();
    const auto& p = j.at("projection");
    d.projection.height = p.at("height").get<int>();
    d.projection.width = p.at("width").get<int>();
    d.projection.fov_up = p.at("fov_up_rad").get<double>();
    d.projection.fov_down = p.at("fov_down_rad").get<double>();
    d.projection.r_max = p.at("r_max").get<double>();
    d.epoch = j.value("epoch", 0);
    d.val_mse = j.value("val_mse", 0.0);
    return d;
}

}  // namespace

const ad::Tensor& Checkpoint::param(const std::string& name) const {
    for (const auto& [n, t] : params) {
        if (n == name) {
            return t;
        }
    }
    throw Error(ErrorCode::MalformedFile, "checkpoint lacks parameter '" + name + "'");
}

std::vector<std::uint8_t> encode_checkpoint(const ModelDescriptor& desc,
                                            const std::vector<NamedTensor>& params) {
    std::vector<std::uint8_t> out(kMagic, kMagic + kMagicLen);
    const std::string text = to_json(desc, params).dump(2);
    detail::append_le(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    detail::append_le(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        const ad::Shape& s = t.shape();
        PackedPlanes block;
        block.height = static_cast<std::uint32_t>(s.n * s.c * s.h);
        block.width = static_cast<std::uint32_t>(s.w);
        block.names = {name};
        block.data.assign(t.data().begin(), t.data().end());
        const auto encoded = encode_lsi(block);
        out.insert(out.end(), encoded.begin(), encoded.end());
    }
    return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < kMagicLen || !std::equal(kMagic, kMagic + kMagicLen, bytes.begin())) {
        throw Error(ErrorCode::MalformedFile, "missing LICKPT1 magic");
    }
    detail::ByteReader reader(bytes);
    reader.read_string(kMagicLen);
    const auto text_len = reader.read<std::uint32_t>();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(reader.read_string(text_len));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedFile, std::string("bad checkpoint descriptor: ") + e.what());
    }
    Checkpoint ckpt;
    std::vector<std::pair<std::string, ad::Shape>> shapes;
    try {
        ckpt.descriptor = from_json(j);
        for (const auto& entry : j.at("params")) {
            const auto dims = entry.at("shape").get<std::vector<int>>();
            if (dims.size() != 4) {
                throw Error(ErrorCode::MalformedFile, "parameter shape must have 4 extents");
            }
            shapes.emplace_back(entry.at("name").get<std::string>(),
                                ad::Shape{dims[0], dims[1], dims[2], dims[3]});
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedFile, std::string("bad checkpoint descriptor: ") + e.what());
    }
    const auto count = reader.read<std::uint32_t>();
    if (count != shapes.size()) {
        throw Error(ErrorCode::MalformedFile, "parameter count disagrees with descriptor");
    }
    std::size_t offset = reader.position();
    for (const auto& [name, shape] : shapes) {
        PackedPlanes block = decode_lsi(bytes, offset);
        if (block.names.size() != 1 || block.names[0] != name || block.data.size() != shape.numel()) {
            throw Error(ErrorCode::MalformedFile, "parameter block '" + name + "' does not match descriptor");
        }
        ckpt.params.emplace_back(name, ad::Tensor::from(shape, std::move(block.data), true));
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const ModelDescriptor& desc,
                     const std::vector<NamedTensor>& params) {
    write_file_bytes(path, encode_checkpoint(desc, params));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file_bytes(path));
}

void validate_combo(const ModelDescriptor& desc, const ModalityCombo& combo) {
    if (ModalityCombo::parse(desc.combo) != combo || desc.channel_order != combo.channel_names()) {
        throw Error(ErrorCode::ModalityUnavailable, "checkpoint trained on combo " + desc.combo +
                                                        ", requested " + combo.name());
    }
}

void restore_parameters(const Checkpoint& ckpt, const std::vector<NamedTensor>& targets,
                        const std::string& prefix) {
    for (const auto& [name, target] : targets) {
        const ad::Tensor& src = ckpt.param(prefix + name);
        if (src.shape() != target.shape()) {
            throw Error(ErrorCode::MalformedFile, "shape mismatch for parameter '" + prefix + name + "'");
        }
        ad::Tensor dst = target;
        std::copy(src.data().begin(), src.data().end(), dst.data().begin());
    }
}

std::vector<NamedTensor> prefixed(const std::vector<NamedTensor>& params, const std::string& prefix) {
    std::vector<NamedTensor> out;
    out.reserve(params.size());
    for (const auto& [name, t] : params) {
        out.emplace_back(prefix + name, t);
    }
    return out;
}

std::vector<NamedTensor> snapshot(const std::vector<NamedTensor>& params) {
    std::vector<NamedTensor> out;
    out.reserve(params.size());
    for (const auto& [name, t] : params) {
        out.emplace_back(name, t.detach());
    }
    return out;
}

}  // namespace lidarsim
