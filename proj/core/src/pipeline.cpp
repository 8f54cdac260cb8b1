#include "lidarsim/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "lidarsim/error.hpp"
#include "lidarsim/geometry.hpp"
#include "lidarsim/ingest.hpp"

namespace lidarsim {

namespace {

std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw Error(ErrorCode::Config, "config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        bad_value(key, value, std::is_integral_v<T> ? "integer" : "number");
    }
    if constexpr (std::is_floating_point_v<T>) {
        if (!std::isfinite(out)) {
            bad_value(key, value, "finite number");
        }
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true" || value == "yes" || value == "on") return true;
    if (value == "0" || value == "false" || value == "no" || value == "off") return false;
    bad_value(key, value, "boolean");
}

void require(bool ok, const std::string& message) {
    if (!ok) {
        throw Error(ErrorCode::Config, message);
    }
}

// Standardized input stacks, targets and masks cached per frame.
struct PreparedFrame {
    std::vector<float> input;
    const std::vector<float>* target = nullptr;
    const std::vector<float>* mask = nullptr;
};

std::vector<float> standardized_stack(const SphericalImage& frame, const ModalityCombo& combo,
                                      const NormStats& norm) {
    ChannelStack stack = select_channels(frame, combo);
    normalize_stack(stack.data, frame.pixel_count(), norm.mean, norm.std);
    return std::move(stack.data);
}

std::vector<float> predict_stack(const UNet& model, const std::vector<float>& input, int channels, int height,
                                 int width) {
    ad::Tensor x = ad::Tensor::from({1, channels, height, width}, input);
    ad::Tensor y = model.forward(x, false);
    return {y.data().begin(), y.data().end()};
}

struct Batcher {
    int channels;
    int height;
    int width;
    const std::vector<PreparedFrame>* prepared;

    Batch operator()(std::span<const std::size_t> frames) const {
        const std::size_t plane = static_cast<std::size_t>(height) * width;
        const int n = static_cast<int>(frames.size());
        std::vector<float> input;
        std::vector<float> target;
        std::vector<float> mask;
        input.reserve(frames.size() * channels * plane);
        target.reserve(frames.size() * plane);
        mask.reserve(frames.size() * plane);
        for (std::size_t f : frames) {
            const PreparedFrame& p = (*prepared)[f];
            input.insert(input.end(), p.input.begin(), p.input.end());
            target.insert(target.end(), p.target->begin(), p.target->end());
            mask.insert(mask.end(), p.mask->begin(), p.mask->end());
        }
        return Batch{ad::Tensor::from({n, channels, height, width}, std::move(input)),
                     ad::Tensor::from({n, 1, height, width}, std::move(target)),
                     ad::Tensor::from({n, 1, height, width}, std::move(mask))};
    }
};

void write_fault_dump(const std::filesystem::path& dir, const TrainConfig& cfg, int epoch, int step,
                      std::span<const std::size_t> frames, const std::vector<MetricRow>& metrics,
                      const std::string& message) {
    if (dir.empty()) {
        return;
    }
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["error"] = message;
    j["epoch"] = epoch;
    j["step"] = step;
    j["batch_frames"] = std::vector<std::size_t>(frames.begin(), frames.end());
    j["config"] = format_train_config(cfg);
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : metrics) {
        rows.push_back({{"epoch", row.epoch}, {"split", row.split}, {"loss", row.loss_name}, {"value", row.value}});
    }
    j["metrics"] = rows;
    std::ofstream out(dir / "fault_dump.json");
    out << j.dump(2) << '\n';
}

}  // namespace

const std::vector<std::string>& train_config_keys() {
    static const std::vector<std::string> keys{
        "arch",          "combo",           "epochs",        "batch_size",      "lr",
        "weight_decay",  "beta1",           "beta2",         "lambda_l1",       "gp_coeff",
        "seed",          "base_width",      "depth",         "max_width_mult",  "dropout",
        "disc_base_width", "disc_layers",   "height",        "width",           "fov_up_deg",
        "fov_down_deg",  "r_max",           "knn_k",         "dataset",         "dataset_name",
        "frame_list",    "intensity_max",   "data_seed",     "synth_frames",    "synth_planes",
        "synth_boxes",   "synth_cylinders", "synth_attenuation", "synth_noise", "synth_rgb",
        "train_size",    "val_size",        "test_size",     "out_dir",         "deterministic",
        "threads"};
    return keys;
}

double TrainConfig::effective_lr() const { return lr.value_or(is_gan() ? 2e-4 : 3e-3); }
double TrainConfig::effective_weight_decay() const { return weight_decay.value_or(is_gan() ? 0.0 : 1e-3); }
double TrainConfig::effective_beta1() const { return beta1.value_or(is_gan() ? 0.5 : 0.9); }

ad::AdamConfig TrainConfig::generator_adam() const {
    return ad::AdamConfig{effective_lr(), effective_beta1(), beta2, 1e-8, effective_weight_decay()};
}

ad::AdamConfig TrainConfig::discriminator_adam() const {
    return ad::AdamConfig{effective_lr(), effective_beta1(), beta2, 1e-8, effective_weight_decay()};
}

UNetConfig TrainConfig::generator_config(int in_channels) const {
    UNetConfig g;
    g.in_channels = in_channels;
    g.base_width = base_width;
    g.depth = depth;
    g.max_width_mult = max_width_mult;
    g.dropout = static_cast<float>(dropout);
    g.head = is_gan() ? OutputHead::Sigmoid : OutputHead::Linear;
    return g;
}

PatchGanConfig TrainConfig::discriminator_config(int in_channels) const {
    PatchGanConfig d;
    d.in_channels = in_channels + 1;
    d.base_width = disc_base_width;
    d.n_layers = disc_layers;
    return d;
}

ModalityCombo TrainConfig::modality_combo() const { return ModalityCombo::parse(combo); }

void TrainConfig::validate() const {
    require(arch == "unet" || arch == "pix2pix", "arch must be 'unet' or 'pix2pix', got '" + arch + "'");
    modality_combo();
    require(epochs >= 1, "epochs must be >= 1");
    require(batch_size >= 1, "batch_size must be >= 1");
    generator_adam().validate();
    require(lambda_l1 >= 0.0 && gp_coeff >= 0.0, "lambda_l1 and gp_coeff must be >= 0");
    require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
    require(knn_k >= 1, "knn_k must be >= 1");
    require(dataset == "synth" || dataset == "list", "dataset must be 'synth' or 'list'");
    require(dataset != "list" || !frame_list.empty(), "dataset=list needs frame_list");
    require(intensity_max > 0.0, "intensity_max must be positive");
    require(synth_frames >= 1, "synth_frames must be >= 1");
    require(train_size >= 1 && val_size >= 1 && test_size >= 0, "split needs train_size >= 1, val_size >= 1");
    require(threads >= 1, "threads must be >= 1");
    projection.validate();
    synth.validate();
    generator_config(static_cast<int>(modality_combo().channel_count())).validate();
    const int stride = 1 << depth;
    require(projection.height % stride == 0 && projection.width % stride == 0,
            "grid " + std::to_string(projection.height) + "x" + std::to_string(projection.width) +
                " is not divisible by 2^depth = " + std::to_string(stride));
    if (is_gan()) {
        discriminator_config(1).validate();
    }
}

void apply_setting(TrainConfig& cfg, const std::string& raw_key, const std::string& raw_value) {
    const std::string key = trim(raw_key);
    const std::string value = trim(raw_value);
    auto as_int = [&] { return parse_number<int>(key, value); };
    auto as_double = [&] { return parse_number<double>(key, value); };
    auto as_u64 = [&] { return parse_number<std::uint64_t>(key, value); };

    if (key == "arch") cfg.arch = value;
    else if (key == "combo") cfg.combo = value;
    else if (key == "epochs") cfg.epochs = as_int();
    else if (key == "batch_size") cfg.batch_size = as_int();
    else if (key == "lr") cfg.lr = as_double();
    else if (key == "weight_decay") cfg.weight_decay = as_double();
    else if (key == "beta1") cfg.beta1 = as_double();
    else if (key == "beta2") cfg.beta2 = as_double();
    else if (key == "lambda_l1") cfg.lambda_l1 = as_double();
    else if (key == "gp_coeff") cfg.gp_coeff = as_double();
    else if (key == "seed") cfg.seed = as_u64();
    else if (key == "base_width") cfg.base_width = as_int();
    else if (key == "depth") cfg.depth = as_int();
    else if (key == "max_width_mult") cfg.max_width_mult = as_int();
    else if (key == "dropout") cfg.dropout = as_double();
    else if (key == "disc_base_width") cfg.disc_base_width = as_int();
    else if (key == "disc_layers") cfg.disc_layers = as_int();
    else if (key == "height") cfg.projection.height = as_int();
    else if (key == "width") cfg.projection.width = as_int();
    else if (key == "fov_up_deg") cfg.projection.fov_up = deg2rad(as_double());
    else if (key == "fov_down_deg") cfg.projection.fov_down = deg2rad(as_double());
    else if (key == "r_max") cfg.projection.r_max = as_double();
    else if (key == "knn_k") cfg.knn_k = as_int();
    else if (key == "dataset") cfg.dataset = value;
    else if (key == "dataset_name") cfg.dataset_name = value;
    else if (key == "frame_list") cfg.frame_list = value;
    else if (key == "intensity_max") cfg.intensity_max = as_double();
    else if (key == "data_seed") cfg.data_seed = as_u64();
    else if (key == "synth_frames") cfg.synth_frames = as_int();
    else if (key == "synth_planes") cfg.synth.n_planes = as_int();
    else if (key == "synth_boxes") cfg.synth.n_boxes = as_int();
    else if (key == "synth_cylinders") cfg.synth.n_cylinders = as_int();
    else if (key == "synth_attenuation") cfg.synth.attenuation = as_double();
    else if (key == "synth_noise") cfg.synth.noise_sigma = as_double();
    else if (key == "synth_rgb") cfg.synth.with_rgb = parse_bool(key, value);
    else if (key == "train_size") cfg.train_size = as_int();
    else if (key == "val_size") cfg.val_size = as_int();
    else if (key == "test_size") cfg.test_size = as_int();
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "deterministic") cfg.deterministic = parse_bool(key, value);
    else if (key == "threads") cfg.threads = as_int();
    else throw Error(ErrorCode::Config, "unknown config key '" + key + "'");
}

TrainConfig parse_train_config(const std::string& text, TrainConfig base) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.resize(hash);
        }
        if (trim(line).empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::Config, "config line " + std::to_string(line_no) + ": expected key = value");
        }
        apply_setting(base, line.substr(0, eq), line.substr(eq + 1));
    }
    return base;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Config, "cannot read config file " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    TrainConfig cfg = parse_train_config(ss.str(), std::move(base));
    // Relative dataset paths are taken relative to the config file.
    if (!cfg.frame_list.empty() && cfg.frame_list.is_relative()) {
        cfg.frame_list = path.parent_path() / cfg.frame_list;
    }
    return cfg;
}

std::string format_train_config(const TrainConfig& cfg) {
    std::ostringstream out;
    out << std::setprecision(17);
    auto rad2deg = [](double r) { return r * 180.0 / std::numbers::pi; };
    out << "arch = " << cfg.arch << '\n'
        << "combo = " << cfg.combo << '\n'
        << "epochs = " << cfg.epochs << '\n'
        << "batch_size = " << cfg.batch_size << '\n'
        << "lr = " << cfg.effective_lr() << '\n'
        << "weight_decay = " << cfg.effective_weight_decay() << '\n'
        << "beta1 = " << cfg.effective_beta1() << '\n'
        << "beta2 = " << cfg.beta2 << '\n'
        << "lambda_l1 = " << cfg.lambda_l1 << '\n'
        << "gp_coeff = " << cfg.gp_coeff << '\n'
        << "seed = " << cfg.seed << '\n'
        << "base_width = " << cfg.base_width << '\n'
        << "depth = " << cfg.depth << '\n'
        << "max_width_mult = " << cfg.max_width_mult << '\n'
        << "dropout = " << cfg.dropout << '\n'
        << "disc_base_width = " << cfg.disc_base_width << '\n'
        << "disc_layers = " << cfg.disc_layers << '\n'
        << "height = " << cfg.projection.height << '\n'
        << "width = " << cfg.projection.width << '\n'
        << "fov_up_deg = " << rad2deg(cfg.projection.fov_up) << '\n'
        << "fov_down_deg = " << rad2deg(cfg.projection.fov_down) << '\n'
        << "r_max = " << cfg.projection.r_max << '\n'
        << "knn_k = " << cfg.knn_k << '\n'
        << "dataset = " << cfg.dataset << '\n'
        << "dataset_name = " << cfg.dataset_name << '\n'
        << "frame_list =";
    if (!cfg.frame_list.empty()) {
        out << ' ' << std::filesystem::absolute(cfg.frame_list).string();
    }
    out << '\n'
        << "intensity_max = " << cfg.intensity_max << '\n'
        << "data_seed = " << cfg.data_seed << '\n'
        << "synth_frames = " << cfg.synth_frames << '\n'
        << "synth_planes = " << cfg.synth.n_planes << '\n'
        << "synth_boxes = " << cfg.synth.n_boxes << '\n'
        << "synth_cylinders = " << cfg.synth.n_cylinders << '\n'
        << "synth_attenuation = " << cfg.synth.attenuation << '\n'
        << "synth_noise = " << cfg.synth.noise_sigma << '\n'
        << "synth_rgb = " << (cfg.synth.with_rgb ? "true" : "false") << '\n'
        << "train_size = " << cfg.train_size << '\n'
        << "val_size = " << cfg.val_size << '\n'
        << "test_size = " << cfg.test_size << '\n'
        << "out_dir = " << cfg.out_dir.string() << '\n'
        << "deterministic = " << (cfg.deterministic ? "true" : "false") << '\n'
        << "threads = " << cfg.threads << '\n';
    return out.str();
}

std::uint64_t synth_frame_seed(const TrainConfig& cfg, std::size_t index) {
    return derive_seed(cfg.data_seed, index);
}

SphericalImage synth_frame(std::uint64_t seed, const TrainConfig& cfg) {
    SynthScene scene = synth_scene(seed, cfg.synth, cfg.projection);
    attach_incidence(scene.cloud, cfg.knn_k);
    return spherical_project(scene.cloud, cfg.projection);
}

std::vector<FrameSource> read_frame_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot read frame list " + path.string());
    }
    const std::filesystem::path base = path.parent_path();
    auto resolve = [&base](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_relative() ? base / fp : fp;
    };
    std::vector<FrameSource> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.resize(hash);
        }
        std::istringstream tokens(line);
        std::string token;
        FrameSource src;
        bool any = false;
        while (tokens >> token) {
            any = true;
            const auto eq = token.find('=');
            const std::string key = token.substr(0, eq);
            const std::string value = eq == std::string::npos ? std::string() : token.substr(eq + 1);
            if (value.empty()) {
                throw Error(ErrorCode::Config, "frame list line " + std::to_string(line_no) + ": bad token '" +
                                                   token + "'");
            }
            if (key == "cloud") src.cloud = resolve(value);
            else if (key == "labels") src.labels = resolve(value);
            else if (key == "image") src.image = resolve(value);
            else if (key == "proj") src.projection = resolve(value);
            else throw Error(ErrorCode::Config, "frame list line " + std::to_string(line_no) +
                                                    ": unknown key '" + key + "'");
        }
        if (!any) {
            continue;
        }
        if (src.cloud.empty() || src.image.has_value() != src.projection.has_value()) {
            throw Error(ErrorCode::Config, "frame list line " + std::to_string(line_no) +
                                               ": needs cloud=, and image= together with proj=");
        }
        out.push_back(std::move(src));
    }
    return out;
}

SphericalImage load_frame(const FrameSource& src, const TrainConfig& cfg) {
    ParseReport report;
    PointCloud cloud = read_point_cloud(src.cloud, &report, static_cast<float>(cfg.intensity_max));
    if (src.labels) {
        cloud.label = select_kept(read_labels(*src.labels, report.records), report);
    }
    if (src.image) {
        cloud = colorize(cloud, read_camera(*src.image, *src.projection));
    }
    attach_incidence(cloud, cfg.knn_k);
    return spherical_project(cloud, cfg.projection);
}

Dataset build_dataset(const TrainConfig& cfg) {
    std::vector<FrameSource> sources;
    std::size_t count = 0;
    if (cfg.dataset == "list") {
        sources = read_frame_list(cfg.frame_list);
        count = sources.size();
    } else {
        count = static_cast<std::size_t>(cfg.synth_frames);
    }
    if (count == 0) {
        throw Error(ErrorCode::EmptyInput, "dataset has no frames");
    }
    auto make = [&](std::size_t i) {
        return cfg.dataset == "list" ? load_frame(sources[i], cfg) : synth_frame(synth_frame_seed(cfg, i), cfg);
    };

    Dataset data(count);
    const int workers = cfg.deterministic ? 1 : std::min<int>(cfg.threads, static_cast<int>(count));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            data[i] = make(i);
        }
        return data;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    data[i] = make(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next = count;
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
    return data;
}

DatasetSplit split_dataset(std::size_t frame_count, const SplitSizes& sizes, std::uint64_t seed) {
    const std::size_t requested = sizes.train + sizes.val + sizes.test;
    if (requested > frame_count) {
        throw Error(ErrorCode::Config, "split asks for " + std::to_string(requested) + " frames but only " +
                                           std::to_string(frame_count) + " exist");
    }
    std::vector<std::size_t> order(frame_count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(seed, 0x5911));
    // Fisher-Yates with an explicit index draw keeps the split identical across standard libraries.
    for (std::size_t i = frame_count; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    DatasetSplit split;
    auto take = [&order](std::size_t begin, std::size_t n) {
        return std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                        order.begin() + static_cast<std::ptrdiff_t>(begin + n));
    };
    split.train = take(0, sizes.train);
    split.val = take(sizes.train, sizes.val);
    split.test = take(sizes.train + sizes.val, sizes.test);
    return split;
}

NormStats compute_norm_stats(const Dataset& data, const std::vector<std::size_t>& frames,
                             const ModalityCombo& combo) {
    NormStats stats;
    stats.channels = combo.channel_names();
    const std::size_t c = stats.channels.size();
    std::vector<double> sum(c, 0.0);
    std::vector<double> sum_sq(c, 0.0);
    std::size_t count = 0;
    for (std::size_t f : frames) {
        const ChannelStack stack = select_channels(data.at(f), combo);
        const std::size_t plane = data[f].pixel_count();
        for (std::size_t ch = 0; ch < c; ++ch) {
            const float* p = stack.data.data() + ch * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                sum[ch] += p[i];
                sum_sq[ch] += static_cast<double>(p[i]) * p[i];
            }
        }
        count += plane;
    }
    if (count == 0) {
        throw Error(ErrorCode::EmptyInput, "normalization statistics need at least one frame");
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double mean = sum[ch] / count;
        const double var = std::max(0.0, sum_sq[ch] / count - mean * mean);
        const double sd = std::sqrt(var);
        stats.mean.push_back(mean);
        stats.std.push_back(sd > 1e-6 ? sd : 1.0);
    }
    return stats;
}

void normalize_stack(std::vector<float>& stack, std::size_t plane, const std::vector<double>& mean,
                     const std::vector<double>& std) {
    if (mean.size() != std.size() || stack.size() != mean.size() * plane) {
        throw Error(ErrorCode::Shape, "normalize_stack: " + std::to_string(stack.size()) + " values for " +
                                          std::to_string(mean.size()) + " channels of " +
                                          std::to_string(plane) + " pixels");
    }
    for (std::size_t ch = 0; ch < mean.size(); ++ch) {
        const float m = static_cast<float>(mean[ch]);
        const float inv = static_cast<float>(1.0 / std[ch]);
        float* p = stack.data() + ch * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            p[i] = (p[i] - m) * inv;
        }
    }
}

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& frames, const ModalityCombo& combo,
                 const NormStats& norm) {
    if (frames.empty()) {
        throw Error(ErrorCode::EmptyInput, "make_batch: no frames");
    }
    const ProjectionConfig& grid = data.at(frames.front()).config;
    std::vector<PreparedFrame> prepared(data.size());
    for (std::size_t f : frames) {
        const SphericalImage& img = data.at(f);
        if (img.config.height != grid.height || img.config.width != grid.width) {
            throw Error(ErrorCode::Shape, "make_batch: frames have different grid sizes");
        }
        prepared[f] = {standardized_stack(img, combo, norm), &img.channel(channel::kIntensity),
                       &img.channel(channel::kMask)};
    }
    Batcher batcher{static_cast<int>(combo.channel_count()), grid.height, grid.width, &prepared};
    return batcher(frames);
}

std::vector<float> predict_frame(const UNet& model, const SphericalImage& frame, const ModalityCombo& combo,
                                 const NormStats& norm) {
    return predict_stack(model, standardized_stack(frame, combo, norm), static_cast<int>(combo.channel_count()),
                         frame.config.height, frame.config.width);
}

double frame_masked_mse(const std::vector<float>& pred, const SphericalImage& frame) {
    const auto& target = frame.channel(channel::kIntensity);
    const auto& mask = frame.channel(channel::kMask);
    if (pred.size() != target.size()) {
        throw Error(ErrorCode::Shape, "prediction has " + std::to_string(pred.size()) + " pixels, frame has " +
                                          std::to_string(target.size()));
    }
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(target[i]) - pred[i];
        num += mask[i] * d * d;
        den += mask[i];
    }
    return den > 0.0 ? num / den : 0.0;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
    std::ofstream out(path);
    if (!out) {
        throw Error(ErrorCode::Io, "cannot write " + path.string());
    }
    out << "epoch,split,loss_name,value\n" << std::setprecision(9);
    for (const auto& row : rows) {
        out << row.epoch << ',' << row.split << ',' << row.loss_name << ',' << row.value << '\n';
    }
}

TrainResult train(const TrainConfig& cfg, const Dataset& data, const DatasetSplit& split,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    const ModalityCombo combo = cfg.modality_combo();
    if (split.train.empty() || split.val.empty()) {
        throw Error(ErrorCode::Config, "training needs non-empty train and validation splits");
    }
    const ProjectionConfig& grid = data.at(split.train.front()).config;
    for (const auto* part : {&split.train, &split.val}) {
        for (std::size_t f : *part) {
            const SphericalImage& img = data.at(f);
            if (img.config.height != grid.height || img.config.width != grid.width) {
                throw Error(ErrorCode::Shape, "all frames must share one grid size");
            }
            select_channels(img, combo);  // ModalityUnavailable when the data lacks a channel
        }
    }
    const int channels = static_cast<int>(combo.channel_count());
    const NormStats norm = compute_norm_stats(data, split.train, combo);

    std::vector<PreparedFrame> prepared(data.size());
    for (const auto* part : {&split.train, &split.val}) {
        for (std::size_t f : *part) {
            prepared[f] = {standardized_stack(data[f], combo, norm), &data[f].channel(channel::kIntensity),
                           &data[f].channel(channel::kMask)};
        }
    }
    const Batcher batcher{channels, grid.height, grid.width, &prepared};

    UNet gen(cfg.generator_config(channels), derive_seed(cfg.seed, 1));
    gen.check_input(grid.height, grid.width);
    std::optional<PatchDiscriminator> disc;
    if (cfg.is_gan()) {
        disc.emplace(cfg.discriminator_config(channels), derive_seed(cfg.seed, 2));
    }
    ad::Adam gen_opt(gen.parameter_tensors(), cfg.generator_adam());
    std::optional<ad::Adam> disc_opt;
    if (disc) {
        disc_opt.emplace(disc->parameter_tensors(), cfg.discriminator_adam());
    }
    std::mt19937_64 noise_rng(derive_seed(cfg.seed, 3));
    const TrainObjective objective{cfg.is_gan() ? TrainObjective::Kind::Pix2Pix : TrainObjective::Kind::MaskedL2,
                                   cfg.lambda_l1, cfg.gp_coeff};

    auto all_params = [&] {
        if (!disc) {
            return gen.parameters();
        }
        auto params = prefixed(gen.parameters(), "gen.");
        auto dp = prefixed(disc->parameters(), "disc.");
        params.insert(params.end(), dp.begin(), dp.end());
        return params;
    };
    auto describe = [&](int epoch, double val_mse) {
        ModelDescriptor d;
        d.kind = cfg.arch;
        d.generator = gen.config();
        if (disc) {
            d.discriminator = disc->config();
        }
        d.combo = combo.name();
        d.channel_order = norm.channels;
        d.norm_mean = norm.mean;
        d.norm_std = norm.std;
        d.projection = grid;
        d.epoch = epoch;
        d.val_mse = val_mse;
        return d;
    };

    TrainResult result;
    result.best_val_mse = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> order = split.train;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::sort(order.begin(), order.end());
        std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng() % i)]);
        }

        std::map<std::string, double> sums;
        int steps = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            const std::span<const std::size_t> frames(order.data() + begin, end - begin);
            try {
                Batch batch = batcher(frames);
                if (disc) {
                    const Pix2PixLogs logs = pix2pix_step(gen, *disc, gen_opt, *disc_opt, batch.input,
                                                          batch.target, batch.mask, objective, noise_rng);
                    sums["g_loss"] += logs.g_loss;
                    sums["g_adv"] += logs.g_adv;
                    sums["g_l1"] += logs.g_l1;
                    sums["d_loss"] += logs.d_loss;
                    sums["d_real_bce"] += logs.d_real_bce;
                    sums["d_fake_bce"] += logs.d_fake_bce;
                    sums["r1"] += logs.r1;
                } else {
                    gen_opt.zero_grad();
                    ad::Tensor loss = unet_loss(gen, batch.input, batch.target, batch.mask, true, &noise_rng);
                    loss.backward();
                    gen_opt.step();
                    sums["masked_mse"] += loss.item();
                }
            } catch (const Error& e) {
                if (e.code() == ErrorCode::TrainingFault) {
                    write_fault_dump(cfg.out_dir, cfg, epoch, steps, frames, result.metrics, e.what());
                    throw Error(ErrorCode::TrainingFault,
                                std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", step " +
                                    std::to_string(steps) + ")");
                }
                throw;
            }
            ++steps;
        }

        std::vector<MetricRow> rows;
        for (const auto& [name, total] : sums) {
            rows.push_back({epoch, "train", name, total / steps});
        }
        double val_sum = 0.0;
        for (std::size_t f : split.val) {
            val_sum += frame_masked_mse(predict_stack(gen, prepared[f].input, channels, grid.height, grid.width),
                                        data[f]);
        }
        const double val_mse = val_sum / static_cast<double>(split.val.size());
        if (!std::isfinite(val_mse)) {
            write_fault_dump(cfg.out_dir, cfg, epoch, steps, {}, result.metrics, "non-finite validation MSE");
            throw Error(ErrorCode::TrainingFault, "non-finite validation MSE at epoch " + std::to_string(epoch));
        }
        rows.push_back({epoch, "val", "masked_mse", val_mse});
        result.metrics.insert(result.metrics.end(), rows.begin(), rows.end());
        if (val_mse < result.best_val_mse) {
            result.best_val_mse = val_mse;
            result.best_epoch = epoch;
            result.best_params = snapshot(all_params());
            result.best_descriptor = describe(epoch, val_mse);
        }
        result.final_val_mse = val_mse;
        if (on_epoch) {
            on_epoch(epoch, rows);
        }
    }
    result.final_params = snapshot(all_params());
    result.final_descriptor = describe(cfg.epochs, result.final_val_mse);
    return result;
}

TrainArtifacts train(const TrainConfig& cfg) {
    cfg.validate();
    const Dataset data = build_dataset(cfg);
    const DatasetSplit split = split_dataset(
        data.size(),
        SplitSizes{static_cast<std::size_t>(cfg.train_size), static_cast<std::size_t>(cfg.val_size),
                   static_cast<std::size_t>(cfg.test_size)},
        cfg.data_seed);
    std::filesystem::create_directories(cfg.out_dir);
    {
        std::ofstream out(cfg.out_dir / "config.txt");
        out << format_train_config(cfg);
    }
    TrainArtifacts artifacts;
    artifacts.metrics_csv = cfg.out_dir / "metrics.csv";
    std::vector<MetricRow> so_far;
    artifacts.result = train(cfg, data, split, [&](int, const std::vector<MetricRow>& rows) {
        so_far.insert(so_far.end(), rows.begin(), rows.end());
        write_metrics_csv(artifacts.metrics_csv, so_far);
    });
    artifacts.best_checkpoint = cfg.out_dir / "best.ckpt";
    artifacts.final_checkpoint = cfg.out_dir / "final.ckpt";
    save_checkpoint(artifacts.best_checkpoint, artifacts.result.best_descriptor, artifacts.result.best_params);
    save_checkpoint(artifacts.final_checkpoint, artifacts.result.final_descriptor, artifacts.result.final_params);
    write_metrics_csv(artifacts.metrics_csv, artifacts.result.metrics);
    return artifacts;
}

}  // namespace lidarsim
