#include "lidarsim/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>
#include <tuple>

#include "lidarsim/error.hpp"
#include "lidarsim/image_io.hpp"

namespace lidarsim {

namespace {

int combo_rank(const std::string& name) {
    const auto& all = ModalityCombo::all();
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (all[i].name() == name) {
            return static_cast<int>(i);
        }
    }
    return static_cast<int>(all.size());
}

std::string format_mse(const std::optional<double>& mse) {
    if (!mse) {
        return "-";
    }
    std::ostringstream s;
    s << std::fixed << std::setprecision(6) << *mse;
    return s.str();
}

// Runs `work(begin, end, slot)` over contiguous frame chunks, one per thread,
// so that merging the slots in order reproduces the sequential result.
template <typename Work>
void for_chunks(std::size_t n, int threads, Work&& work) {
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
    if (workers == 1) {
        work(std::size_t{0}, n, std::size_t{0});
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = n * w / workers;
        const std::size_t end = n * (w + 1) / workers;
        pool.emplace_back([&, begin, end, w] {
            try {
                work(begin, end, w);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace

CheckpointPredictor::CheckpointPredictor(const Checkpoint& ckpt)
    : desc_(ckpt.descriptor), combo_(ModalityCombo::parse(ckpt.descriptor.combo)) {
    norm_.channels = desc_.channel_order;
    norm_.mean = desc_.norm_mean;
    norm_.std = desc_.norm_std;
    if (norm_.channels != combo_.channel_names() || norm_.mean.size() != norm_.channels.size() ||
        norm_.std.size() != norm_.channels.size()) {
        throw Error(ErrorCode::MalformedFile, "checkpoint normalization does not match combo " + combo_.name());
    }
    model_ = std::make_unique<UNet>(desc_.generator, 0);
    restore_parameters(ckpt, model_->parameters(), desc_.kind == "pix2pix" ? "gen." : "");
}

std::vector<float> CheckpointPredictor::predict(const SphericalImage& frame) const {
    if (frame.config.height != desc_.projection.height || frame.config.width != desc_.projection.width) {
        throw Error(ErrorCode::Shape, "frame grid " + std::to_string(frame.config.height) + "x" +
                                          std::to_string(frame.config.width) + " differs from the checkpoint's");
    }
    return predict_frame(*model_, frame, combo_, norm_);
}

std::vector<float> OraclePredictor::predict(const SphericalImage& frame) const {
    return frame.channel(channel::kIntensity);
}

double eval_mse(const Predictor& predictor, const Dataset& data, const std::vector<std::size_t>& frames) {
    if (frames.empty()) {
        throw Error(ErrorCode::EmptyInput, "eval_mse: no frames");
    }
    double total = 0.0;
    for (std::size_t f : frames) {
        total += frame_masked_mse(predictor.predict(data.at(f)), data.at(f));
    }
    return total / static_cast<double>(frames.size());
}

std::vector<AblationRow> ablation_matrix(const std::vector<AblationRow>& measured) {
    std::map<std::pair<std::string, std::string>, std::map<int, AblationRow>> groups;
    for (const auto& row : measured) {
        const AblationRow normalized{row.architecture, row.dataset, ModalityCombo::parse(row.combo).name(), row.mse};
        groups[{row.architecture, row.dataset}][combo_rank(normalized.combo)] = normalized;
    }
    std::vector<AblationRow> out;
    for (auto& [key, by_combo] : groups) {
        for (const auto& combo : ModalityCombo::all()) {
            auto it = by_combo.find(combo_rank(combo.name()));
            out.push_back(it != by_combo.end() ? it->second
                                               : AblationRow{key.first, key.second, combo.name(), std::nullopt});
        }
    }
    return out;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
    out << "architecture,dataset,combo,mse\n";
    for (const auto& row : rows) {
        out << row.architecture << ',' << row.dataset << ',' << row.combo << ',' << format_mse(row.mse) << '\n';
    }
}

void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows) {
    out << "architecture,dataset";
    for (const auto& combo : ModalityCombo::all()) {
        out << ',' << combo.name();
    }
    out << '\n';
    std::map<std::pair<std::string, std::string>, std::map<int, std::optional<double>>> groups;
    for (const auto& row : rows) {
        groups[{row.architecture, row.dataset}][combo_rank(row.combo)] = row.mse;
    }
    for (const auto& [key, cells] : groups) {
        out << key.first << ',' << key.second;
        for (std::size_t i = 0; i < ModalityCombo::all().size(); ++i) {
            auto it = cells.find(static_cast<int>(i));
            out << ',' << format_mse(it != cells.end() ? it->second : std::nullopt);
        }
        out << '\n';
    }
}

Histogram::Histogram(int bins, double lo_, double hi_) : lo(lo_), hi(hi_) {
    if (bins < 2 || !(hi_ > lo_)) {
        throw Error(ErrorCode::Config, "histogram needs >= 2 bins and hi > lo");
    }
    counts.assign(static_cast<std::size_t>(bins), 0);
}

double Histogram::bin_low(int i) const { return lo + (hi - lo) * i / bins(); }
double Histogram::bin_high(int i) const { return lo + (hi - lo) * (i + 1) / bins(); }

int Histogram::bin_of(double value) const {
    const double pos = std::floor((value - lo) / (hi - lo) * bins());
    if (!(pos >= 0.0)) {
        return 0;
    }
    return static_cast<int>(std::min(pos, static_cast<double>(bins() - 1)));
}

void Histogram::merge(const Histogram& other) {
    if (other.counts.size() != counts.size() || other.lo != lo || other.hi != hi) {
        throw Error(ErrorCode::Shape, "histogram merge: incompatible binning");
    }
    for (std::size_t i = 0; i < counts.size(); ++i) {
        counts[i] += other.counts[i];
    }
}

std::uint64_t Histogram::total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
}

void accumulate_errors(Histogram& hist, const std::vector<float>& pred, const SphericalImage& frame) {
    const auto& target = frame.channel(channel::kIntensity);
    const auto& mask = frame.channel(channel::kMask);
    if (pred.size() != target.size()) {
        throw Error(ErrorCode::Shape, "histogram: prediction size does not match the frame");
    }
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask[i] != 0.0f) {
            hist.add(static_cast<double>(target[i]) - static_cast<double>(pred[i]));
        }
    }
}

Histogram error_histogram(const Predictor& predictor, const Dataset& data, const std::vector<std::size_t>& frames,
                          int bins, int threads) {
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, frames.size()));
    std::vector<Histogram> partial(workers, Histogram(bins));
    for_chunks(frames.size(), threads, [&](std::size_t begin, std::size_t end, std::size_t slot) {
        for (std::size_t i = begin; i < end; ++i) {
            const SphericalImage& frame = data.at(frames[i]);
            accumulate_errors(partial[slot], predictor.predict(frame), frame);
        }
    });
    Histogram out(bins);
    for (const auto& h : partial) {
        out.merge(h);
    }
    return out;
}

void write_histogram_csv(std::ostream& out, const Histogram& hist) {
    out << "bin_low,bin_high,count\n" << std::setprecision(9);
    for (int i = 0; i < hist.bins(); ++i) {
        out << hist.bin_low(i) << ',' << hist.bin_high(i) << ',' << hist.counts[static_cast<std::size_t>(i)] << '\n';
    }
}

Heatmap::Heatmap(int h, int w) : height(h), width(w) {
    const std::size_t n = static_cast<std::size_t>(h) * w;
    sum_sq.assign(n, 0.0);
    count.assign(n, 0);
}

void Heatmap::add(const std::vector<float>& pred, const SphericalImage& frame) {
    if (frame.config.height != height || frame.config.width != width) {
        throw Error(ErrorCode::Shape, "heatmap: frame grid " + std::to_string(frame.config.height) + "x" +
                                          std::to_string(frame.config.width) + " differs from " +
                                          std::to_string(height) + "x" + std::to_string(width));
    }
    const auto& target = frame.channel(channel::kIntensity);
    const auto& mask = frame.channel(channel::kMask);
    if (pred.size() != target.size()) {
        throw Error(ErrorCode::Shape, "heatmap: prediction size does not match the frame");
    }
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask[i] != 0.0f) {
            const double d = static_cast<double>(target[i]) - static_cast<double>(pred[i]);
            sum_sq[i] += d * d;
            ++count[i];
        }
    }
    ++frames;
}

void Heatmap::merge(const Heatmap& other) {
    if (other.height != height || other.width != width) {
        throw Error(ErrorCode::Shape, "heatmap merge: grid mismatch");
    }
    for (std::size_t i = 0; i < sum_sq.size(); ++i) {
        sum_sq[i] += other.sum_sq[i];
        count[i] += other.count[i];
    }
    frames += other.frames;
}

std::vector<double> Heatmap::mean() const {
    std::vector<double> out(sum_sq.size(), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (count[i] > 0) {
            out[i] = sum_sq[i] / count[i];
        }
    }
    return out;
}

Heatmap error_heatmap(const Predictor& predictor, const Dataset& data, const std::vector<std::size_t>& frames,
                      int threads) {
    if (frames.empty()) {
        throw Error(ErrorCode::EmptyInput, "error_heatmap: no frames");
    }
    const ProjectionConfig& grid = data.at(frames.front()).config;
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, frames.size()));
    std::vector<Heatmap> partial(workers, Heatmap(grid.height, grid.width));
    for_chunks(frames.size(), threads, [&](std::size_t begin, std::size_t end, std::size_t slot) {
        for (std::size_t i = begin; i < end; ++i) {
            const SphericalImage& frame = data.at(frames[i]);
            partial[slot].add(predictor.predict(frame), frame);
        }
    });
    Heatmap out(grid.height, grid.width);
    for (const auto& h : partial) {
        out.merge(h);
    }
    return out;
}

double export_heatmap(const std::filesystem::path& prefix, const Heatmap& heatmap) {
    const std::vector<double> mse = heatmap.mean();
    const double peak = mse.empty() ? 0.0 : *std::max_element(mse.begin(), mse.end());
    const double scale = peak > 0.0 ? peak : 1.0;
    std::vector<std::uint16_t> gray(mse.size());
    PackedPlanes planes;
    planes.height = static_cast<std::uint32_t>(heatmap.height);
    planes.width = static_cast<std::uint32_t>(heatmap.width);
    planes.names = {"mse"};
    planes.data.resize(mse.size());
    for (std::size_t i = 0; i < mse.size(); ++i) {
        gray[i] = static_cast<std::uint16_t>(std::floor(mse[i] / scale * 65535.0 + 0.5));
        planes.data[i] = static_cast<float>(mse[i]);
    }
    write_pgm16(prefix.string() + ".pgm", heatmap.height, heatmap.width, gray);
    write_lsi(prefix.string() + ".lsi", planes);
    return scale;
}

std::uint8_t to_gray(float value) {
    const double v = std::clamp(static_cast<double>(value), 0.0, 1.0);
    return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

RenderedPair render_intensity(const Predictor& predictor, const SphericalImage& frame) {
    const std::vector<float> pred = predictor.predict(frame);
    const auto& target = frame.channel(channel::kIntensity);
    const auto& mask = frame.channel(channel::kMask);
    if (pred.size() != target.size()) {
        throw Error(ErrorCode::Shape, "render: prediction size does not match the frame");
    }
    RenderedPair pair;
    pair.height = frame.config.height;
    pair.width = frame.config.width;
    pair.reference.assign(target.size(), 0);
    pair.predicted.assign(target.size(), 0);
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (mask[i] != 0.0f) {
            pair.reference[i] = to_gray(target[i]);
            pair.predicted[i] = to_gray(pred[i]);
        }
    }
    return pair;
}

void write_rendered_pair(const std::filesystem::path& prefix, const RenderedPair& pair) {
    write_pgm8(prefix.string() + "_reference.pgm", pair.height, pair.width, pair.reference);
    write_pgm8(prefix.string() + "_predicted.pgm", pair.height, pair.width, pair.predicted);
}

}  // namespace lidarsim
