#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lidarsim/checkpoint.hpp"
#include "lidarsim/pipeline.hpp"

namespace lidarsim {

// Produces an H*W intensity plane for a frame.
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual std::vector<float> predict(const SphericalImage& frame) const = 0;
};

// Rebuilds the generator stored in a checkpoint and applies its embedded
// standardization before the forward pass.
class CheckpointPredictor : public Predictor {
public:
    explicit CheckpointPredictor(const Checkpoint& ckpt);

    std::vector<float> predict(const SphericalImage& frame) const override;
    const ModelDescriptor& descriptor() const { return desc_; }
    const ModalityCombo& combo() const { return combo_; }

private:
    ModelDescriptor desc_;
    ModalityCombo combo_;
    NormStats norm_;
    std::unique_ptr<UNet> model_;
};

// Returns the frame's ground-truth intensity plane.
class OraclePredictor : public Predictor {
public:
    std::vector<float> predict(const SphericalImage& frame) const override;
};

// Mean over frames of the per-frame masked MSE.
double eval_mse(const Predictor& predictor, const Dataset& data, const std::vector<std::size_t>& frames);

struct AblationRow {
    std::string architecture;
    std::string dataset;
    std::string combo;
    std::optional<double> mse;  // nullopt marks a combo the data cannot provide
};

// Completes every (architecture, dataset) group to the eight canonical combos,
// filling absent ones with nullopt, sorted by architecture, dataset and combo order.
std::vector<AblationRow> ablation_matrix(const std::vector<AblationRow>& measured);

// Long form: architecture,dataset,combo,mse with "-" for missing values.
void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);
// Wide form: one line per (architecture, dataset), one column per combo.
void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows);

struct Histogram {
    double lo = -1.0;
    double hi = 1.0;
    std::vector<std::uint64_t> counts;

    Histogram(int bins = 201, double lo = -1.0, double hi = 1.0);
    int bins() const { return static_cast<int>(counts.size()); }
    double bin_low(int i) const;
    double bin_high(int i) const;
    // Values outside [lo, hi] land in the edge bins.
    int bin_of(double value) const;
    void add(double value) { ++counts[static_cast<std::size_t>(bin_of(value))]; }
    void merge(const Histogram& other);
    std::uint64_t total() const;
};

// Signed error (I - pred) of every masked pixel.
void accumulate_errors(Histogram& hist, const std::vector<float>& pred, const SphericalImage& frame);
Histogram error_histogram(const Predictor& predictor, const Dataset& data, const std::vector<std::size_t>& frames,
                          int bins = 201, int threads = 1);
// bin_low,bin_high,count
void write_histogram_csv(std::ostream& out, const Histogram& hist);

struct Heatmap {
    int height = 0;
    int width = 0;
    std::vector<double> sum_sq;
    std::vector<std::uint32_t> count;
    std::size_t frames = 0;

    Heatmap() = default;
    Heatmap(int height, int width);
    // Throws Shape when the frame's grid differs.
    void add(const std::vector<float>& pred, const SphericalImage& frame);
    void merge(const Heatmap& other);
    // Per-pixel mean squared error; 0 where no frame had a return.
    std::vector<double> mean() const;
};

Heatmap error_heatmap(const Predictor& predictor, const Dataset& data, const std::vector<std::size_t>& frames,
                      int threads = 1);
// prefix.pgm (16-bit, scaled by the maximum mean) and prefix.lsi (float32 plane "mse").
// Returns the scale that maps 65535 back to squared error.
double export_heatmap(const std::filesystem::path& prefix, const Heatmap& heatmap);

// floor(clamp(v, 0, 1) * 255 + 0.5)
std::uint8_t to_gray(float value);

struct RenderedPair {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> reference;
    std::vector<std::uint8_t> predicted;
};

// Masked-out pixels are black in both images.
RenderedPair render_intensity(const Predictor& predictor, const SphericalImage& frame);
// prefix_reference.pgm and prefix_predicted.pgm
void write_rendered_pair(const std::filesystem::path& prefix, const RenderedPair& pair);

}  // namespace lidarsim
