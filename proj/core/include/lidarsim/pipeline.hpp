#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lidarsim/checkpoint.hpp"
#include "lidarsim/models.hpp"
#include "lidarsim/projection.hpp"
#include "lidarsim/synth.hpp"

namespace lidarsim {

// Every TrainConfig key, in documentation order. Files use `key = value` lines;
// `#` starts a comment.
const std::vector<std::string>& train_config_keys();

struct TrainConfig {
    std::string arch = "unet";  // unet | pix2pix
    std::string combo = "D+L+I";
    int epochs = 30;
    int batch_size = 4;
    // Optimizer settings default per architecture when unset.
    std::optional<double> lr;
    std::optional<double> weight_decay;
    std::optional<double> beta1;
    double beta2 = 0.999;
    double lambda_l1 = 100.0;
    double gp_coeff = 10.0;
    std::uint64_t seed = 1;

    int base_width = 32;
    int depth = 5;
    int max_width_mult = 8;
    double dropout = 0.0;
    int disc_base_width = 64;
    int disc_layers = 3;

    ProjectionConfig projection{64, 256};
    int knn_k = 16;

    std::string dataset = "synth";  // synth | list
    std::string dataset_name = "synthetic";
    std::filesystem::path frame_list;
    double intensity_max = 1.0;
    std::uint64_t data_seed = 7;  // synthetic scenes and the split
    int synth_frames = 300;
    SynthSceneConfig synth;

    int train_size = 200;
    int val_size = 50;
    int test_size = 50;

    std::filesystem::path out_dir = "run";
    bool deterministic = false;
    int threads = 1;

    double effective_lr() const;
    double effective_weight_decay() const;
    double effective_beta1() const;
    ad::AdamConfig generator_adam() const;
    ad::AdamConfig discriminator_adam() const;
    UNetConfig generator_config(int in_channels) const;
    PatchGanConfig discriminator_config(int in_channels) const;
    ModalityCombo modality_combo() const;
    bool is_gan() const { return arch == "pix2pix"; }

    // Throws Config on inconsistent values.
    void validate() const;
};

// Applies one `key = value`; unknown keys and unparsable values are Config errors.
void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value);
// Parses `key = value` lines on top of `base`.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
std::string format_train_config(const TrainConfig& cfg);

using Dataset = std::vector<SphericalImage>;

// Scene seed of synthetic frame `index` (derived from data_seed).
std::uint64_t synth_frame_seed(const TrainConfig& cfg, std::size_t index);

// One frame of the synthetic dataset: ray-cast scene, estimated incidence, projection.
SphericalImage synth_frame(std::uint64_t seed, const TrainConfig& cfg);

struct FrameSource {
    std::filesystem::path cloud;
    std::optional<std::filesystem::path> labels;
    std::optional<std::filesystem::path> image;
    std::optional<std::filesystem::path> projection;
};

// Frame list lines: `cloud=PATH [labels=PATH] [image=PATH proj=PATH]`; relative
// paths resolve against the list's directory.
std::vector<FrameSource> read_frame_list(const std::filesystem::path& path);
SphericalImage load_frame(const FrameSource& src, const TrainConfig& cfg);

// Preprocesses all frames; with threads > 1 and !deterministic the frames are
// produced by a worker pool (results are placed by index either way).
Dataset build_dataset(const TrainConfig& cfg);

struct SplitSizes {
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
};

struct DatasetSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

// Disjoint seeded shuffle split; oversubscription is a Config error.
DatasetSplit split_dataset(std::size_t frame_count, const SplitSizes& sizes, std::uint64_t seed);

struct NormStats {
    std::vector<std::string> channels;
    std::vector<double> mean;
    std::vector<double> std;
};

// Per-channel mean/std over every pixel of the given frames' input stacks.
// Zero-variance channels get std 1.
NormStats compute_norm_stats(const Dataset& data, const std::vector<std::size_t>& frames,
                             const ModalityCombo& combo);

// (x - mean) / std per channel, in place.
void normalize_stack(std::vector<float>& stack, std::size_t plane, const std::vector<double>& mean,
                     const std::vector<double>& std);

struct Batch {
    ad::Tensor input;   // N x C x H x W, standardized
    ad::Tensor target;  // N x 1 x H x W
    ad::Tensor mask;    // N x 1 x H x W
};

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& frames, const ModalityCombo& combo,
                 const NormStats& norm);

// Inference-mode generator output for one frame (H*W values).
std::vector<float> predict_frame(const UNet& model, const SphericalImage& frame, const ModalityCombo& combo,
                                 const NormStats& norm);

// sum(mask * (I - pred)^2) / sum(mask) with float64 accumulation; 0 when nothing is masked in.
double frame_masked_mse(const std::vector<float>& pred, const SphericalImage& frame);

struct MetricRow {
    int epoch;
    std::string split;
    std::string loss_name;
    double value;
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);

struct TrainResult {
    ModelDescriptor best_descriptor;
    std::vector<NamedTensor> best_params;
    ModelDescriptor final_descriptor;
    std::vector<NamedTensor> final_params;
    std::vector<MetricRow> metrics;
    double best_val_mse = 0.0;
    double final_val_mse = 0.0;
    int best_epoch = 0;
};

using EpochCallback = std::function<void(int epoch, const std::vector<MetricRow>& rows)>;

// In-memory training on a prebuilt dataset. On a non-finite loss a fault dump
// is written under cfg.out_dir (when non-empty) and TrainingFault is rethrown.
TrainResult train(const TrainConfig& cfg, const Dataset& data, const DatasetSplit& split,
                  const EpochCallback& on_epoch = {});

struct TrainArtifacts {
    TrainResult result;
    std::filesystem::path best_checkpoint;
    std::filesystem::path final_checkpoint;
    std::filesystem::path metrics_csv;
};

// Builds the dataset, splits it, trains, and writes best.ckpt, final.ckpt,
// metrics.csv and config.txt into cfg.out_dir.
TrainArtifacts train(const TrainConfig& cfg);

}  // namespace lidarsim
