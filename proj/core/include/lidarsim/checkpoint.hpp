#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lidarsim/models.hpp"
#include "lidarsim/projection.hpp"

namespace lidarsim {

// Architecture + preprocessing needed to rebuild a predictor from a checkpoint.
struct ModelDescriptor {
    std::string kind = "unet";  // "unet" or "pix2pix"
    UNetConfig generator;
    PatchGanConfig discriminator;  // meaningful for pix2pix only
    std::string combo = "D";
    std::vector<std::string> channel_order;
    std::vector<double> norm_mean;
    std::vector<double> norm_std;
    ProjectionConfig projection;
    int epoch = 0;
    double val_mse = 0.0;
};

struct Checkpoint {
    ModelDescriptor descriptor;
    std::vector<NamedTensor> params;

    // Throws MalformedFile when the parameter is missing.
    const ad::Tensor& param(const std::string& name) const;
};

// "LICKPT1", u32 length + JSON descriptor text, u32 parameter count, then one
// LSI1 block per parameter (single plane of (n*c*h) x w values; full shapes are
// listed in the descriptor).
std::vector<std::uint8_t> encode_checkpoint(const ModelDescriptor& desc,
                                            const std::vector<NamedTensor>& params);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::filesystem::path& path, const ModelDescriptor& desc,
                     const std::vector<NamedTensor>& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Throws ModalityUnavailable when the checkpoint was trained on another combo.
void validate_combo(const ModelDescriptor& desc, const ModalityCombo& combo);

// Copies values of `prefix + name` from the checkpoint into each target tensor.
void restore_parameters(const Checkpoint& ckpt, const std::vector<NamedTensor>& targets,
                        const std::string& prefix = "");

std::vector<NamedTensor> prefixed(const std::vector<NamedTensor>& params, const std::string& prefix);

// Deep copy of parameter values (for keeping the best-validation snapshot).
std::vector<NamedTensor> snapshot(const std::vector<NamedTensor>& params);

}  // namespace lidarsim
