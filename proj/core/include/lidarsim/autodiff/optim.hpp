#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lidarsim/autodiff/tensor.hpp"

namespace lidarsim::ad {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    // lr < 0, non-finite values, or betas outside [0, 1) are config errors.
    // lr == 0 is accepted and turns every step into a no-op.
    void validate() const;
};

struct AdamMoments {
    std::vector<double> first;
    std::vector<double> second;
    std::int64_t step = 0;
};

// One decoupled-weight-decay Adam update of `param` in place.
void adam_update(std::span<float> param, std::span<const float> grad, AdamMoments& state,
                 const AdamConfig& cfg);

class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg);

    // Parameters without an accumulated gradient are treated as having zero gradient.
    void step();
    void zero_grad();

    const AdamConfig& config() const { return cfg_; }
    const std::vector<AdamMoments>& state() const { return state_; }

private:
    std::vector<Tensor> params_;
    std::vector<AdamMoments> state_;
    AdamConfig cfg_;
};

}  // namespace lidarsim::ad
