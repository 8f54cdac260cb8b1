#include "lidarsim/autodiff/optim.hpp"

#include <cmath>

#include "lidarsim/error.hpp"

namespace lidarsim::ad {

void AdamConfig::validate() const {
    if (!std::isfinite(lr) || lr < 0.0) {
        throw Error(ErrorCode::Config, "adam: learning rate must be finite and non-negative");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw Error(ErrorCode::Config, "adam: betas must lie in [0, 1)");
    }
    if (!(eps > 0.0) || !(weight_decay >= 0.0)) {
        throw Error(ErrorCode::Config, "adam: eps must be positive and weight decay non-negative");
    }
}

void adam_update(std::span<float> param, std::span<const float> grad, AdamMoments& state,
                 const AdamConfig& cfg) {
    if (!grad.empty() && grad.size() != param.size()) {
        throw Error(ErrorCode::Shape, "adam: gradient size does not match parameter");
    }
    if (state.first.size() != param.size()) {
        state.first.assign(param.size(), 0.0);
        state.second.assign(param.size(), 0.0);
    }
    ++state.step;
    if (cfg.lr == 0.0) {
        return;
    }
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(cfg.beta1, t);
    const double correction2 = 1.0 - std::pow(cfg.beta2, t);
    const double decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad.empty() ? 0.0 : grad[i];
        double& m = state.first[i];
        double& v = state.second[i];
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        const double m_hat = m / correction1;
        const double v_hat = v / correction2;
        const double p = static_cast<double>(param[i]) * decay;
        param[i] = static_cast<float>(p - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), state_(params_.size()), cfg_(cfg) {
    cfg_.validate();
}

void Adam::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        adam_update(params_[i].data(), params_[i].grad(), state_[i], cfg_);
    }
}

void Adam::zero_grad() {
    for (Tensor& p : params_) {
        p.zero_grad();
    }
}

}  // namespace lidarsim::ad
