#pragma once

#include <random>

#include "lidarsim/autodiff/tensor.hpp"

namespace lidarsim::ad {

// Weight layout (out_channels, in_channels, k, k); bias (1, out_channels, 1, 1) or undefined.
// Output extent (H + 2*pad - k) / stride + 1 must be integral.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad);

// Weight layout (in_channels, out_channels, k, k). Output extent (H - 1) * stride - 2*pad + k.
// Adjoint of conv2d with the same weight.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                        int pad);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, float slope);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Normalizes each (n, c) plane to zero mean / unit variance, then applies the
// per-channel affine (gain, bias of shape (1, C, 1, 1)); both may be undefined.
Tensor instance_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);

Tensor concat_channels(const Tensor& x, const Tensor& y);
Tensor slice_channels(const Tensor& x, int begin, int count);

// Inverted dropout: kept activations are scaled by 1 / (1 - p) during training.
Tensor dropout(const Tensor& x, float p, bool training, std::mt19937_64& rng);

Tensor add(const Tensor& x, const Tensor& y);
Tensor mul(const Tensor& x, const Tensor& y);
Tensor scale(const Tensor& x, float factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Broadcasts a scalar tensor to `shape`.
Tensor expand(const Tensor& scalar, Shape shape);

// sum((pred - target)^2 * mask) / sum(mask); 0 when the mask is empty.
Tensor masked_mse(const Tensor& pred, const Tensor& target, const Tensor& mask);
// sum(|pred - target| * mask) / sum(mask); 0 when the mask is empty.
Tensor masked_l1(const Tensor& pred, const Tensor& target, const Tensor& mask);
Tensor l1(const Tensor& pred, const Tensor& target);
// Mean binary cross-entropy on logits, stabilized as max(z,0) - z*t + log1p(exp(-|z|)).
Tensor bce_with_logits(const Tensor& logits, const Tensor& labels);
Tensor bce_with_logits(const Tensor& logits, float label);

}  // namespace lidarsim::ad
