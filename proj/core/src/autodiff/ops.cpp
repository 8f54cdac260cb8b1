#include "lidarsim/autodiff/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "lidarsim/error.hpp"

namespace lidarsim::ad {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

struct ConvGeometry {
    int channels;  // channels of the image being unfolded
    int height;
    int width;
    int kernel;
    int stride;
    int pad;
    int out_h;
    int out_w;

    int rows() const { return channels * kernel * kernel; }
    int cols() const { return out_h * out_w; }
};

void im2col(const float* img, const ConvGeometry& g, float* cols) {
    const int ncols = g.cols();
    for (int c = 0; c < g.channels; ++c) {
        const float* plane = img + static_cast<std::size_t>(c) * g.height * g.width;
        for (int ki = 0; ki < g.kernel; ++ki) {
            for (int kj = 0; kj < g.kernel; ++kj) {
                float* row = cols + static_cast<std::size_t>((c * g.kernel + ki) * g.kernel + kj) * ncols;
                for (int oh = 0; oh < g.out_h; ++oh) {
                    const int ih = oh * g.stride - g.pad + ki;
                    float* dst = row + static_cast<std::size_t>(oh) * g.out_w;
                    if (ih < 0 || ih >= g.height) {
                        std::fill(dst, dst + g.out_w, 0.0f);
                        continue;
                    }
                    const float* src = plane + static_cast<std::size_t>(ih) * g.width;
                    for (int ow = 0; ow < g.out_w; ++ow) {
                        const int iw = ow * g.stride - g.pad + kj;
                        dst[ow] = (iw >= 0 && iw < g.width) ? src[iw] : 0.0f;
                    }
                }
            }
        }
    }
}

// Scatter-adds columns back onto the image (adjoint of im2col).
void col2im(const float* cols, const ConvGeometry& g, float* img) {
    const int ncols = g.cols();
    for (int c = 0; c < g.channels; ++c) {
        float* plane = img + static_cast<std::size_t>(c) * g.height * g.width;
        for (int ki = 0; ki < g.kernel; ++ki) {
            for (int kj = 0; kj < g.kernel; ++kj) {
                const float* row =
                    cols + static_cast<std::size_t>((c * g.kernel + ki) * g.kernel + kj) * ncols;
                for (int oh = 0; oh < g.out_h; ++oh) {
                    const int ih = oh * g.stride - g.pad + ki;
                    if (ih < 0 || ih >= g.height) {
                        continue;
                    }
                    const float* src = row + static_cast<std::size_t>(oh) * g.out_w;
                    float* dst = plane + static_cast<std::size_t>(ih) * g.width;
                    for (int ow = 0; ow < g.out_w; ++ow) {
                        const int iw = ow * g.stride - g.pad + kj;
                        if (iw >= 0 && iw < g.width) {
                            dst[iw] += src[ow];
                        }
                    }
                }
            }
        }
    }
}

void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) {
        throw Error(code, message);
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(), ErrorCode::Shape,
            std::string(op) + ": shape " + a.shape().str() + " vs " + b.shape().str());
}

void check_conv_args(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad,
                     int weight_in_dim, int weight_out_dim, const char* op) {
    require(x.defined() && weight.defined(), ErrorCode::Shape, std::string(op) + ": undefined operand");
    const Shape& ws = weight.shape();
    require(stride >= 1 && pad >= 0, ErrorCode::Shape, std::string(op) + ": invalid stride/pad");
    require(ws.h == ws.w && ws.h >= 1, ErrorCode::Shape, std::string(op) + ": kernel must be square");
    require(weight_in_dim == x.shape().c, ErrorCode::Shape,
            std::string(op) + ": input has " + std::to_string(x.shape().c) +
                " channels, weight expects " + std::to_string(weight_in_dim));
    if (bias.defined()) {
        require(bias.numel() == static_cast<std::size_t>(weight_out_dim), ErrorCode::Shape,
                std::string(op) + ": bias size mismatch");
    }
}

Tensor parent(const Node& self, std::size_t i) { return Tensor(self.parents[i]); }

void add_bias_grad(const std::vector<float>& grad_out, const Shape& out, Node& bias) {
    auto& gb = bias.ensure_grad();
    const std::size_t plane = out.plane();
    for (int c = 0; c < out.c; ++c) {
        double acc = 0.0;
        for (int n = 0; n < out.n; ++n) {
            const float* g = grad_out.data() + (static_cast<std::size_t>(n) * out.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                acc += g[i];
            }
        }
        gb[c] += static_cast<float>(acc);
    }
}

template <typename Fn>
Tensor unary(const char* op, const Tensor& x, Fn&& fn) {
    std::vector<float> out(x.numel());
    auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = fn(in[i]);
    }
    return make_result(op, x.shape(), std::move(out), {x});
}

// Backward for elementwise ops whose local derivative is known per element.
void attach_elementwise_backward(Tensor& result, std::vector<float> local) {
    if (!result.requires_grad()) {
        return;
    }
    result.node()->backward = [local = std::move(local)](Node& self) {
        auto& gx = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += self.grad[i] * local[i];
        }
    };
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad) {
    check_conv_args(x, weight, bias, stride, pad, weight.shape().c, weight.shape().n, "conv2d");
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    const int k = ws.h;
    const int span_h = xs.h + 2 * pad - k;
    const int span_w = xs.w + 2 * pad - k;
    require(span_h >= 0 && span_w >= 0 && span_h % stride == 0 && span_w % stride == 0,
            ErrorCode::Shape,
            "conv2d: non-integral output extent for input " + xs.str() + ", k=" + std::to_string(k) +
                ", stride=" + std::to_string(stride) + ", pad=" + std::to_string(pad));
    const ConvGeometry g{xs.c, xs.h, xs.w, k, stride, pad, span_h / stride + 1, span_w / stride + 1};
    const Shape ys{xs.n, ws.n, g.out_h, g.out_w};

    std::vector<float> out(ys.numel());
    std::vector<float> cols(static_cast<std::size_t>(g.rows()) * g.cols());
    CMapR wm(weight.data().data(), ws.n, g.rows());
    for (int n = 0; n < xs.n; ++n) {
        im2col(x.data().data() + n * static_cast<std::size_t>(xs.c) * xs.h * xs.w, g, cols.data());
        MapR y(out.data() + n * static_cast<std::size_t>(ys.c) * ys.plane(), ys.c, g.cols());
        y.noalias() = wm * CMapR(cols.data(), g.rows(), g.cols());
        if (bias.defined()) {
            for (int c = 0; c < ys.c; ++c) {
                y.row(c).array() += bias.data()[c];
            }
        }
    }

    Tensor result = make_result("conv2d", ys, std::move(out), {x, weight, bias});
    if (!result.requires_grad()) {
        return result;
    }
    const bool has_bias = bias.defined();
    result.node()->backward = [g, xs, ys, has_bias](Node& self) {
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        const int cout = ys.c;
        CMapR wm(wn.data.data(), cout, g.rows());
        std::vector<float> cols(static_cast<std::size_t>(g.rows()) * g.cols());
        std::vector<float> dcols;
        if (xn.requires_grad) {
            dcols.resize(cols.size());
            xn.ensure_grad();
        }
        if (wn.requires_grad) {
            wn.ensure_grad();
        }
        for (int n = 0; n < xs.n; ++n) {
            CMapR gy(self.grad.data() + n * static_cast<std::size_t>(cout) * ys.plane(), cout, g.cols());
            if (wn.requires_grad) {
                im2col(xn.data.data() + n * static_cast<std::size_t>(xs.c) * xs.plane(), g, cols.data());
                MapR gw(wn.grad.data(), cout, g.rows());
                gw.noalias() += gy * CMapR(cols.data(), g.rows(), g.cols()).transpose();
            }
            if (xn.requires_grad) {
                MapR dc(dcols.data(), g.rows(), g.cols());
                dc.noalias() = wm.transpose() * gy;
                col2im(dcols.data(), g, xn.grad.data() + n * static_cast<std::size_t>(xs.c) * xs.plane());
            }
        }
        if (has_bias && self.parents[2]->requires_grad) {
            add_bias_grad(self.grad, ys, *self.parents[2]);
        }
    };
    // The weight is read back from the parents so the closure holds no owning
    // reference to its own node.
    Node* self_ptr = result.node();
    result.node()->graph_backward = [stride, pad, self_ptr](const Tensor& gy,
                                                             const std::vector<bool>& needed) {
        std::vector<Tensor> grads(needed.size());
        for (std::size_t i = 1; i < needed.size(); ++i) {
            require(!needed[i], ErrorCode::Shape,
                    "conv2d: differentiable gradient w.r.t. weight/bias is not supported");
        }
        if (needed[0]) {
            grads[0] = conv_transpose2d(gy, parent(*self_ptr, 1), Tensor(), stride, pad);
        }
        return grads;
    };
    return result;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                        int pad) {
    check_conv_args(x, weight, bias, stride, pad, weight.shape().n, weight.shape().c,
                    "conv_transpose2d");
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    const int k = ws.h;
    const int out_h = (xs.h - 1) * stride - 2 * pad + k;
    const int out_w = (xs.w - 1) * stride - 2 * pad + k;
    require(out_h > 0 && out_w > 0, ErrorCode::Shape, "conv_transpose2d: empty output extent");
    // Unfolding geometry of the output image back onto the input grid.
    const ConvGeometry g{ws.c, out_h, out_w, k, stride, pad, xs.h, xs.w};
    const Shape ys{xs.n, ws.c, out_h, out_w};

    std::vector<float> out(ys.numel(), 0.0f);
    std::vector<float> cols(static_cast<std::size_t>(g.rows()) * g.cols());
    CMapR wm(weight.data().data(), ws.n, g.rows());
    for (int n = 0; n < xs.n; ++n) {
        CMapR xm(x.data().data() + n * static_cast<std::size_t>(xs.c) * xs.plane(), xs.c, g.cols());
        MapR cm(cols.data(), g.rows(), g.cols());
        cm.noalias() = wm.transpose() * xm;
        float* y = out.data() + n * static_cast<std::size_t>(ys.c) * ys.plane();
        col2im(cols.data(), g, y);
        if (bias.defined()) {
            for (int c = 0; c < ys.c; ++c) {
                float* plane = y + static_cast<std::size_t>(c) * ys.plane();
                const float b = bias.data()[c];
                for (std::size_t i = 0; i < ys.plane(); ++i) {
                    plane[i] += b;
                }
            }
        }
    }

    Tensor result = make_result("conv_transpose2d", ys, std::move(out), {x, weight, bias});
    if (!result.requires_grad()) {
        return result;
    }
    const bool has_bias = bias.defined();
    result.node()->backward = [g, xs, ys, has_bias](Node& self) {
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        CMapR wm(wn.data.data(), xs.c, g.rows());
        std::vector<float> gcols(static_cast<std::size_t>(g.rows()) * g.cols());
        if (xn.requires_grad) {
            xn.ensure_grad();
        }
        if (wn.requires_grad) {
            wn.ensure_grad();
        }
        for (int n = 0; n < xs.n; ++n) {
            im2col(self.grad.data() + n * static_cast<std::size_t>(ys.c) * ys.plane(), g, gcols.data());
            CMapR gc(gcols.data(), g.rows(), g.cols());
            if (xn.requires_grad) {
                MapR gx(xn.grad.data() + n * static_cast<std::size_t>(xs.c) * xs.plane(), xs.c, g.cols());
                gx.noalias() += wm * gc;
            }
            if (wn.requires_grad) {
                CMapR xm(xn.data.data() + n * static_cast<std::size_t>(xs.c) * xs.plane(), xs.c, g.cols());
                MapR gw(wn.grad.data(), xs.c, g.rows());
                gw.noalias() += xm * gc.transpose();
            }
        }
        if (has_bias && self.parents[2]->requires_grad) {
            add_bias_grad(self.grad, ys, *self.parents[2]);
        }
    };
    Node* self_ptr = result.node();
    result.node()->graph_backward = [stride, pad, self_ptr](const Tensor& gy,
                                                             const std::vector<bool>& needed) {
        std::vector<Tensor> grads(needed.size());
        for (std::size_t i = 1; i < needed.size(); ++i) {
            require(!needed[i], ErrorCode::Shape,
                    "conv_transpose2d: differentiable gradient w.r.t. weight/bias is not supported");
        }
        if (needed[0]) {
            grads[0] = conv2d(gy, parent(*self_ptr, 1), Tensor(), stride, pad);
        }
        return grads;
    };
    return result;
}

Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0f); }

Tensor leaky_relu(const Tensor& x, float slope) {
    Tensor result = unary(slope == 0.0f ? "relu" : "leaky_relu", x,
                          [slope](float v) { return v > 0.0f ? v : slope * v; });
    if (!result.requires_grad()) {
        return result;
    }
    std::vector<float> local(x.numel());
    auto in = x.data();
    for (std::size_t i = 0; i < local.size(); ++i) {
        local[i] = in[i] > 0.0f ? 1.0f : slope;
    }
    Tensor slope_map = Tensor::from(x.shape(), local);
    attach_elementwise_backward(result, std::move(local));
    result.node()->graph_backward = [slope_map](const Tensor& gy, const std::vector<bool>& needed) {
        std::vector<Tensor> grads(needed.size());
        if (needed[0]) {
            grads[0] = mul(gy, slope_map);
        }
        return grads;
    };
    return result;
}

Tensor tanh(const Tensor& x) {
    Tensor result = unary("tanh", x, [](float v) { return std::tanh(v); });
    if (result.requires_grad()) {
        std::vector<float> local(x.numel());
        auto y = result.data();
        for (std::size_t i = 0; i < local.size(); ++i) {
            local[i] = 1.0f - y[i] * y[i];
        }
        attach_elementwise_backward(result, std::move(local));
    }
    return result;
}

Tensor sigmoid(const Tensor& x) {
    Tensor result = unary("sigmoid", x, [](float v) {
        // Split form avoids exp overflow for large |v|.
        if (v >= 0.0f) {
            return 1.0f / (1.0f + std::exp(-v));
        }
        const float e = std::exp(v);
        return e / (1.0f + e);
    });
    if (result.requires_grad()) {
        std::vector<float> local(x.numel());
        auto y = result.data();
        for (std::size_t i = 0; i < local.size(); ++i) {
            local[i] = y[i] * (1.0f - y[i]);
        }
        attach_elementwise_backward(result, std::move(local));
    }
    return result;
}

Tensor instance_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    const Shape s = x.shape();
    require(eps > 0.0f, ErrorCode::Shape, "instance_norm: eps must be positive");
    if (gain.defined()) {
        require(gain.numel() == static_cast<std::size_t>(s.c), ErrorCode::Shape,
                "instance_norm: gain size mismatch");
    }
    if (bias.defined()) {
        require(bias.numel() == static_cast<std::size_t>(s.c), ErrorCode::Shape,
                "instance_norm: bias size mismatch");
    }
    const std::size_t plane = s.plane();
    std::vector<float> normalized(s.numel());
    std::vector<float> inv_std(static_cast<std::size_t>(s.n) * s.c);
    std::vector<float> out(s.numel());
    auto in = x.data();
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
            double mean = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                mean += in[base + i];
            }
            mean /= static_cast<double>(plane);
            double var = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = in[base + i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(plane);
            const double istd = 1.0 / std::sqrt(var + eps);
            inv_std[n * s.c + c] = static_cast<float>(istd);
            const float gamma = gain.defined() ? gain.data()[c] : 1.0f;
            const float beta = bias.defined() ? bias.data()[c] : 0.0f;
            for (std::size_t i = 0; i < plane; ++i) {
                const float xhat = static_cast<float>((in[base + i] - mean) * istd);
                normalized[base + i] = xhat;
                out[base + i] = gamma * xhat + beta;
            }
        }
    }
    Tensor result = make_result("instance_norm", s, std::move(out), {x, gain, bias});
    if (!result.requires_grad()) {
        return result;
    }
    const bool has_gain = gain.defined();
    const bool has_bias = bias.defined();
    result.node()->backward = [s, plane, has_gain, has_bias, normalized = std::move(normalized),
                               inv_std = std::move(inv_std)](Node& self) {
        Node& xn = *self.parents[0];
        Node* gn = has_gain ? self.parents[1].get() : nullptr;
        Node* bn = has_bias ? self.parents[has_gain ? 2 : 1].get() : nullptr;
        for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < s.c; ++c) {
                const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
                double sum_g = 0.0;
                double sum_gx = 0.0;
                for (std::size_t i = 0; i < plane; ++i) {
                    sum_g += self.grad[base + i];
                    sum_gx += static_cast<double>(self.grad[base + i]) * normalized[base + i];
                }
                if (gn && gn->requires_grad) {
                    gn->ensure_grad()[c] += static_cast<float>(sum_gx);
                }
                if (bn && bn->requires_grad) {
                    bn->ensure_grad()[c] += static_cast<float>(sum_g);
                }
                if (xn.requires_grad) {
                    auto& gx = xn.ensure_grad();
                    const double gamma = gn ? gn->data[c] : 1.0;
                    const double mean_g = sum_g / static_cast<double>(plane);
                    const double mean_gx = sum_gx / static_cast<double>(plane);
                    const double factor = gamma * inv_std[n * s.c + c];
                    for (std::size_t i = 0; i < plane; ++i) {
                        gx[base + i] += static_cast<float>(
                            factor * (self.grad[base + i] - mean_g - normalized[base + i] * mean_gx));
                    }
                }
            }
        }
    };
    return result;
}

Tensor concat_channels(const Tensor& x, const Tensor& y) {
    const Shape a = x.shape();
    const Shape b = y.shape();
    require(a.n == b.n && a.h == b.h && a.w == b.w, ErrorCode::Shape,
            "concat_channels: " + a.str() + " vs " + b.str());
    const Shape s{a.n, a.c + b.c, a.h, a.w};
    const std::size_t plane = s.plane();
    std::vector<float> out(s.numel());
    for (int n = 0; n < s.n; ++n) {
        auto dst = out.begin() + static_cast<std::ptrdiff_t>(n * s.c * plane);
        auto xa = x.data().subspan(n * a.c * plane, a.c * plane);
        auto yb = y.data().subspan(n * b.c * plane, b.c * plane);
        std::copy(xa.begin(), xa.end(), dst);
        std::copy(yb.begin(), yb.end(), dst + static_cast<std::ptrdiff_t>(a.c * plane));
    }
    Tensor result = make_result("concat_channels", s, std::move(out), {x, y});
    if (!result.requires_grad()) {
        return result;
    }
    result.node()->backward = [a, b, s, plane](Node& self) {
        for (int n = 0; n < s.n; ++n) {
            const float* g = self.grad.data() + n * s.c * plane;
            if (self.parents[0]->requires_grad) {
                float* gx = self.parents[0]->ensure_grad().data() + n * a.c * plane;
                for (std::size_t i = 0; i < a.c * plane; ++i) {
                    gx[i] += g[i];
                }
            }
            if (self.parents[1]->requires_grad) {
                float* gy = self.parents[1]->ensure_grad().data() + n * b.c * plane;
                for (std::size_t i = 0; i < b.c * plane; ++i) {
                    gy[i] += g[a.c * plane + i];
                }
            }
        }
    };
    result.node()->graph_backward = [a, b](const Tensor& gy, const std::vector<bool>& needed) {
        std::vector<Tensor> grads(needed.size());
        if (needed[0]) {
            grads[0] = slice_channels(gy, 0, a.c);
        }
        if (needed[1]) {
            grads[1] = slice_channels(gy, a.c, b.c);
        }
        return grads;
    };
    return result;
}

Tensor slice_channels(const Tensor& x, int begin, int count) {
    const Shape a = x.shape();
    require(begin >= 0 && count >= 1 && begin + count <= a.c, ErrorCode::Shape,
            "slice_channels: range out of bounds for " + a.str());
    const Shape s{a.n, count, a.h, a.w};
    const std::size_t plane = s.plane();
    std::vector<float> out(s.numel());
    for (int n = 0; n < s.n; ++n) {
        auto src = x.data().subspan((n * a.c + begin) * plane, count * plane);
        std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(n * count * plane));
    }
    Tensor result = make_result("slice_channels", s, std::move(out), {x});
    if (!result.requires_grad()) {
        return result;
    }
    result.node()->backward = [a, s, begin, plane](Node& self) {
        auto& gx = self.parents[0]->ensure_grad();
        for (int n = 0; n < s.n; ++n) {
            for (std::size_t i = 0; i < s.c * plane; ++i) {
                gx[(n * a.c + begin) * plane + i] += self.grad[n * s.c * plane + i];
            }
        }
    };
    result.node()->graph_backward = [a, begin, count](const Tensor& gy, const std::vector<bool>& needed) {
        std::vector<Tensor> grads(needed.size());
        if (needed[0]) {
            Tensor g = gy;
            if (begin > 0) {
                g = concat_channels(Tensor::zeros({a.n, begin, a.h, a.w}), g);
            }
            if (begin + count < a.c) {
                g = concat_channels(g, Tensor::zeros({a.n, a.c - begin - count, a.h, a.w}));
            }
            grads[0] = g;
        }
        return grads;
    };
    return result;
}

Tensor dropout(const Tensor& x, float p, bool training, std::mt19937_64& rng) {
    require(p >= 0.0f && p < 1.0f, ErrorCode::Config, "dropout: p must lie in [0, 1)");
    if (!training || p == 0.0f) {
        return x;
    }
    std::uniform_real_distribution<float> uniform(0.0f, 1.0f);
    const float keep_scale = 1.0f / (1.0f - p);
    std::vector<float> local(x.numel());
    std::vector<float> out(x.numel());
    auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        local[i] = uniform(rng) >= p ? keep_scale : 0.0f;
        out[i] = in[i] * local[i];
    }
    Tensor result = make_result("dropout", x.shape(), std::move(out), {x});
    attach_elementwise_backward(result, std::move(local));
    return result;
}

Tensor add(const Tensor& x, const Tensor& y) {
    require_same_shape(x, y, "add");
    std::vector<float> out(x.numel());
    auto a = x.data();
    auto b = y.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] + b[i];
    }
    Tensor result = make_result("add", x.shape(), std::move(out), {x, y});
    if (!result.requires_grad()) {
        return result;
    }
    result.node()->backward = [](Node& self) {
        for (auto& p : self.parents) {
            if (p->requires_grad) {
                auto& g = p->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += self.grad[i];
                }
            }
        }
    };
    result.node()->graph_backward = [](const Tensor& gy, const std::vector<bool>& needed) {
        std::vector<Tensor> grads(needed.size());
        for (std::size_t i = 0; i < needed.size(); ++i) {
            if (needed[i]) {
                grads[i] = gy;
            }
        }
        return grads;
    };
    return result;
}

Tensor mul(const Tensor& x, const Tensor& y) {
    require_same_shape(x, y, "mul");
    std::vector<float> out(x.numel());
    auto a = x.data();
    auto b = y.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * b[i];
    }
    Tensor result = make_result("mul", x.shape(), std::move(out), {x, y});
    if (!result.requires_grad()) {
        return result;
    }
    result.node()->backward = [](Node& self) {
        Node& a = *self.parents[0];
        Node& b = *self.parents[1];
        if (a.requires_grad) {
            auto& g = a.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * b.data[i];
            }
        }
        if (b.requires_grad) {
            auto& g = b.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * a.data[i];
            }
        }
    };
    Node* self_ptr = result.node();
    result.node()->graph_backward = [self_ptr](const Tensor& gy, const std::vector<bool>& needed) {
        std::vector<Tensor> grads(needed.size());
        if (needed[0]) {
            grads[0] = mul(gy, parent(*self_ptr, 1));
        }
        if (needed[1]) {
            grads[1] = mul(gy, parent(*self_ptr, 0));
        }
        return grads;
    };
    return result;
}

Tensor scale(const Tensor& x, float factor) {
    Tensor result = unary("scale", x, [factor](float v) { return v * factor; });
    if (!result.requires_grad()) {
        return result;
    }
    result.node()->backward = [factor](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * factor;
        }
    };
    result.node()->graph_backward = [factor](const Tensor& gy, const std::vector<bool>& needed) {
        std::vector<Tensor> grads(needed.size());
        if (needed[0]) {
            grads[0] = scale(gy, factor);
        }
        return grads;
    };
    return result;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) {
        acc += v;
    }
    Tensor result = make_result("sum", {1, 1, 1, 1}, {static_cast<float>(acc)}, {x});
    if (!result.requires_grad()) {
        return result;
    }
    result.node()->backward = [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (float& v : g) {
            v += self.grad[0];
        }
    };
    const Shape s = x.shape();
    result.node()->graph_backward = [s](const Tensor& gy, const std::vector<bool>& needed) {
        std::vector<Tensor> grads(needed.size());
        if (needed[0]) {
            grads[0] = expand(gy, s);
        }
        return grads;
    };
    return result;
}

Tensor mean(const Tensor& x) {
    require(x.numel() > 0, ErrorCode::Shape, "mean of empty tensor");
    return scale(sum(x), 1.0f / static_cast<float>(x.numel()));
}

Tensor expand(const Tensor& scalar_tensor, Shape shape) {
    const float v = scalar_tensor.item();
    Tensor result = make_result("expand", shape, std::vector<float>(shape.numel(), v), {scalar_tensor});
    if (!result.requires_grad()) {
        return result;
    }
    result.node()->backward = [](Node& self) {
        double acc = 0.0;
        for (float g : self.grad) {
            acc += g;
        }
        self.parents[0]->ensure_grad()[0] += static_cast<float>(acc);
    };
    result.node()->graph_backward = [](const Tensor& gy, const std::vector<bool>& needed) {
        std::vector<Tensor> grads(needed.size());
        if (needed[0]) {
            grads[0] = sum(gy);
        }
        return grads;
    };
    return result;
}

namespace {

// Shared implementation of the masked regression losses. `power` is 1 or 2.
Tensor masked_loss(const char* op, const Tensor& pred, const Tensor& target, const Tensor& mask,
                   int power) {
    require_same_shape(pred, target, op);
    require_same_shape(pred, mask, op);
    auto p = pred.data();
    auto t = target.data();
    auto m = mask.data();
    double total = 0.0;
    double count = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (m[i] == 0.0f) {
            continue;
        }
        require(m[i] == 1.0f, ErrorCode::Shape, std::string(op) + ": mask values must be 0 or 1");
        const double d = static_cast<double>(p[i]) - t[i];
        total += power == 2 ? d * d : std::abs(d);
        count += 1.0;
    }
    const double value = count > 0.0 ? total / count : 0.0;
    Tensor result = make_result(op, {1, 1, 1, 1}, {static_cast<float>(value)}, {pred, target});
    if (!result.requires_grad()) {
        return result;
    }
    result.node()->backward = [count, power, mask_values = std::vector<float>(m.begin(), m.end())](
                                  Node& self) {
        if (count == 0.0) {
            return;
        }
        Node& pn = *self.parents[0];
        Node& tn = *self.parents[1];
        const double upstream = self.grad[0] / count;
        for (std::size_t i = 0; i < mask_values.size(); ++i) {
            if (mask_values[i] == 0.0f) {
                continue;
            }
            const double d = static_cast<double>(pn.data[i]) - tn.data[i];
            const double local = power == 2 ? 2.0 * d : (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
            const float g = static_cast<float>(upstream * local);
            if (pn.requires_grad) {
                pn.ensure_grad()[i] += g;
            }
            if (tn.requires_grad) {
                tn.ensure_grad()[i] -= g;
            }
        }
    };
    return result;
}

}  // namespace

Tensor masked_mse(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    return masked_loss("masked_mse", pred, target, mask, 2);
}

Tensor masked_l1(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    return masked_loss("masked_l1", pred, target, mask, 1);
}

Tensor l1(const Tensor& pred, const Tensor& target) {
    return masked_loss("l1", pred, target, Tensor::full(pred.shape(), 1.0f), 1);
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& labels) {
    require_same_shape(logits, labels, "bce_with_logits");
    auto z = logits.data();
    auto t = labels.data();
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double zi = z[i];
        total += std::max(zi, 0.0) - zi * t[i] + std::log1p(std::exp(-std::abs(zi)));
    }
    const double count = static_cast<double>(z.size());
    Tensor result = make_result("bce_with_logits", {1, 1, 1, 1},
                                {static_cast<float>(total / count)}, {logits});
    if (!result.requires_grad()) {
        return result;
    }
    result.node()->backward = [count, label_values = std::vector<float>(t.begin(), t.end())](
                                  Node& self) {
        Node& zn = *self.parents[0];
        auto& g = zn.ensure_grad();
        const double upstream = self.grad[0] / count;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double zi = zn.data[i];
            const double sig = zi >= 0.0 ? 1.0 / (1.0 + std::exp(-zi))
                                         : std::exp(zi) / (1.0 + std::exp(zi));
            g[i] += static_cast<float>(upstream * (sig - label_values[i]));
        }
    };
    return result;
}

Tensor bce_with_logits(const Tensor& logits, float label) {
    return bce_with_logits(logits, Tensor::full(logits.shape(), label));
}

}  // namespace lidarsim::ad
