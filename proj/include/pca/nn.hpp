#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "pca/autodiff.hpp"
#include "pca/ops.hpp"
#include "pca/rng.hpp"
#include "pca/tensor.hpp"
#include "pca/threading.hpp"

namespace pca::nn {

enum class Padding { same, valid };

/// He-uniform fill: U(-limit, limit) with limit = sqrt(6 / fan_in).
template <typename T>
void he_uniform_fill(Tensor<T>& t, int fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-limit, limit));
}

/// Dense 2D convolution parameters. kernel is (kh, kw, in_c, out_c); same
/// padding requires odd kernel dims and pads (k-1)/2 on each side.
template <typename T>
struct Conv2dParams {
    Tensor<T> kernel;
    Tensor<T> bias;  // (1,1,1,out_c)
    int stride = 1;
    Padding padding = Padding::same;

    int kh() const { return kernel.shape().n; }
    int kw() const { return kernel.shape().h; }
    int in_channels() const { return kernel.shape().w; }
    int out_channels() const { return kernel.shape().c; }

    static Conv2dParams he_uniform(int kh, int kw, int in_c, int out_c, int stride, Padding padding, Rng& rng) {
        Conv2dParams p;
        p.kernel = Tensor<T>(Shape(kh, kw, in_c, out_c));
        he_uniform_fill(p.kernel, kh * kw * in_c, rng);
        p.bias = Tensor<T>(Shape(1, 1, 1, out_c));
        p.stride = stride;
        p.padding = padding;
        return p;
    }

    std::size_t param_count() const { return kernel.size() + bias.size(); }
};

/// Depthwise-separable 3x3 convolution: per-channel 3x3 spatial filters
/// (depthwise, no bias) followed by 1x1 pointwise channel mixing with bias.
/// Channel expansion happens entirely in the pointwise stage.
template <typename T>
struct DwSepConvParams {
    Tensor<T> depthwise;  // (3,3,in_c,1)
    Tensor<T> pointwise;  // (1,1,in_c,out_c)
    Tensor<T> bias;       // (1,1,1,out_c)

    int in_channels() const { return depthwise.shape().w; }
    int out_channels() const { return pointwise.shape().c; }

    static DwSepConvParams he_uniform(int in_c, int out_c, Rng& rng) {
        DwSepConvParams p;
        p.depthwise = Tensor<T>(Shape(3, 3, in_c, 1));
        he_uniform_fill(p.depthwise, 9, rng);
        p.pointwise = Tensor<T>(Shape(1, 1, in_c, out_c));
        he_uniform_fill(p.pointwise, in_c, rng);
        p.bias = Tensor<T>(Shape(1, 1, 1, out_c));
        return p;
    }

    std::size_t param_count() const { return depthwise.size() + pointwise.size() + bias.size(); }
};

/// 9*in_c + in_c*out_c + out_c learnables; strictly below a dense 3x3 conv
/// (9*in_c*out_c + out_c) whenever out_c > 1.
inline std::size_t dw_sep_conv3x3_param_count(int in_c, int out_c) {
    return 9u * in_c + static_cast<std::size_t>(in_c) * out_c + out_c;
}

inline std::size_t dense_conv3x3_param_count(int in_c, int out_c) {
    return 9u * static_cast<std::size_t>(in_c) * out_c + out_c;
}

template <typename T>
struct BatchNormParams {
    Tensor<T> gamma;         // learnable scale, (1,1,1,c)
    Tensor<T> beta;          // learnable shift
    Tensor<T> running_mean;  // buffers, updated in train mode only
    Tensor<T> running_var;
    T eps = T(1e-5);
    T momentum = T(0.9);

    int channels() const { return gamma.shape().c; }

    static BatchNormParams init(int c) {
        BatchNormParams p;
        p.gamma = Tensor<T>::ones(Shape(1, 1, 1, c));
        p.beta = Tensor<T>(Shape(1, 1, 1, c));
        p.running_mean = Tensor<T>(Shape(1, 1, 1, c));
        p.running_var = Tensor<T>::ones(Shape(1, 1, 1, c));
        return p;
    }

    std::size_t param_count() const { return gamma.size() + beta.size(); }
};

template <typename T>
struct LinearParams {
    Tensor<T> weight;  // (1,1,in_features,out_features)
    Tensor<T> bias;    // (1,1,1,out_features)

    int in_features() const { return weight.shape().w; }
    int out_features() const { return weight.shape().c; }

    static LinearParams he_uniform(int in_f, int out_f, Rng& rng) {
        LinearParams p;
        p.weight = Tensor<T>(Shape(1, 1, in_f, out_f));
        he_uniform_fill(p.weight, in_f, rng);
        p.bias = Tensor<T>(Shape(1, 1, 1, out_f));
        return p;
    }

    std::size_t param_count() const { return weight.size() + bias.size(); }
};

namespace detail {

using pca::detail::check_same_tape;

inline int conv_out_dim(int in, int k, int stride, int pad) {
    const int out = (in + 2 * pad - k) / stride + 1;
    if (out < 1) throw std::invalid_argument("convolution output dim < 1");
    return out;
}

}  // namespace detail

/// Cross-correlation with stride and same/valid padding, differentiable in
/// the input, kernel and bias. Batch items run in parallel; kernel/bias
/// gradients are reduced per-sample in fixed batch order, so results do not
/// depend on the worker count.
template <typename T>
Value<T> conv2d(Tape<T>& tape, const Value<T>& x, const Value<T>& kernel, const Value<T>& bias, int stride,
                Padding padding) {
    detail::check_same_tape(tape, x, "conv2d");
    detail::check_same_tape(tape, kernel, "conv2d");
    detail::check_same_tape(tape, bias, "conv2d");
    const Shape& xs = x->value.shape();
    const Shape& ks = kernel->value.shape();
    const int kh = ks.n, kw = ks.h, in_c = ks.w, out_c = ks.c;
    if (xs.c != in_c) {
        throw std::invalid_argument("conv2d: input has " + std::to_string(xs.c) + " channels, kernel expects " +
                                    std::to_string(in_c));
    }
    if (bias->value.shape() != Shape(1, 1, 1, out_c)) {
        throw std::invalid_argument("conv2d: bias shape mismatch");
    }
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (padding == Padding::same && (kh % 2 == 0 || kw % 2 == 0)) {
        throw std::invalid_argument("conv2d: same padding requires odd kernel dims");
    }
    const int ph = padding == Padding::same ? (kh - 1) / 2 : 0;
    const int pw = padding == Padding::same ? (kw - 1) / 2 : 0;
    const Shape os(xs.n, detail::conv_out_dim(xs.h, kh, stride, ph), detail::conv_out_dim(xs.w, kw, stride, pw), out_c);

    Tensor<T> out(os);
    {
        const T* px = x->value.data();
        const T* pk = kernel->value.data();
        const T* pb = bias->value.data();
        T* po = out.data();
        parallel_for(xs.n, [&](int n) {
            const T* xn = px + static_cast<std::size_t>(n) * xs.h * xs.w * xs.c;
            T* on = po + static_cast<std::size_t>(n) * os.h * os.w * os.c;
            for (int oh = 0; oh < os.h; ++oh) {
                for (int ow = 0; ow < os.w; ++ow) {
                    T* acc = on + (static_cast<std::size_t>(oh) * os.w + ow) * out_c;
                    for (int oc = 0; oc < out_c; ++oc) acc[oc] = pb[oc];
                    for (int ky = 0; ky < kh; ++ky) {
                        const int ih = oh * stride - ph + ky;
                        if (ih < 0 || ih >= xs.h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int iw = ow * stride - pw + kx;
                            if (iw < 0 || iw >= xs.w) continue;
                            const T* xrow = xn + (static_cast<std::size_t>(ih) * xs.w + iw) * in_c;
                            const T* krow = pk + (static_cast<std::size_t>(ky) * kw + kx) * in_c * out_c;
                            for (int ic = 0; ic < in_c; ++ic) {
                                const T xv = xrow[ic];
                                const T* kr = krow + static_cast<std::size_t>(ic) * out_c;
                                for (int oc = 0; oc < out_c; ++oc) acc[oc] += xv * kr[oc];
                            }
                        }
                    }
                }
            }
        });
    }

    bool rg = x->requires_grad || kernel->requires_grad || bias->requires_grad;
    Value<T> result = tape.make(std::move(out), rg);
    if (rg) {
        tape.record(result, [x, kernel, bias, result, stride, ph, pw]() {
            const Shape& xs = x->value.shape();
            const Shape& ks = kernel->value.shape();
            const Shape& os = result->value.shape();
            const int kh = ks.n, kw = ks.h, in_c = ks.w, out_c = ks.c;
            const T* g = result->grad.data();
            const T* px = x->value.data();
            const T* pk = kernel->value.data();

            T* gx = nullptr;
            if (x->requires_grad) gx = x->grad_slot().data();
            // Per-sample kernel/bias partials, reduced in batch order below.
            std::vector<T> kpart, bpart;
            const std::size_t ksz = kernel->value.size();
            if (kernel->requires_grad) kpart.assign(static_cast<std::size_t>(xs.n) * ksz, T(0));
            if (bias->requires_grad) bpart.assign(static_cast<std::size_t>(xs.n) * out_c, T(0));

            parallel_for(xs.n, [&](int n) {
                const T* xn = px + static_cast<std::size_t>(n) * xs.h * xs.w * xs.c;
                const T* gn = g + static_cast<std::size_t>(n) * os.h * os.w * os.c;
                T* gxn = gx ? gx + static_cast<std::size_t>(n) * xs.h * xs.w * xs.c : nullptr;
                T* kp = kernel->requires_grad ? kpart.data() + static_cast<std::size_t>(n) * ksz : nullptr;
                T* bp = bias->requires_grad ? bpart.data() + static_cast<std::size_t>(n) * out_c : nullptr;
                for (int oh = 0; oh < os.h; ++oh) {
                    for (int ow = 0; ow < os.w; ++ow) {
                        const T* grow = gn + (static_cast<std::size_t>(oh) * os.w + ow) * out_c;
                        if (bp) {
                            for (int oc = 0; oc < out_c; ++oc) bp[oc] += grow[oc];
                        }
                        for (int ky = 0; ky < kh; ++ky) {
                            const int ih = oh * stride - ph + ky;
                            if (ih < 0 || ih >= xs.h) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iw = ow * stride - pw + kx;
                                if (iw < 0 || iw >= xs.w) continue;
                                const std::size_t xoff = (static_cast<std::size_t>(ih) * xs.w + iw) * in_c;
                                const std::size_t koff = (static_cast<std::size_t>(ky) * kw + kx) * in_c * out_c;
                                if (gxn) {
                                    for (int ic = 0; ic < in_c; ++ic) {
                                        const T* kr = pk + koff + static_cast<std::size_t>(ic) * out_c;
                                        T acc = T(0);
                                        for (int oc = 0; oc < out_c; ++oc) acc += grow[oc] * kr[oc];
                                        gxn[xoff + ic] += acc;
                                    }
                                }
                                if (kp) {
                                    const T* xrow = xn + xoff;
                                    for (int ic = 0; ic < in_c; ++ic) {
                                        const T xv = xrow[ic];
                                        T* kr = kp + koff + static_cast<std::size_t>(ic) * out_c;
                                        for (int oc = 0; oc < out_c; ++oc) kr[oc] += xv * grow[oc];
                                    }
                                }
                            }
                        }
                    }
                }
            });

            if (kernel->requires_grad) {
                T* gk = kernel->grad_slot().data();
                for (int n = 0; n < xs.n; ++n) {
                    const T* kp = kpart.data() + static_cast<std::size_t>(n) * ksz;
                    for (std::size_t i = 0; i < ksz; ++i) gk[i] += kp[i];
                }
            }
            if (bias->requires_grad) {
                T* gb = bias->grad_slot().data();
                for (int n = 0; n < xs.n; ++n) {
                    const T* bp = bpart.data() + static_cast<std::size_t>(n) * out_c;
                    for (int oc = 0; oc < out_c; ++oc) gb[oc] += bp[oc];
                }
            }
        });
    }
    return result;
}

template <typename T>
Value<T> conv2d(Tape<T>& tape, const Value<T>& x, const Value<T>& kernel, const Value<T>& bias,
                const Conv2dParams<T>& cfg) {
    return conv2d(tape, x, kernel, bias, cfg.stride, cfg.padding);
}

/// Per-channel 3x3 convolution (depthwise, multiplier 1, stride 1, same
/// padding, no bias). kernel is (3,3,c,1).
template <typename T>
Value<T> depthwise_conv3x3(Tape<T>& tape, const Value<T>& x, const Value<T>& kernel) {
    detail::check_same_tape(tape, x, "depthwise_conv3x3");
    detail::check_same_tape(tape, kernel, "depthwise_conv3x3");
    const Shape& xs = x->value.shape();
    const Shape& ks = kernel->value.shape();
    if (ks.n != 3 || ks.h != 3 || ks.c != 1) {
        throw std::invalid_argument("depthwise_conv3x3: kernel must be (3,3,c,1), got " + ks.str());
    }
    if (xs.c != ks.w) {
        throw std::invalid_argument("depthwise_conv3x3: input has " + std::to_string(xs.c) +
                                    " channels, kernel expects " + std::to_string(ks.w));
    }
    const int C = xs.c;

    Tensor<T> out(xs);
    {
        const T* px = x->value.data();
        const T* pk = kernel->value.data();
        T* po = out.data();
        parallel_for(xs.n, [&](int n) {
            const std::size_t nbase = static_cast<std::size_t>(n) * xs.h * xs.w * C;
            for (int oh = 0; oh < xs.h; ++oh) {
                for (int ow = 0; ow < xs.w; ++ow) {
                    T* acc = po + nbase + (static_cast<std::size_t>(oh) * xs.w + ow) * C;
                    for (int c = 0; c < C; ++c) acc[c] = T(0);
                    for (int ky = 0; ky < 3; ++ky) {
                        const int ih = oh - 1 + ky;
                        if (ih < 0 || ih >= xs.h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int iw = ow - 1 + kx;
                            if (iw < 0 || iw >= xs.w) continue;
                            const T* xrow = px + nbase + (static_cast<std::size_t>(ih) * xs.w + iw) * C;
                            const T* krow = pk + (static_cast<std::size_t>(ky) * 3 + kx) * C;
                            for (int c = 0; c < C; ++c) acc[c] += xrow[c] * krow[c];
                        }
                    }
                }
            }
        });
    }

    bool rg = x->requires_grad || kernel->requires_grad;
    Value<T> result = tape.make(std::move(out), rg);
    if (rg) {
        tape.record(result, [x, kernel, result]() {
            const Shape& xs = x->value.shape();
            const int C = xs.c;
            const T* g = result->grad.data();
            const T* px = x->value.data();
            const T* pk = kernel->value.data();
            T* gx = x->requires_grad ? x->grad_slot().data() : nullptr;
            std::vector<T> kpart;
            const std::size_t ksz = kernel->value.size();
            if (kernel->requires_grad) kpart.assign(static_cast<std::size_t>(xs.n) * ksz, T(0));

            parallel_for(xs.n, [&](int n) {
                const std::size_t nbase = static_cast<std::size_t>(n) * xs.h * xs.w * C;
                T* kp = kernel->requires_grad ? kpart.data() + static_cast<std::size_t>(n) * ksz : nullptr;
                for (int oh = 0; oh < xs.h; ++oh) {
                    for (int ow = 0; ow < xs.w; ++ow) {
                        const T* grow = g + nbase + (static_cast<std::size_t>(oh) * xs.w + ow) * C;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int ih = oh - 1 + ky;
                            if (ih < 0 || ih >= xs.h) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int iw = ow - 1 + kx;
                                if (iw < 0 || iw >= xs.w) continue;
                                const std::size_t xoff = nbase + (static_cast<std::size_t>(ih) * xs.w + iw) * C;
                                const std::size_t koff = (static_cast<std::size_t>(ky) * 3 + kx) * C;
                                if (gx) {
                                    const T* krow = pk + koff;
                                    for (int c = 0; c < C; ++c) gx[xoff + c] += grow[c] * krow[c];
                                }
                                if (kp) {
                                    const T* xrow = px + xoff;
                                    for (int c = 0; c < C; ++c) kp[koff + c] += grow[c] * xrow[c];
                                }
                            }
                        }
                    }
                }
            });

            if (kernel->requires_grad) {
                T* gk = kernel->grad_slot().data();
                for (int n = 0; n < xs.n; ++n) {
                    const T* kp = kpart.data() + static_cast<std::size_t>(n) * ksz;
                    for (std::size_t i = 0; i < ksz; ++i) gk[i] += kp[i];
                }
            }
        });
    }
    return result;
}

/// Depthwise 3x3 then pointwise 1x1 with bias; spatial dims preserved.
template <typename T>
Value<T> dw_sep_conv3x3(Tape<T>& tape, const Value<T>& x, const Value<T>& depthwise, const Value<T>& pointwise,
                        const Value<T>& bias) {
    Value<T> mid = depthwise_conv3x3(tape, x, depthwise);
    return conv2d(tape, mid, pointwise, bias, 1, Padding::same);
}

/// Batch normalization over (n, h, w) per channel. Train mode normalizes
/// with batch statistics (biased variance), updates running stats with
/// momentum, and backpropagates through the statistics. Eval mode uses the
/// running stats. Training requires n*h*w >= 2.
template <typename T>
Value<T> batch_norm(Tape<T>& tape, const Value<T>& x, const Value<T>& gamma, const Value<T>& beta,
                    BatchNormParams<T>& state, bool train) {
    detail::check_same_tape(tape, x, "batch_norm");
    detail::check_same_tape(tape, gamma, "batch_norm");
    detail::check_same_tape(tape, beta, "batch_norm");
    const Shape& xs = x->value.shape();
    const int C = xs.c;
    if (gamma->value.shape() != Shape(1, 1, 1, C) || beta->value.shape() != Shape(1, 1, 1, C)) {
        throw std::invalid_argument("batch_norm: parameter length does not match " + std::to_string(C) + " channels");
    }
    const std::size_t m = static_cast<std::size_t>(xs.n) * xs.h * xs.w;
    if (train && m < 2) {
        throw std::invalid_argument("batch_norm: train mode needs n*h*w >= 2");
    }

    std::vector<T> mean(C, T(0)), inv_std(C, T(0));
    if (train) {
        std::vector<T> var(C, T(0));
        const T* px = x->value.data();
        for (std::size_t p = 0; p < m; ++p) {
            const T* row = px + p * C;
            for (int c = 0; c < C; ++c) mean[c] += row[c];
        }
        for (int c = 0; c < C; ++c) mean[c] /= static_cast<T>(m);
        for (std::size_t p = 0; p < m; ++p) {
            const T* row = px + p * C;
            for (int c = 0; c < C; ++c) {
                const T d = row[c] - mean[c];
                var[c] += d * d;
            }
        }
        for (int c = 0; c < C; ++c) var[c] /= static_cast<T>(m);
        for (int c = 0; c < C; ++c) inv_std[c] = T(1) / std::sqrt(var[c] + state.eps);
        // running <- momentum * running + (1 - momentum) * batch
        for (int c = 0; c < C; ++c) {
            state.running_mean[c] = state.momentum * state.running_mean[c] + (T(1) - state.momentum) * mean[c];
            state.running_var[c] = state.momentum * state.running_var[c] + (T(1) - state.momentum) * var[c];
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean[c] = state.running_mean[c];
            inv_std[c] = T(1) / std::sqrt(state.running_var[c] + state.eps);
        }
    }

    auto xhat = std::make_shared<std::vector<T>>(x->value.size());
    Tensor<T> out(xs);
    {
        const T* px = x->value.data();
        const T* pg = gamma->value.data();
        const T* pb = beta->value.data();
        T* po = out.data();
        T* ph = xhat->data();
        for (std::size_t p = 0; p < m; ++p) {
            const T* row = px + p * C;
            T* orow = po + p * C;
            T* hrow = ph + p * C;
            for (int c = 0; c < C; ++c) {
                hrow[c] = (row[c] - mean[c]) * inv_std[c];
                orow[c] = pg[c] * hrow[c] + pb[c];
            }
        }
    }

    bool rg = x->requires_grad || gamma->requires_grad || beta->requires_grad;
    Value<T> result = tape.make(std::move(out), rg);
    if (rg) {
        auto inv_std_copy = std::make_shared<std::vector<T>>(inv_std);
        tape.record(result, [x, gamma, beta, result, xhat, inv_std_copy, train, m]() {
            const Shape& xs = x->value.shape();
            const int C = xs.c;
            const T* g = result->grad.data();
            const T* hat = xhat->data();
            const std::vector<T>& istd = *inv_std_copy;

            std::vector<T> sum_g(C, T(0)), sum_gh(C, T(0));
            for (std::size_t p = 0; p < m; ++p) {
                const T* grow = g + p * C;
                const T* hrow = hat + p * C;
                for (int c = 0; c < C; ++c) {
                    sum_g[c] += grow[c];
                    sum_gh[c] += grow[c] * hrow[c];
                }
            }
            if (gamma->requires_grad) {
                T* gg = gamma->grad_slot().data();
                for (int c = 0; c < C; ++c) gg[c] += sum_gh[c];
            }
            if (beta->requires_grad) {
                T* gb = beta->grad_slot().data();
                for (int c = 0; c < C; ++c) gb[c] += sum_g[c];
            }
            if (x->requires_grad) {
                T* gx = x->grad_slot().data();
                const T* pg = gamma->value.data();
                const T inv_m = T(1) / static_cast<T>(m);
                for (std::size_t p = 0; p < m; ++p) {
                    const T* grow = g + p * C;
                    const T* hrow = hat + p * C;
                    T* gxrow = gx + p * C;
                    for (int c = 0; c < C; ++c) {
                        if (train) {
                            // d/dx through batch mean and variance
                            gxrow[c] += pg[c] * istd[c] *
                                        (grow[c] - inv_m * sum_g[c] - hrow[c] * inv_m * sum_gh[c]);
                        } else {
                            gxrow[c] += pg[c] * istd[c] * grow[c];
                        }
                    }
                }
            }
        });
    }
    return result;
}

/// Affine map of spatially pooled features: (n,1,1,c) -> (n,1,1,out).
template <typename T>
Value<T> linear(Tape<T>& tape, const Value<T>& x, const Value<T>& weight, const Value<T>& bias) {
    detail::check_same_tape(tape, x, "linear");
    detail::check_same_tape(tape, weight, "linear");
    detail::check_same_tape(tape, bias, "linear");
    const Shape& xs = x->value.shape();
    const Shape& ws = weight->value.shape();
    if (xs.h != 1 || xs.w != 1) {
        throw std::invalid_argument("linear: input must be spatially pooled to 1x1, got " + xs.str());
    }
    if (ws.n != 1 || ws.h != 1 || ws.w != xs.c) {
        throw std::invalid_argument("linear: weight shape " + ws.str() + " does not match input " + xs.str());
    }
    const int in_f = ws.w, out_f = ws.c;
    if (bias->value.shape() != Shape(1, 1, 1, out_f)) {
        throw std::invalid_argument("linear: bias shape mismatch");
    }

    Tensor<T> out(Shape(xs.n, 1, 1, out_f));
    {
        const T* px = x->value.data();
        const T* pw = weight->value.data();
        const T* pb = bias->value.data();
        T* po = out.data();
        for (int n = 0; n < xs.n; ++n) {
            const T* xrow = px + static_cast<std::size_t>(n) * in_f;
            T* orow = po + static_cast<std::size_t>(n) * out_f;
            for (int o = 0; o < out_f; ++o) orow[o] = pb[o];
            for (int i = 0; i < in_f; ++i) {
                const T xv = xrow[i];
                const T* wrow = pw + static_cast<std::size_t>(i) * out_f;
                for (int o = 0; o < out_f; ++o) orow[o] += xv * wrow[o];
            }
        }
    }

    bool rg = x->requires_grad || weight->requires_grad || bias->requires_grad;
    Value<T> result = tape.make(std::move(out), rg);
    if (rg) {
        tape.record(result, [x, weight, bias, result]() {
            const Shape& xs = x->value.shape();
            const int in_f = weight->value.shape().w;
            const int out_f = weight->value.shape().c;
            const T* g = result->grad.data();
            const T* px = x->value.data();
            const T* pw = weight->value.data();
            T* gx = x->requires_grad ? x->grad_slot().data() : nullptr;
            T* gw = weight->requires_grad ? weight->grad_slot().data() : nullptr;
            T* gb = bias->requires_grad ? bias->grad_slot().data() : nullptr;
            for (int n = 0; n < xs.n; ++n) {
                const T* grow = g + static_cast<std::size_t>(n) * out_f;
                const T* xrow = px + static_cast<std::size_t>(n) * in_f;
                if (gb) {
                    for (int o = 0; o < out_f; ++o) gb[o] += grow[o];
                }
                for (int i = 0; i < in_f; ++i) {
                    const T* wrow = pw + static_cast<std::size_t>(i) * out_f;
                    if (gx) {
                        T acc = T(0);
                        for (int o = 0; o < out_f; ++o) acc += grow[o] * wrow[o];
                        gx[static_cast<std::size_t>(n) * in_f + i] += acc;
                    }
                    if (gw) {
                        T* gwrow = gw + static_cast<std::size_t>(i) * out_f;
                        const T xv = xrow[i];
                        for (int o = 0; o < out_f; ++o) gwrow[o] += xv * grow[o];
                    }
                }
            }
        });
    }
    return result;
}

}  // namespace pca::nn
