#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "pca/autodiff.hpp"
#include "pca/tensor.hpp"

namespace pca::ops {

namespace detail {

using pca::detail::any_requires_grad;
using pca::detail::check_same_tape;

/// b broadcasts over a when every dim of b is either 1 or equal to a's dim.
inline bool broadcastable(const Shape& a, const Shape& b) {
    auto ok = [](int ad, int bd) { return bd == 1 || bd == ad; };
    return ok(a.n, b.n) && ok(a.h, b.h) && ok(a.w, b.w) && ok(a.c, b.c);
}

inline std::size_t broadcast_index(const Shape& b, int n, int h, int w, int c) {
    const int bn = b.n == 1 ? 0 : n;
    const int bh = b.h == 1 ? 0 : h;
    const int bw = b.w == 1 ? 0 : w;
    const int bc = b.c == 1 ? 0 : c;
    return ((static_cast<std::size_t>(bn) * b.h + bh) * b.w + bw) * static_cast<std::size_t>(b.c) + bc;
}

}  // namespace detail

/// out[i] = a[i] * b[broadcast(i)]. b may have singleton dims (the attention
/// gate uses c=1 broadcast over channels, the score weighting uses h=w=1).
template <typename T>
Value<T> multiply(Tape<T>& tape, const Value<T>& a, const Value<T>& b) {
    detail::check_same_tape(tape, a, "multiply");
    detail::check_same_tape(tape, b, "multiply");
    const Shape& sa = a->value.shape();
    const Shape& sb = b->value.shape();
    if (!detail::broadcastable(sa, sb)) {
        throw std::invalid_argument("multiply: shape " + sb.str() + " does not broadcast over " + sa.str());
    }

    Tensor<T> out(sa);
    const T* pa = a->value.data();
    const T* pb = b->value.data();
    T* po = out.data();
    std::size_t i = 0;
    for (int n = 0; n < sa.n; ++n)
        for (int h = 0; h < sa.h; ++h)
            for (int w = 0; w < sa.w; ++w)
                for (int c = 0; c < sa.c; ++c, ++i)
                    po[i] = pa[i] * pb[detail::broadcast_index(sb, n, h, w, c)];

    bool rg = a->requires_grad || b->requires_grad;
    Value<T> result = tape.make(std::move(out), rg);
    if (rg) {
        tape.record(result, [a, b, result]() {
            const Shape& sa = a->value.shape();
            const Shape& sb = b->value.shape();
            const T* g = result->grad.data();
            const T* pa = a->value.data();
            const T* pb = b->value.data();
            T* ga = a->requires_grad ? a->grad_slot().data() : nullptr;
            T* gb = b->requires_grad ? b->grad_slot().data() : nullptr;
            std::size_t i = 0;
            for (int n = 0; n < sa.n; ++n)
                for (int h = 0; h < sa.h; ++h)
                    for (int w = 0; w < sa.w; ++w)
                        for (int c = 0; c < sa.c; ++c, ++i) {
                            const std::size_t bi = detail::broadcast_index(sb, n, h, w, c);
                            if (ga) ga[i] += g[i] * pb[bi];
                            if (gb) gb[bi] += g[i] * pa[i];
                        }
        });
    }
    return result;
}

/// Elementwise sum; b may broadcast over a like multiply.
template <typename T>
Value<T> add(Tape<T>& tape, const Value<T>& a, const Value<T>& b) {
    detail::check_same_tape(tape, a, "add");
    detail::check_same_tape(tape, b, "add");
    const Shape& sa = a->value.shape();
    const Shape& sb = b->value.shape();
    if (!detail::broadcastable(sa, sb)) {
        throw std::invalid_argument("add: shape " + sb.str() + " does not broadcast over " + sa.str());
    }

    Tensor<T> out(sa);
    const T* pa = a->value.data();
    const T* pb = b->value.data();
    T* po = out.data();
    std::size_t i = 0;
    for (int n = 0; n < sa.n; ++n)
        for (int h = 0; h < sa.h; ++h)
            for (int w = 0; w < sa.w; ++w)
                for (int c = 0; c < sa.c; ++c, ++i)
                    po[i] = pa[i] + pb[detail::broadcast_index(sb, n, h, w, c)];

    bool rg = a->requires_grad || b->requires_grad;
    Value<T> result = tape.make(std::move(out), rg);
    if (rg) {
        tape.record(result, [a, b, result]() {
            const Shape& sa = a->value.shape();
            const Shape& sb = b->value.shape();
            const T* g = result->grad.data();
            T* ga = a->requires_grad ? a->grad_slot().data() : nullptr;
            T* gb = b->requires_grad ? b->grad_slot().data() : nullptr;
            std::size_t i = 0;
            for (int n = 0; n < sa.n; ++n)
                for (int h = 0; h < sa.h; ++h)
                    for (int w = 0; w < sa.w; ++w)
                        for (int c = 0; c < sa.c; ++c, ++i) {
                            if (ga) ga[i] += g[i];
                            if (gb) gb[detail::broadcast_index(sb, n, h, w, c)] += g[i];
                        }
        });
    }
    return result;
}

/// out = k * x for a plain constant k.
template <typename T>
Value<T> scale(Tape<T>& tape, const Value<T>& x, T k) {
    detail::check_same_tape(tape, x, "scale");
    Tensor<T> out(x->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * x->value[i];
    Value<T> result = tape.make(std::move(out), x->requires_grad);
    if (x->requires_grad) {
        tape.record(result, [x, result, k]() {
            T* gx = x->grad_slot().data();
            const T* g = result->grad.data();
            for (std::size_t i = 0; i < x->value.size(); ++i) gx[i] += k * g[i];
        });
    }
    return result;
}

/// max(0, x); subgradient 0 at 0.
template <typename T>
Value<T> relu(Tape<T>& tape, const Value<T>& x) {
    detail::check_same_tape(tape, x, "relu");
    Tensor<T> out(x->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->value[i] > T(0) ? x->value[i] : T(0);
    Value<T> result = tape.make(std::move(out), x->requires_grad);
    if (x->requires_grad) {
        tape.record(result, [x, result]() {
            T* gx = x->grad_slot().data();
            const T* g = result->grad.data();
            const T* v = x->value.data();
            for (std::size_t i = 0; i < x->value.size(); ++i) {
                if (v[i] > T(0)) gx[i] += g[i];
            }
        });
    }
    return result;
}

/// Per-channel spatial max, (n,h,w,c) -> (n,1,1,c). The backward pass routes
/// the whole incoming gradient to the first argmax position in row-major
/// scan order (deterministic tie break).
template <typename T>
Value<T> global_max_pool(Tape<T>& tape, const Value<T>& x) {
    detail::check_same_tape(tape, x, "global_max_pool");
    const Shape& s = x->value.shape();
    Tensor<T> out(Shape(s.n, 1, 1, s.c));
    // argmax flat offsets, one per (n, c)
    auto argmax = std::make_shared<std::vector<std::size_t>>(static_cast<std::size_t>(s.n) * s.c);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            std::size_t best = x->value.index(n, 0, 0, c);
            T best_v = x->value[best];
            for (int h = 0; h < s.h; ++h)
                for (int w = 0; w < s.w; ++w) {
                    const std::size_t idx = x->value.index(n, h, w, c);
                    if (x->value[idx] > best_v) {
                        best_v = x->value[idx];
                        best = idx;
                    }
                }
            out.at(n, 0, 0, c) = best_v;
            (*argmax)[static_cast<std::size_t>(n) * s.c + c] = best;
        }
    }
    Value<T> result = tape.make(std::move(out), x->requires_grad);
    if (x->requires_grad) {
        tape.record(result, [x, result, argmax]() {
            const Shape& s = x->value.shape();
            T* gx = x->grad_slot().data();
            const T* g = result->grad.data();
            for (int n = 0; n < s.n; ++n)
                for (int c = 0; c < s.c; ++c) {
                    const std::size_t flat = static_cast<std::size_t>(n) * s.c + c;
                    gx[(*argmax)[flat]] += g[flat];
                }
        });
    }
    return result;
}

/// Per-channel spatial mean, (n,h,w,c) -> (n,1,1,c). Backward distributes
/// 1/(h*w) of the gradient to every spatial position.
template <typename T>
Value<T> global_avg_pool(Tape<T>& tape, const Value<T>& x) {
    detail::check_same_tape(tape, x, "global_avg_pool");
    const Shape& s = x->value.shape();
    const T inv = T(1) / static_cast<T>(static_cast<std::size_t>(s.h) * s.w);
    Tensor<T> out(Shape(s.n, 1, 1, s.c));
    for (int n = 0; n < s.n; ++n)
        for (int h = 0; h < s.h; ++h)
            for (int w = 0; w < s.w; ++w)
                for (int c = 0; c < s.c; ++c)
                    out.at(n, 0, 0, c) += x->value.at(n, h, w, c);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;
    Value<T> result = tape.make(std::move(out), x->requires_grad);
    if (x->requires_grad) {
        tape.record(result, [x, result, inv]() {
            const Shape& s = x->value.shape();
            T* gx = x->grad_slot().data();
            const T* g = result->grad.data();
            for (int n = 0; n < s.n; ++n)
                for (int h = 0; h < s.h; ++h)
                    for (int w = 0; w < s.w; ++w)
                        for (int c = 0; c < s.c; ++c)
                            gx[x->value.index(n, h, w, c)] += inv * g[static_cast<std::size_t>(n) * s.c + c];
        });
    }
    return result;
}

/// Non-overlapping 2x2 window means. Requires even spatial dims.
template <typename T>
Value<T> avg_pool2x2(Tape<T>& tape, const Value<T>& x) {
    detail::check_same_tape(tape, x, "avg_pool2x2");
    const Shape& s = x->value.shape();
    if (s.h % 2 != 0 || s.w % 2 != 0) {
        throw std::invalid_argument("avg_pool2x2: spatial dims must be even, got " + s.str());
    }
    const Shape os(s.n, s.h / 2, s.w / 2, s.c);
    Tensor<T> out(os);
    for (int n = 0; n < s.n; ++n)
        for (int oh = 0; oh < os.h; ++oh)
            for (int ow = 0; ow < os.w; ++ow)
                for (int c = 0; c < s.c; ++c) {
                    const T sum = x->value.at(n, 2 * oh, 2 * ow, c) + x->value.at(n, 2 * oh, 2 * ow + 1, c) +
                                  x->value.at(n, 2 * oh + 1, 2 * ow, c) + x->value.at(n, 2 * oh + 1, 2 * ow + 1, c);
                    out.at(n, oh, ow, c) = sum / T(4);
                }
    Value<T> result = tape.make(std::move(out), x->requires_grad);
    if (x->requires_grad) {
        tape.record(result, [x, result]() {
            const Shape& s = x->value.shape();
            const Shape& os = result->value.shape();
            T* gx = x->grad_slot().data();
            const T* g = result->grad.data();
            for (int n = 0; n < s.n; ++n)
                for (int oh = 0; oh < os.h; ++oh)
                    for (int ow = 0; ow < os.w; ++ow)
                        for (int c = 0; c < s.c; ++c) {
                            const T q = g[result->value.index(n, oh, ow, c)] / T(4);
                            gx[x->value.index(n, 2 * oh, 2 * ow, c)] += q;
                            gx[x->value.index(n, 2 * oh, 2 * ow + 1, c)] += q;
                            gx[x->value.index(n, 2 * oh + 1, 2 * ow, c)] += q;
                            gx[x->value.index(n, 2 * oh + 1, 2 * ow + 1, c)] += q;
                        }
        });
    }
    return result;
}

/// Concatenation along the channel axis. All inputs share (n, h, w).
template <typename T>
Value<T> concat_channels(Tape<T>& tape, const std::vector<Value<T>>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
    for (const auto& x : xs) detail::check_same_tape(tape, x, "concat_channels");
    const Shape& s0 = xs[0]->value.shape();
    int total_c = 0;
    for (const auto& x : xs) {
        const Shape& s = x->value.shape();
        if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
            throw std::invalid_argument("concat_channels: mismatched (n,h,w): " + s.str() + " vs " + s0.str());
        }
        total_c += s.c;
    }
    const Shape os(s0.n, s0.h, s0.w, total_c);
    Tensor<T> out(os);
    for (int n = 0; n < os.n; ++n)
        for (int h = 0; h < os.h; ++h)
            for (int w = 0; w < os.w; ++w) {
                int base = 0;
                for (const auto& x : xs) {
                    const int xc = x->value.shape().c;
                    const T* src = x->value.data() + x->value.index(n, h, w, 0);
                    T* dst = out.data() + out.index(n, h, w, base);
                    std::copy(src, src + xc, dst);
                    base += xc;
                }
            }
    bool rg = detail::any_requires_grad(xs);
    Value<T> result = tape.make(std::move(out), rg);
    if (rg) {
        tape.record(result, [xs, result]() {
            const Shape& os = result->value.shape();
            const T* g = result->grad.data();
            for (int n = 0; n < os.n; ++n)
                for (int h = 0; h < os.h; ++h)
                    for (int w = 0; w < os.w; ++w) {
                        int base = 0;
                        for (const auto& x : xs) {
                            const int xc = x->value.shape().c;
                            if (x->requires_grad) {
                                T* gx = x->grad_slot().data() + x->value.index(n, h, w, 0);
                                const T* gs = g + result->value.index(n, h, w, base);
                                for (int c = 0; c < xc; ++c) gx[c] += gs[c];
                            }
                            base += xc;
                        }
                    }
        });
    }
    return result;
}

/// Splits channels into `groups` equal contiguous blocks and averages within
/// each block: (n,h,w,c) -> (n,h,w,groups). With groups == 1 this is the
/// plain channel mean.
template <typename T>
Value<T> channel_group_mean(Tape<T>& tape, const Value<T>& x, int groups) {
    detail::check_same_tape(tape, x, "channel_group_mean");
    const Shape& s = x->value.shape();
    if (groups < 1 || s.c % groups != 0) {
        throw std::invalid_argument("channel_group_mean: " + std::to_string(s.c) + " channels not divisible into " +
                                    std::to_string(groups) + " groups");
    }
    const int gsize = s.c / groups;
    const T inv = T(1) / static_cast<T>(gsize);
    const Shape os(s.n, s.h, s.w, groups);
    Tensor<T> out(os);
    const T* px = x->value.data();
    T* po = out.data();
    const std::size_t pixels = static_cast<std::size_t>(s.n) * s.h * s.w;
    for (std::size_t p = 0; p < pixels; ++p) {
        const T* xin = px + p * s.c;
        T* o = po + p * groups;
        for (int gi = 0; gi < groups; ++gi) {
            T acc = T(0);
            for (int j = 0; j < gsize; ++j) acc += xin[gi * gsize + j];
            o[gi] = acc * inv;
        }
    }
    Value<T> result = tape.make(std::move(out), x->requires_grad);
    if (x->requires_grad) {
        tape.record(result, [x, result, groups, gsize, inv]() {
            const Shape& s = x->value.shape();
            T* gx = x->grad_slot().data();
            const T* g = result->grad.data();
            const std::size_t pixels = static_cast<std::size_t>(s.n) * s.h * s.w;
            for (std::size_t p = 0; p < pixels; ++p) {
                T* gxi = gx + p * s.c;
                const T* gi = g + p * groups;
                for (int k = 0; k < groups; ++k) {
                    const T q = gi[k] * inv;
                    for (int j = 0; j < gsize; ++j) gxi[k * gsize + j] += q;
                }
            }
        });
    }
    return result;
}

/// Softmax over the channel axis at every (n,h,w) position.
template <typename T>
Value<T> channel_softmax(Tape<T>& tape, const Value<T>& x) {
    detail::check_same_tape(tape, x, "channel_softmax");
    const Shape& s = x->value.shape();
    Tensor<T> out(s);
    const T* px = x->value.data();
    T* po = out.data();
    const std::size_t pixels = static_cast<std::size_t>(s.n) * s.h * s.w;
    for (std::size_t p = 0; p < pixels; ++p) {
        const T* xin = px + p * s.c;
        T* o = po + p * s.c;
        T mx = xin[0];
        for (int c = 1; c < s.c; ++c) mx = std::max(mx, xin[c]);
        T denom = T(0);
        for (int c = 0; c < s.c; ++c) {
            o[c] = std::exp(xin[c] - mx);
            denom += o[c];
        }
        for (int c = 0; c < s.c; ++c) o[c] /= denom;
    }
    Value<T> result = tape.make(std::move(out), x->requires_grad);
    if (x->requires_grad) {
        tape.record(result, [x, result]() {
            const Shape& s = x->value.shape();
            T* gx = x->grad_slot().data();
            const T* g = result->grad.data();
            const T* y = result->value.data();
            const std::size_t pixels = static_cast<std::size_t>(s.n) * s.h * s.w;
            for (std::size_t p = 0; p < pixels; ++p) {
                const T* yp = y + p * s.c;
                const T* gp = g + p * s.c;
                T* gxp = gx + p * s.c;
                T dot = T(0);
                for (int c = 0; c < s.c; ++c) dot += gp[c] * yp[c];
                for (int c = 0; c < s.c; ++c) gxp[c] += yp[c] * (gp[c] - dot);
            }
        });
    }
    return result;
}

/// Sum of all elements -> scalar (1,1,1,1).
template <typename T>
Value<T> sum(Tape<T>& tape, const Value<T>& x) {
    detail::check_same_tape(tape, x, "sum");
    T acc = T(0);
    for (std::size_t i = 0; i < x->value.size(); ++i) acc += x->value[i];
    Value<T> result = tape.make(Tensor<T>::scalar(acc), x->requires_grad);
    if (x->requires_grad) {
        tape.record(result, [x, result]() {
            T* gx = x->grad_slot().data();
            const T g = result->grad[0];
            for (std::size_t i = 0; i < x->value.size(); ++i) gx[i] += g;
        });
    }
    return result;
}

/// Selects one element as a scalar node (used e.g. to pull a single class
/// logit out for explanation backprops).
template <typename T>
Value<T> pick(Tape<T>& tape, const Value<T>& x, int n, int h, int w, int c) {
    detail::check_same_tape(tape, x, "pick");
    const Shape& s = x->value.shape();
    if (n < 0 || n >= s.n || h < 0 || h >= s.h || w < 0 || w >= s.w || c < 0 || c >= s.c) {
        throw std::invalid_argument("pick: index out of range for shape " + s.str());
    }
    const std::size_t idx = x->value.index(n, h, w, c);
    Value<T> result = tape.make(Tensor<T>::scalar(x->value[idx]), x->requires_grad);
    if (x->requires_grad) {
        tape.record(result, [x, result, idx]() { x->grad_slot()[idx] += result->grad[0]; });
    }
    return result;
}

}  // namespace pca::ops
