#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include "pca/autodiff.hpp"
#include "pca/nn.hpp"
#include "pca/ops.hpp"
#include "pca/rng.hpp"
#include "pca/tensor.hpp"

namespace pca::cwa {

/// Block configuration. `classes` groups of `k` expanded channels are carved
/// out of the dw-separable expansion, one group per class.
struct CwaConfig {
    int classes = 2;
    int k = 8;
    int in_channels = 1;
    bool softmax_scores = false;  // normalize scores before weighting the maps
    bool residual = false;        // emit F + F*CA instead of F*CA

    void validate() const {
        if (classes < 2) throw std::invalid_argument("cwa: classes must be >= 2, got " + std::to_string(classes));
        if (k < 1) throw std::invalid_argument("cwa: k must be >= 1, got " + std::to_string(k));
        if (in_channels < 1)
            throw std::invalid_argument("cwa: in_channels must be >= 1, got " + std::to_string(in_channels));
    }

    int expanded_channels() const { return classes * k; }
};

/// Learnable scalars per block: depthwise 9C, pointwise C*kL + kL bias,
/// batch norm affine 2*kL. Running statistics are buffers, not counted.
inline std::size_t cwa_param_count(int in_channels, int classes, int k) {
    const std::size_t c = static_cast<std::size_t>(in_channels);
    const std::size_t kl = static_cast<std::size_t>(classes) * static_cast<std::size_t>(k);
    return 9 * c + c * kl + 3 * kl;
}

template <typename T>
struct CwaParams {
    nn::DwSepConvParams<T> expand;
    nn::BatchNormParams<T> bn;

    static CwaParams he_uniform(const CwaConfig& cfg, Rng& rng) {
        cfg.validate();
        CwaParams p{nn::DwSepConvParams<T>::he_uniform(cfg.in_channels, cfg.expanded_channels(), rng),
                    nn::BatchNormParams<T>::init(cfg.expanded_channels())};
        return p;
    }

    std::size_t param_count() const { return expand.param_count() + 2 * static_cast<std::size_t>(bn.gamma.size()); }
};

/// Per-forward leaves over the block parameters, in a fixed order.
template <typename T>
struct CwaLeaves {
    Value<T> dw, pw, bias, gamma, beta;
};

template <typename T>
CwaLeaves<T> bind(Tape<T>& tape, const CwaParams<T>& p, bool trainable = true) {
    return {tape.leaf(p.expand.depthwise, trainable), tape.leaf(p.expand.pointwise, trainable),
            tape.leaf(p.expand.bias, trainable), tape.leaf(p.bn.gamma, trainable), tape.leaf(p.bn.beta, trainable)};
}

/// F -> relu(bn(dw_sep_conv3x3(F))), the expanded per-class feature stack.
template <typename T>
Value<T> expand_features(Tape<T>& tape, const Value<T>& x, const CwaLeaves<T>& p, nn::BatchNormParams<T>& bn_state,
                         bool train) {
    auto conv = nn::dw_sep_conv3x3(tape, x, p.dw, p.pw, p.bias);
    auto normed = nn::batch_norm(tape, conv, p.gamma, p.beta, bn_state, train);
    return ops::relu(tape, normed);
}

namespace detail {
inline int group_width(const Shape& s, int classes, const char* who) {
    if (classes < 1) throw std::invalid_argument(std::string(who) + ": classes must be >= 1");
    if (s.c % classes != 0) {
        throw std::invalid_argument(std::string(who) + ": " + std::to_string(s.c) +
                                    " channels do not split into " + std::to_string(classes) + " class groups");
    }
    return s.c / classes;
}
}  // namespace detail

/// Per-class importance: s_i = mean over the class group of each channel's
/// spatial max. Gradients route through the pooling argmax. (n,h,w,kL) -> (n,1,1,L).
template <typename T>
Value<T> class_scores(Tape<T>& tape, const Value<T>& fhat, int classes) {
    detail::group_width(fhat->value.shape(), classes, "class_scores");
    auto maxes = ops::global_max_pool(tape, fhat);
    return ops::channel_group_mean(tape, maxes, classes);
}

/// Per-class semantic map: channel-group mean. (n,h,w,kL) -> (n,h,w,L).
template <typename T>
Value<T> class_semantic_map(Tape<T>& tape, const Value<T>& fhat, int classes) {
    detail::group_width(fhat->value.shape(), classes, "class_semantic_map");
    return ops::channel_group_mean(tape, fhat, classes);
}

/// Score-weighted average of the class maps: CA = (1/L) sum_i s_i * F~_i.
/// (n,1,1,L) x (n,h,w,L) -> (n,h,w,1).
template <typename T>
Value<T> class_attention_map(Tape<T>& tape, const Value<T>& scores, const Value<T>& maps) {
    const Shape& ss = scores->value.shape();
    const Shape& ms = maps->value.shape();
    if (ss.h != 1 || ss.w != 1) {
        throw std::invalid_argument("class_attention_map: scores must be (n,1,1,L), got " + ss.str());
    }
    if (ss.n != ms.n || ss.c != ms.c) {
        throw std::invalid_argument("class_attention_map: scores " + ss.str() + " do not pair with maps " + ms.str());
    }
    auto weighted = ops::multiply(tape, maps, scores);
    return ops::channel_group_mean(tape, weighted, 1);
}

/// Gate every channel of F by the single-channel attention map.
template <typename T>
Value<T> apply_attention(Tape<T>& tape, const Value<T>& x, const Value<T>& ca) {
    const Shape& xs = x->value.shape();
    const Shape& cs = ca->value.shape();
    if (cs.c != 1 || cs.n != xs.n || cs.h != xs.h || cs.w != xs.w) {
        throw std::invalid_argument("apply_attention: attention map " + cs.str() + " does not match input " + xs.str());
    }
    return ops::multiply(tape, x, ca);
}

template <typename T>
struct CwaOut {
    Value<T> gated;      // F * CA (or F + F * CA in residual mode)
    Value<T> scores;     // (n,1,1,L)
    Value<T> attention;  // (n,h,w,1)
};

/// Full block: expand, score, map, weight, gate. Output shape == input shape.
template <typename T>
CwaOut<T> cwa_forward(Tape<T>& tape, const Value<T>& x, const CwaLeaves<T>& leaves, nn::BatchNormParams<T>& bn_state,
                      bool train, const CwaConfig& cfg) {
    cfg.validate();
    if (x->value.shape().c != cfg.in_channels) {
        throw std::invalid_argument("cwa_forward: input has " + std::to_string(x->value.shape().c) +
                                    " channels, config expects " + std::to_string(cfg.in_channels));
    }
    if (leaves.pw->value.shape().c != cfg.expanded_channels()) {
        throw std::invalid_argument("cwa_forward: pointwise width " + std::to_string(leaves.pw->value.shape().c) +
                                    " != classes*k = " + std::to_string(cfg.expanded_channels()));
    }
    auto fhat = expand_features(tape, x, leaves, bn_state, train);
    auto s = class_scores(tape, fhat, cfg.classes);
    if (cfg.softmax_scores) s = ops::channel_softmax(tape, s);
    auto maps = class_semantic_map(tape, fhat, cfg.classes);
    auto ca = class_attention_map(tape, s, maps);
    auto gated = apply_attention(tape, x, ca);
    if (cfg.residual) gated = ops::add(tape, x, gated);
    return {gated, s, ca};
}

}  // namespace pca::cwa
