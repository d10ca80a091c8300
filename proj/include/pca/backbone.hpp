#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "pca/autodiff.hpp"
#include "pca/cwa.hpp"
#include "pca/nn.hpp"
#include "pca/ops.hpp"
#include "pca/rng.hpp"
#include "pca/tensor.hpp"

namespace pca::backbone {

/// Densely connected backbone: stem, four dense blocks with three halving
/// transitions between them, optional class-wise attention after blocks 2-4
/// (before the transition for blocks 2 and 3), global average pool, linear
/// classifier.
struct BackboneSpec {
    std::array<int, 4> block_layers{2, 2, 2, 2};  // dense layers per block
    int growth = 12;                              // channels added per dense layer
    int stem_channels = 16;
    int stem_kernel = 3;
    bool stem_pool = false;  // extra 2x2 avg pool after the stem conv
    int in_channels = 3;
    int classes = 4;
    int k = 4;                                       // expanded channels per class in attention blocks
    std::array<bool, 3> attention_sites{false, false, false};  // after blocks 2, 3, 4
    bool softmax_scores = false;
    bool residual_attention = false;

    /// Small enough to train on one CPU core in minutes.
    static BackboneSpec toy(int classes = 4) {
        BackboneSpec s;
        s.classes = classes;
        return s;
    }

    /// Full-scale layout: 6/12/24/16 dense layers (12/24/48/32 conv layers),
    /// growth 32, 7x7 stem with pooling.
    static BackboneSpec reference(int classes = 7) {
        BackboneSpec s;
        s.block_layers = {6, 12, 24, 16};
        s.growth = 32;
        s.stem_channels = 64;
        s.stem_kernel = 7;
        s.stem_pool = true;
        s.classes = classes;
        s.k = 8;
        return s;
    }

    BackboneSpec with_sites(bool s2, bool s3, bool s4) const {
        BackboneSpec s = *this;
        s.attention_sites = {s2, s3, s4};
        return s;
    }

    void validate() const {
        for (int l : block_layers)
            if (l < 1) throw std::invalid_argument("backbone: each block needs at least one dense layer");
        if (growth < 1) throw std::invalid_argument("backbone: growth must be >= 1");
        if (stem_channels < 1) throw std::invalid_argument("backbone: stem_channels must be >= 1");
        if (stem_kernel < 1 || stem_kernel % 2 == 0)
            throw std::invalid_argument("backbone: stem_kernel must be odd and positive");
        if (in_channels < 1) throw std::invalid_argument("backbone: in_channels must be >= 1");
        if (classes < 2) throw std::invalid_argument("backbone: classes must be >= 2");
        if (k < 1) throw std::invalid_argument("backbone: k must be >= 1");
    }

    /// Spatial halvings before the first dense block plus one per transition.
    int spatial_divisor() const { return stem_pool ? 32 : 16; }

    /// Channel width entering block b (0-based).
    int channels_into_block(int b) const {
        int c = stem_channels;
        for (int i = 0; i < b; ++i) c = (c + block_layers[static_cast<std::size_t>(i)] * growth) / 2;
        return c;
    }

    int channels_out_of_block(int b) const {
        return channels_into_block(b) + block_layers[static_cast<std::size_t>(b)] * growth;
    }
};

// closed-form learnable counts, kept next to the structures they describe

inline std::size_t dense_layer_param_count(int c_in, int growth) {
    const std::size_t c = static_cast<std::size_t>(c_in), g = static_cast<std::size_t>(growth);
    const std::size_t bottleneck = 4 * g;
    return 2 * c + (c * bottleneck + bottleneck) + 2 * bottleneck + (9 * bottleneck * g + g);
}

inline std::size_t transition_param_count(int c_in) {
    const std::size_t c = static_cast<std::size_t>(c_in);
    return 2 * c + c * (c / 2) + c / 2;
}

inline std::size_t stem_param_count(const BackboneSpec& s) {
    const std::size_t kk = static_cast<std::size_t>(s.stem_kernel) * s.stem_kernel;
    return kk * s.in_channels * s.stem_channels + s.stem_channels + 2 * static_cast<std::size_t>(s.stem_channels);
}

inline std::size_t backbone_param_count(const BackboneSpec& s) {
    std::size_t total = stem_param_count(s);
    for (int b = 0; b < 4; ++b) {
        int c = s.channels_into_block(b);
        for (int l = 0; l < s.block_layers[static_cast<std::size_t>(b)]; ++l) {
            total += dense_layer_param_count(c, s.growth);
            c += s.growth;
        }
        if (b >= 1 && s.attention_sites[static_cast<std::size_t>(b - 1)])
            total += cwa::cwa_param_count(c, s.classes, s.k);
        if (b < 3) total += transition_param_count(c);
    }
    total += static_cast<std::size_t>(s.channels_out_of_block(3)) * s.classes + s.classes;
    return total;
}

template <typename T>
struct DenseLayerParams {
    nn::BatchNormParams<T> bn1;
    nn::Conv2dParams<T> conv1;  // 1x1 bottleneck to 4*growth
    nn::BatchNormParams<T> bn2;
    nn::Conv2dParams<T> conv2;  // 3x3 to growth
};

template <typename T>
struct TransitionParams {
    nn::BatchNormParams<T> bn;
    nn::Conv2dParams<T> conv;  // 1x1 halving the channels, then 2x2 avg pool
};

template <typename T>
struct AttentionSite {
    cwa::CwaConfig cfg;
    cwa::CwaParams<T> params;
};

/// Creates tape leaves for parameters and remembers tensor -> leaf so the
/// caller can read gradients back after a backward sweep.
template <typename T>
class Binder {
  public:
    Binder(Tape<T>& tape, bool trainable) : tape_(&tape), trainable_(trainable) {}

    Value<T> operator()(const Tensor<T>& param) {
        Value<T> v;
        if (auto it = subs_.find(&param); it != subs_.end()) {
            v = it->second;
        } else {
            v = tape_->leaf(param, trainable_);
        }
        bound_.emplace(&param, v);
        return v;
    }

    /// Use an existing node instead of a fresh leaf for one parameter
    /// (gradient probes differentiate w.r.t. a caller-owned node).
    void substitute(const Tensor<T>* param, Value<T> v) { subs_[param] = std::move(v); }

    const Value<T>* find(const Tensor<T>* param) const {
        auto it = bound_.find(param);
        return it == bound_.end() ? nullptr : &it->second;
    }

  private:
    Tape<T>* tape_;
    bool trainable_;
    std::unordered_map<const Tensor<T>*, Value<T>> bound_;
    std::unordered_map<const Tensor<T>*, Value<T>> subs_;
};

template <typename T>
struct Model {
    BackboneSpec spec;
    nn::Conv2dParams<T> stem_conv;
    nn::BatchNormParams<T> stem_bn;
    std::array<std::vector<DenseLayerParams<T>>, 4> blocks;
    std::vector<TransitionParams<T>> transitions;          // exactly 3
    std::array<std::optional<AttentionSite<T>>, 3> attn;   // after blocks 2, 3, 4

    nn::LinearParams<T> head;

    /// Visits every learnable tensor with a stable unique name, in the same
    /// order the forward pass consumes them.
    template <typename Fn>
    void for_each_param(Fn&& fn) {
        fn("stem.conv.kernel", stem_conv.kernel);
        fn("stem.conv.bias", stem_conv.bias);
        fn("stem.bn.gamma", stem_bn.gamma);
        fn("stem.bn.beta", stem_bn.beta);
        for (int b = 0; b < 4; ++b) {
            const std::string bp = "block" + std::to_string(b + 1);
            auto& layers = blocks[static_cast<std::size_t>(b)];
            for (std::size_t l = 0; l < layers.size(); ++l) {
                const std::string lp = bp + ".layer" + std::to_string(l);
                fn(lp + ".bn1.gamma", layers[l].bn1.gamma);
                fn(lp + ".bn1.beta", layers[l].bn1.beta);
                fn(lp + ".conv1.kernel", layers[l].conv1.kernel);
                fn(lp + ".conv1.bias", layers[l].conv1.bias);
                fn(lp + ".bn2.gamma", layers[l].bn2.gamma);
                fn(lp + ".bn2.beta", layers[l].bn2.beta);
                fn(lp + ".conv2.kernel", layers[l].conv2.kernel);
                fn(lp + ".conv2.bias", layers[l].conv2.bias);
            }
            if (b >= 1 && attn[static_cast<std::size_t>(b - 1)]) {
                auto& site = *attn[static_cast<std::size_t>(b - 1)];
                const std::string ap = "cwa" + std::to_string(b + 1);
                fn(ap + ".dw.kernel", site.params.expand.depthwise);
                fn(ap + ".pw.kernel", site.params.expand.pointwise);
                fn(ap + ".pw.bias", site.params.expand.bias);
                fn(ap + ".bn.gamma", site.params.bn.gamma);
                fn(ap + ".bn.beta", site.params.bn.beta);
            }
            if (b < 3) {
                const std::string tp = "trans" + std::to_string(b + 1);
                fn(tp + ".bn.gamma", transitions[static_cast<std::size_t>(b)].bn.gamma);
                fn(tp + ".bn.beta", transitions[static_cast<std::size_t>(b)].bn.beta);
                fn(tp + ".conv.kernel", transitions[static_cast<std::size_t>(b)].conv.kernel);
                fn(tp + ".conv.bias", transitions[static_cast<std::size_t>(b)].conv.bias);
            }
        }
        fn("head.weight", head.weight);
        fn("head.bias", head.bias);
    }

    /// Non-learnable state (batch norm running statistics), same ordering scheme.
    template <typename Fn>
    void for_each_buffer(Fn&& fn) {
        auto bn_buffers = [&fn](const std::string& prefix, nn::BatchNormParams<T>& bn) {
            fn(prefix + ".running_mean", bn.running_mean);
            fn(prefix + ".running_var", bn.running_var);
        };
        bn_buffers("stem.bn", stem_bn);
        for (int b = 0; b < 4; ++b) {
            const std::string bp = "block" + std::to_string(b + 1);
            auto& layers = blocks[static_cast<std::size_t>(b)];
            for (std::size_t l = 0; l < layers.size(); ++l) {
                const std::string lp = bp + ".layer" + std::to_string(l);
                bn_buffers(lp + ".bn1", layers[l].bn1);
                bn_buffers(lp + ".bn2", layers[l].bn2);
            }
            if (b >= 1 && attn[static_cast<std::size_t>(b - 1)])
                bn_buffers("cwa" + std::to_string(b + 1) + ".bn", attn[static_cast<std::size_t>(b - 1)]->params.bn);
            if (b < 3) bn_buffers("trans" + std::to_string(b + 1) + ".bn", transitions[static_cast<std::size_t>(b)].bn);
        }
    }

    std::size_t param_count() {
        std::size_t total = 0;
        for_each_param([&total](const std::string&, Tensor<T>& t) { total += t.size(); });
        return total;
    }

    /// Per-module learnable counts in forward order.
    std::vector<std::pair<std::string, std::size_t>> param_breakdown() {
        std::vector<std::pair<std::string, std::size_t>> out;
        for_each_param([&out](const std::string& name, Tensor<T>& t) {
            const std::string module = name.substr(0, name.find('.'));
            if (out.empty() || out.back().first != module) out.emplace_back(module, 0);
            out.back().second += t.size();
        });
        return out;
    }
};

template <typename T>
Model<T> build_model(const BackboneSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    Model<T> m;
    m.spec = spec;
    m.stem_conv =
        nn::Conv2dParams<T>::he_uniform(spec.stem_kernel, spec.stem_kernel, spec.in_channels, spec.stem_channels, 2,
                                        nn::Padding::same, rng);
    m.stem_bn = nn::BatchNormParams<T>::init(spec.stem_channels);
    for (int b = 0; b < 4; ++b) {
        int c = spec.channels_into_block(b);
        for (int l = 0; l < spec.block_layers[static_cast<std::size_t>(b)]; ++l) {
            DenseLayerParams<T> layer;
            layer.bn1 = nn::BatchNormParams<T>::init(c);
            layer.conv1 = nn::Conv2dParams<T>::he_uniform(1, 1, c, 4 * spec.growth, 1, nn::Padding::same, rng);
            layer.bn2 = nn::BatchNormParams<T>::init(4 * spec.growth);
            layer.conv2 = nn::Conv2dParams<T>::he_uniform(3, 3, 4 * spec.growth, spec.growth, 1, nn::Padding::same, rng);
            m.blocks[static_cast<std::size_t>(b)].push_back(std::move(layer));
            c += spec.growth;
        }
        if (b >= 1 && spec.attention_sites[static_cast<std::size_t>(b - 1)]) {
            cwa::CwaConfig cfg;
            cfg.classes = spec.classes;
            cfg.k = spec.k;
            cfg.in_channels = c;
            cfg.softmax_scores = spec.softmax_scores;
            cfg.residual = spec.residual_attention;
            m.attn[static_cast<std::size_t>(b - 1)] = AttentionSite<T>{cfg, cwa::CwaParams<T>::he_uniform(cfg, rng)};
        }
        if (b < 3) {
            TransitionParams<T> t;
            t.bn = nn::BatchNormParams<T>::init(c);
            t.conv = nn::Conv2dParams<T>::he_uniform(1, 1, c, c / 2, 1, nn::Padding::same, rng);
            m.transitions.push_back(std::move(t));
        }
    }
    m.head = nn::LinearParams<T>::he_uniform(spec.channels_out_of_block(3), spec.classes, rng);
    return m;
}

template <typename T>
struct ForwardResult {
    Value<T> logits;                      // (n,1,1,classes)
    std::map<std::string, Value<T>> taps;  // named activations for inspection
};

/// Runs the network. Train mode updates batch norm running statistics in
/// place (single writer). Pass a Binder to reach parameter gradients after
/// backward; without one, parameters are bound as constants.
template <typename T>
ForwardResult<T> forward(Tape<T>& tape, Model<T>& m, const Value<T>& x, bool train, Binder<T>* binder = nullptr) {
    const Shape& xs = x->value.shape();
    const int div = m.spec.spatial_divisor();
    if (xs.h % div != 0 || xs.w % div != 0) {
        throw std::invalid_argument("forward: spatial dims " + xs.str() + " must be divisible by " +
                                    std::to_string(div));
    }
    Binder<T> local(tape, false);
    Binder<T>& bind = binder ? *binder : local;

    ForwardResult<T> r;

    auto conv = [&](const Value<T>& in, nn::Conv2dParams<T>& p) {
        return nn::conv2d(tape, in, bind(p.kernel), bind(p.bias), p.stride, p.padding);
    };
    auto bnorm = [&](const Value<T>& in, nn::BatchNormParams<T>& p) {
        return nn::batch_norm(tape, in, bind(p.gamma), bind(p.beta), p, train);
    };

    Value<T> f = ops::relu(tape, bnorm(conv(x, m.stem_conv), m.stem_bn));
    if (m.spec.stem_pool) f = ops::avg_pool2x2(tape, f);
    r.taps.emplace("stem", f);

    for (int b = 0; b < 4; ++b) {
        for (auto& layer : m.blocks[static_cast<std::size_t>(b)]) {
            auto y = conv(ops::relu(tape, bnorm(f, layer.bn1)), layer.conv1);
            y = conv(ops::relu(tape, bnorm(y, layer.bn2)), layer.conv2);
            f = ops::concat_channels(tape, {f, y});
        }
        const std::string bname = "block" + std::to_string(b + 1);
        r.taps.emplace(bname, f);

        if (b >= 1 && m.attn[static_cast<std::size_t>(b - 1)]) {
            auto& site = *m.attn[static_cast<std::size_t>(b - 1)];
            cwa::CwaLeaves<T> leaves{bind(site.params.expand.depthwise), bind(site.params.expand.pointwise),
                                     bind(site.params.expand.bias), bind(site.params.bn.gamma),
                                     bind(site.params.bn.beta)};
            auto out = cwa::cwa_forward(tape, f, leaves, site.params.bn, train, site.cfg);
            f = out.gated;
            const std::string aname = "cwa" + std::to_string(b + 1);
            r.taps.emplace(aname, out.gated);
            r.taps.emplace(aname + ".ca", out.attention);
            r.taps.emplace(aname + ".scores", out.scores);
        }
        if (b < 3) {
            auto& t = m.transitions[static_cast<std::size_t>(b)];
            f = ops::avg_pool2x2(tape, conv(ops::relu(tape, bnorm(f, t.bn)), t.conv));
        }
    }

    auto pooled = ops::global_avg_pool(tape, f);
    r.logits = nn::linear(tape, pooled, bind(m.head.weight), bind(m.head.bias));
    return r;
}

}  // namespace pca::backbone
