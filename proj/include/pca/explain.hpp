#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "pca/augment.hpp"
#include "pca/backbone.hpp"
#include "pca/image.hpp"
#include "pca/ops.hpp"

namespace pca::explain {

/// Nonnegative saliency over the input grid, scaled so the peak is 1 unless
/// the whole map is zero.
template <typename T>
struct AttentionMap {
    Tensor<T> values;  // (1,h,w,1) at input resolution
    int target_class = 0;
    std::string layer;
};

/// Picks the default extraction site: the attention-gated output of the last
/// block when the model has one, otherwise the last block itself.
inline std::string default_cam_layer(const backbone::BackboneSpec& spec) {
    return spec.attention_sites[2] ? "cwa4" : "block4";
}

/// Grad-CAM: channel weights are the spatial means of d(target logit)/d(layer
/// activation); the map is the ReLU of the weighted channel sum, upsampled
/// bilinearly to the input grid and max-normalized. A detached target (zero
/// gradient everywhere) legitimately yields the all-zero map.
template <typename T>
AttentionMap<T> grad_cam(backbone::Model<T>& model, const Tensor<T>& pixels, int target_class,
                         std::string layer = "") {
    const Shape& in = pixels.shape();
    if (in.n != 1) throw std::invalid_argument("grad_cam: one sample at a time, got batch " + std::to_string(in.n));
    if (target_class < 0 || target_class >= model.spec.classes)
        throw std::invalid_argument("grad_cam: target class " + std::to_string(target_class) +
                                    " out of range [0," + std::to_string(model.spec.classes) + ")");
    if (layer.empty()) layer = default_cam_layer(model.spec);

    Tape<T> tape;
    // the input carries the gradient request so every activation records one
    auto result = backbone::forward(tape, model, tape.leaf(pixels, true), false);
    const auto tap = result.taps.find(layer);
    if (tap == result.taps.end()) {
        std::string names;
        for (const auto& [name, v] : result.taps) names += (names.empty() ? "" : ", ") + name;
        throw std::invalid_argument("grad_cam: unknown layer '" + layer + "' (have: " + names + ")");
    }
    tape.backward(ops::pick(tape, result.logits, 0, 0, 0, target_class));

    const Tensor<T>& act = tap->second->value;
    const Shape& s = act.shape();
    Tensor<T> map(Shape(1, s.h, s.w, 1));
    if (tap->second->has_grad()) {
        const Tensor<T>& grad = tap->second->grad;
        std::vector<T> alpha(static_cast<std::size_t>(s.c), T(0));
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x)
                for (int c = 0; c < s.c; ++c) alpha[static_cast<std::size_t>(c)] += grad.at(0, y, x, c);
        for (auto& a : alpha) a /= static_cast<T>(s.h) * static_cast<T>(s.w);
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                T acc = T(0);
                for (int c = 0; c < s.c; ++c) acc += alpha[static_cast<std::size_t>(c)] * act.at(0, y, x, c);
                map.at(0, y, x, 0) = std::max(T(0), acc);
            }
    }

    AttentionMap<T> out;
    out.values = aug::resize_bilinear(map, in.h, in.w);
    out.target_class = target_class;
    out.layer = layer;
    T mx = T(0);
    for (std::size_t i = 0; i < out.values.size(); ++i) mx = std::max(mx, out.values[i]);
    if (mx > T(0))
        for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] /= mx;
    return out;
}

/// Heat colour for a map value in [0,1]: blue at 0 through red at 1.
template <typename T>
std::array<T, 3> heat_color(T v) {
    v = std::min(T(1), std::max(T(0), v));
    return {v, T(0), T(1) - v};
}

/// Original and heat-blended view side by side: left the sample, right
/// 60% sample + 40% heat colour.
template <typename T>
image::ImageU8 render_overlay(const AttentionMap<T>& map, const Tensor<T>& pixels) {
    const Shape& in = pixels.shape();
    const Shape& ms = map.values.shape();
    if (in.n != 1 || in.c != 3) throw std::invalid_argument("render_overlay: pixels must be (1,h,w,3)");
    if (ms.h != in.h || ms.w != in.w)
        throw std::invalid_argument("render_overlay: map " + ms.str() + " does not match input " + in.str());

    image::ImageU8 out = image::ImageU8::blank(in.h, 2 * in.w);
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
            const auto heat = heat_color(map.values.at(0, y, x, 0));
            for (int c = 0; c < 3; ++c) {
                const T orig = std::min(T(1), std::max(T(0), pixels.at(0, y, x, c)));
                out.at(y, x, c) = static_cast<unsigned char>(std::lround(static_cast<double>(orig) * 255.0));
                const T blended = T(0.6) * orig + T(0.4) * heat[static_cast<std::size_t>(c)];
                out.at(y, x + in.w, c) = static_cast<unsigned char>(std::lround(static_cast<double>(blended) * 255.0));
            }
        }
    return out;
}

template <typename T>
void export_overlay(const AttentionMap<T>& map, const Tensor<T>& pixels, const std::string& out_path) {
    image::write_image(out_path, render_overlay(map, pixels));
}

/// Canonical output name: <image_id>_<class>_<layer>.<ext>
inline std::string overlay_filename(const std::string& image_id, const std::string& class_name,
                                    const std::string& layer, const std::string& ext = "png") {
    return image_id + "_" + class_name + "_" + layer + "." + ext;
}

}  // namespace pca::explain
