#pragma once

#include <cmath>
#include <stdexcept>

#include "pca/rng.hpp"
#include "pca/tensor.hpp"

namespace pca::aug {

namespace detail {

/// Bilinear sample with nearest-edge fill: coordinates are clamped to the
/// image rectangle before interpolation, so out-of-frame reads repeat the
/// border pixel. Integer coordinates return the pixel exactly.
template <typename T>
T sample_bilinear(const Tensor<T>& img, int n, double y, double x, int c) {
    const Shape& s = img.shape();
    y = std::min(static_cast<double>(s.h - 1), std::max(0.0, y));
    x = std::min(static_cast<double>(s.w - 1), std::max(0.0, x));
    const int y0 = static_cast<int>(y);
    const int x0 = static_cast<int>(x);
    const int y1 = std::min(y0 + 1, s.h - 1);
    const int x1 = std::min(x0 + 1, s.w - 1);
    const double fy = y - y0;
    const double fx = x - x0;
    const double top = (1.0 - fx) * img.at(n, y0, x0, c) + fx * img.at(n, y0, x1, c);
    const double bot = (1.0 - fx) * img.at(n, y1, x0, c) + fx * img.at(n, y1, x1, c);
    return static_cast<T>((1.0 - fy) * top + fy * bot);
}

}  // namespace detail

/// Bilinear resize, half-pixel-center convention: src = (dst + 0.5) * in/out - 0.5.
/// Same-size input is returned bit-identically; values stay inside the input range.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& img, int out_h, int out_w) {
    const Shape& s = img.shape();
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bilinear: bad output size");
    if (out_h == s.h && out_w == s.w) return img;
    Tensor<T> out(Shape(s.n, out_h, out_w, s.c));
    const double sy = static_cast<double>(s.h) / out_h;
    const double sx = static_cast<double>(s.w) / out_w;
    for (int n = 0; n < s.n; ++n)
        for (int y = 0; y < out_h; ++y) {
            const double src_y = (y + 0.5) * sy - 0.5;
            for (int x = 0; x < out_w; ++x) {
                const double src_x = (x + 0.5) * sx - 0.5;
                for (int c = 0; c < s.c; ++c)
                    out.at(n, y, x, c) = detail::sample_bilinear(img, n, src_y, src_x, c);
            }
        }
    return out;
}

/// One drawn geometric transform: rotate, shift, zoom, and flips about the
/// image centre. Draw order is fixed so a seed fully determines the transform.
struct AugmentParams {
    double angle_deg = 0.0;    // in [0, 180]
    double shift_x = 0.0;      // fraction of width, in [-0.1, 0.1]
    double shift_y = 0.0;      // fraction of height, in [-0.1, 0.1]
    double zoom = 1.0;         // in [0.9, 1.1]
    bool flip_h = false;
    bool flip_v = false;

    static AugmentParams identity() { return {}; }

    static AugmentParams draw(Rng& rng) {
        AugmentParams p;
        p.angle_deg = rng.uniform(0.0, 180.0);
        p.shift_x = rng.uniform(-0.1, 0.1);
        p.shift_y = rng.uniform(-0.1, 0.1);
        p.zoom = rng.uniform(0.9, 1.1);
        p.flip_h = rng.bernoulli(0.5);
        p.flip_v = rng.bernoulli(0.5);
        return p;
    }

    bool is_identity() const {
        return angle_deg == 0.0 && shift_x == 0.0 && shift_y == 0.0 && zoom == 1.0 && !flip_h && !flip_v;
    }
};

/// Applies the transform by inverse mapping: each output pixel samples the
/// input at flip(rot(-angle) * (p - shift) / zoom) in centre-relative
/// coordinates, bilinearly, with nearest-edge fill outside the frame.
/// The identity transform reproduces the input exactly; a pure flip permutes
/// pixels exactly.
template <typename T>
Tensor<T> apply_augment(const Tensor<T>& img, const AugmentParams& p) {
    const Shape& s = img.shape();
    if (p.is_identity()) return img;
    Tensor<T> out(s);
    const double cy = 0.5 * (s.h - 1);
    const double cx = 0.5 * (s.w - 1);
    const double rad = p.angle_deg * (M_PI / 180.0);
    const double cos_a = std::cos(rad);
    const double sin_a = std::sin(rad);
    const double dx = p.shift_x * s.w;
    const double dy = p.shift_y * s.h;
    for (int n = 0; n < s.n; ++n)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                const double vx = x - cx - dx;
                const double vy = y - cy - dy;
                // rotate by -angle, then undo zoom
                double ux = (cos_a * vx + sin_a * vy) / p.zoom;
                double uy = (-sin_a * vx + cos_a * vy) / p.zoom;
                if (p.flip_h) ux = -ux;
                if (p.flip_v) uy = -uy;
                const double src_x = ux + cx;
                const double src_y = uy + cy;
                for (int c = 0; c < s.c; ++c)
                    out.at(n, y, x, c) = detail::sample_bilinear(img, n, src_y, src_x, c);
            }
    return out;
}

/// Seed for one sample's augmentation draw. Mixing the record entry and epoch
/// in makes draws independent across epochs and across up-sampled duplicates,
/// and independent of worker scheduling.
inline std::uint64_t sample_seed(std::uint64_t global_seed, std::uint64_t record_id, std::uint64_t epoch) {
    return mix_seed(global_seed, record_id, epoch);
}

}  // namespace pca::aug
