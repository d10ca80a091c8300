#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "pca/data.hpp"
#include "pca/image.hpp"
#include "pca/rng.hpp"

namespace pca::synth {

namespace detail {

struct Rgb {
    double r, g, b;
};

inline Rgb hsv(double h, double s, double v) {
    h -= std::floor(h);
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp) % 6) {
        case 0: r = c, g = x; break;
        case 1: r = x, g = c; break;
        case 2: g = c, b = x; break;
        case 3: g = x, b = c; break;
        case 4: r = x, b = c; break;
        default: r = c, b = x; break;
    }
    const double m = v - c;
    return {r + m, g + m, b + m};
}

/// 0 inside, 1 outside, smooth ramp of about one pixel at the boundary.
inline double soft_edge(double signed_dist) {
    const double t = std::min(1.0, std::max(0.0, signed_dist + 0.5));
    return t * t * (3.0 - 2.0 * t);
}

/// One drawable figure: the labelled object or a distractor. All parameters
/// come out of the rng at construction so rendering is draw-order stable.
struct Figure {
    int family = 0;
    double cx = 0, cy = 0, base_r = 0, cos_p = 1, sin_p = 0;
    double ecc = 1.0;          // minor/major axis ratio
    double ring_inner = 0.0;   // inner radius fraction, rings only
    double stripe_freq = 0.0;  // stripe cycles per radius, textured family only
    double stripe_phase = 0.0;
    std::array<std::array<double, 3>, 4> blobs{};  // x, y, radius
    int n_blobs = 0;
    Rgb fg{}, fg2{};

    static Figure draw(Rng& rng, int family, double cx, double cy, double base_r, Rgb fg, Rgb fg2) {
        Figure f;
        f.family = family;
        f.cx = cx;
        f.cy = cy;
        f.base_r = base_r;
        const double phi = rng.uniform(0.0, M_PI);
        f.cos_p = std::cos(phi);
        f.sin_p = std::sin(phi);
        f.fg = fg;
        f.fg2 = fg2;
        switch (family) {
            case 0: f.ecc = rng.uniform(0.42, 0.58); break;
            case 1: f.ring_inner = rng.uniform(0.5, 0.65); break;
            case 2: {
                f.n_blobs = 3 + static_cast<int>(rng.uniform_int(2));
                for (int i = 0; i < f.n_blobs; ++i) {
                    const double ang = 2.0 * M_PI * i / f.n_blobs + rng.uniform(-0.5, 0.5);
                    const double dist = base_r * rng.uniform(0.55, 0.95);
                    f.blobs[static_cast<std::size_t>(i)] = {cx + dist * std::cos(ang), cy + dist * std::sin(ang),
                                                            base_r * rng.uniform(0.3, 0.42)};
                }
                break;
            }
            default:
                f.ecc = rng.uniform(0.85, 0.98);
                f.stripe_freq = rng.uniform(2.5, 4.0);
                f.stripe_phase = rng.uniform(0.0, 2.0 * M_PI);
                break;
        }
        return f;
    }

    /// 1 fully inside, 0 outside, soft one-pixel boundary.
    double inside(double x, double y) const {
        if (family == 2) {
            double d = 1e9;
            for (int i = 0; i < n_blobs; ++i) {
                const auto& bl = blobs[static_cast<std::size_t>(i)];
                const double dx = x - bl[0], dy = y - bl[1];
                d = std::min(d, std::sqrt(dx * dx + dy * dy) - bl[2]);
            }
            return 1.0 - soft_edge(d);
        }
        const double dx = x - cx, dy = y - cy;
        const double u = cos_p * dx + sin_p * dy;
        const double v = -sin_p * dx + cos_p * dy;
        const double rr = std::sqrt(u * u + (v / ecc) * (v / ecc));
        double d = rr - base_r;
        if (ring_inner > 0.0) d = std::max(d, base_r * ring_inner - rr);
        return 1.0 - soft_edge(d);
    }

    Rgb colour_at(double x, double y) const {
        if (stripe_freq <= 0.0) return fg;
        const double u = cos_p * (x - cx) + sin_p * (y - cy);
        const double s = std::sin(stripe_freq * 2.0 * M_PI * u / base_r + stripe_phase);
        // hard two-tone bands with a thin smoothed seam
        const double t = std::min(1.0, std::max(0.0, 0.5 + s * 2.5));
        return {fg.r * t + fg2.r * (1.0 - t), fg.g * t + fg2.g * (1.0 - t), fg.b * t + fg2.b * (1.0 - t)};
    }
};

}  // namespace detail

/// One dataset image: the class decides the shape/texture family of the vivid
/// figure at the image centre; two or three equally vivid distractor figures
/// with geometry borrowed from random families sit toward the periphery. All
/// figures share one hue band per class tier (classes 0-3, 4-7, ...), so
/// within a tier neither colour nor global shape statistics resolve the class;
/// only the centred figure does:
///   family 0: filled ellipse, elongated
///   family 1: ring
///   family 2: cluster of 3..4 blobs
///   family 3: near-circular disc, two-tone striped
/// `clutter = false` renders the same centred object alone (the distractor
/// draws are still consumed, so the object is identical either way).
/// Deterministic in (seed, class_index, sample_index).
inline image::ImageU8 render_image(int class_index, int sample_index, int size, std::uint64_t seed,
                                   bool clutter = true) {
    if (size < 8) throw std::invalid_argument("render_image: size must be at least 8");
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(class_index), static_cast<std::uint64_t>(sample_index)));
    const int family = class_index % 4;

    const double hue_centre = 0.07 + 0.31 * (class_index / 4);
    const auto vivid = [&rng, hue_centre](double hue_shift) {
        return detail::hsv(hue_centre + rng.uniform(-0.16, 0.16) + hue_shift, rng.uniform(0.75, 0.95),
                           rng.uniform(0.8, 1.0));
    };
    const detail::Rgb fg = vivid(0.0);
    const detail::Rgb fg2 = detail::hsv(hue_centre + rng.uniform(0.35, 0.5), rng.uniform(0.75, 0.95),
                                        rng.uniform(0.8, 1.0));

    const detail::Rgb bg = detail::hsv(rng.uniform(0.0, 1.0), rng.uniform(0.03, 0.12), rng.uniform(0.25, 0.5));
    const double grad_ang = rng.uniform(0.0, 2.0 * M_PI);
    const double grad_amp = rng.uniform(0.0, 0.1);
    const double gx = std::cos(grad_ang) / size, gy = std::sin(grad_ang) / size;

    std::vector<detail::Figure> figures;
    const int n_distract = 3 + static_cast<int>(rng.uniform_int(2));
    for (int i = 0; i < n_distract; ++i) {
        const int fam_d = static_cast<int>(rng.uniform_int(4));
        const double ang = rng.uniform(0.0, 2.0 * M_PI);
        const double dist = size * rng.uniform(0.33, 0.48);
        const double dcx = size * 0.5 + dist * std::cos(ang);
        const double dcy = size * 0.5 + dist * std::sin(ang);
        const double dr = size * rng.uniform(0.11, 0.17);
        const detail::Rgb dc = vivid(0.0);
        const detail::Rgb dc2 = detail::hsv(hue_centre + rng.uniform(0.35, 0.5), rng.uniform(0.75, 0.95),
                                            rng.uniform(0.8, 1.0));
        figures.push_back(detail::Figure::draw(rng, fam_d, dcx, dcy, dr, dc, dc2));
    }
    if (!clutter) figures.clear();
    const double cx = size * (0.5 + rng.uniform(-0.05, 0.05));
    const double cy = size * (0.5 + rng.uniform(-0.05, 0.05));
    const double base_r = size * rng.uniform(0.16, 0.22);
    figures.push_back(detail::Figure::draw(rng, family, cx, cy, base_r, fg, fg2));

    // Noise is drawn per pixel after all geometry, so the image stays a pure
    // function of the rng stream regardless of per-sample figure counts.
    image::ImageU8 img = image::ImageU8::blank(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double shade = grad_amp * (gx * (x - size * 0.5) + gy * (y - size * 0.5));
            detail::Rgb pix{bg.r + shade, bg.g + shade, bg.b + shade};
            for (const auto& f : figures) {
                const double a = f.inside(x, y);
                if (a <= 0.0) continue;
                const detail::Rgb col = f.colour_at(x, y);
                pix = {pix.r + (col.r - pix.r) * a, pix.g + (col.g - pix.g) * a, pix.b + (col.b - pix.b) * a};
            }
            for (int c = 0; c < 3; ++c) {
                const double base = c == 0 ? pix.r : c == 1 ? pix.g : pix.b;
                const double val = std::min(1.0, std::max(0.0, base + rng.uniform(-0.05, 0.05)));
                img.at(y, x, c) = static_cast<unsigned char>(std::lround(val * 255.0));
            }
        }
    return img;
}

/// Writes per_class_counts[c] images per class under out_dir/images/ plus
/// out_dir/manifest.csv, and returns the loaded manifest. Labels are
/// class00, class01, ... so sorted label order matches generation order.
inline data::Manifest synth_dataset(const std::string& out_dir, int num_classes,
                                    const std::vector<int>& per_class_counts, int image_size,
                                    std::uint64_t seed, const std::string& format = "ppm") {
    if (num_classes < 1) throw std::invalid_argument("synth_dataset: need at least one class");
    if (static_cast<int>(per_class_counts.size()) != num_classes)
        throw std::invalid_argument("synth_dataset: per_class_counts length " +
                                    std::to_string(per_class_counts.size()) + " != num_classes " +
                                    std::to_string(num_classes));
    for (int n : per_class_counts)
        if (n < 1) throw std::invalid_argument("synth_dataset: counts must be at least 1");
    if (format != "ppm" && format != "png") throw std::invalid_argument("synth_dataset: format must be ppm or png");

    std::error_code ec;
    std::filesystem::create_directories(out_dir + "/images", ec);
    if (ec) throw std::runtime_error("synth_dataset: cannot create " + out_dir + "/images: " + ec.message());

    data::Manifest m;
    m.image_root = out_dir;
    for (int c = 0; c < num_classes; ++c) {
        char name[16];
        std::snprintf(name, sizeof(name), "class%02d", c);
        m.class_names.emplace_back(name);
    }
    std::uint64_t id = 0;
    for (int c = 0; c < num_classes; ++c)
        for (int i = 0; i < per_class_counts[static_cast<std::size_t>(c)]; ++i) {
            char rel[64];
            std::snprintf(rel, sizeof(rel), "images/%s_%04d.%s", m.class_names[static_cast<std::size_t>(c)].c_str(),
                          i, format.c_str());
            image::write_image(out_dir + "/" + rel, render_image(c, i, image_size, seed));
            m.records.push_back({rel, m.class_names[static_cast<std::size_t>(c)], c, id++});
        }
    data::save_manifest(m, out_dir + "/manifest.csv");
    return m;
}

}  // namespace pca::synth
