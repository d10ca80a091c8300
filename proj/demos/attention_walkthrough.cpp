// The attention block on paper-traceable numbers: a constant-channel tensor
// where every intermediate (scores, semantic maps, attention map, gated
// output) can be checked by hand, followed by a full block forward.

#include <cstdio>

#include "pca/cwa.hpp"
#include "pca/rng.hpp"

using pca::Shape;
using pca::Tape;
using pca::Tensor;

int main() {
    // k=2 channels per class, L=2 classes; channels held constant at
    // (1,3,2,4) so group means/maxes are obvious
    const int h = 4, w = 4;
    Tensor<double> fhat(Shape(1, h, w, 4));
    const double chan[4] = {1, 3, 2, 4};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 4; ++c) fhat.at(0, y, x, c) = chan[c];

    Tape<double> tape;
    auto fv = tape.leaf(fhat, false);
    auto s = pca::cwa::class_scores(tape, fv, 2);
    auto maps = pca::cwa::class_semantic_map(tape, fv, 2);
    auto ca = pca::cwa::class_attention_map(tape, s, maps);

    std::printf("channels constant at (1,3 | 2,4), groups of k=2\n");
    std::printf("class scores  s = (%g, %g)   (group means of spatial maxes: (1+3)/2, (2+4)/2)\n",
                s->value.at(0, 0, 0, 0), s->value.at(0, 0, 0, 1));
    std::printf("semantic maps F~ = (%g, %g) everywhere (group means per pixel)\n", maps->value.at(0, 0, 0, 0),
                maps->value.at(0, 0, 0, 1));
    std::printf("attention map CA = %g everywhere ((2*2 + 3*3)/2)\n", ca->value.at(0, 0, 0, 0));

    Tensor<double> f(Shape(1, h, w, 3));
    pca::Rng rng(7);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = rng.uniform(-1.0, 1.0);
    auto gated = pca::cwa::apply_attention(tape, tape.leaf(f, false), ca);
    std::printf("gate check: F[0]=%.4f -> %.4f (x%g)\n\n", f[0], gated->value[0], ca->value.at(0, 0, 0, 0));

    // the full learned block: expand -> score -> map -> weight -> gate
    pca::cwa::CwaConfig cfg;
    cfg.in_channels = 8;
    cfg.classes = 4;
    cfg.k = 4;
    auto params = pca::cwa::CwaParams<double>::he_uniform(cfg, rng);
    auto state = pca::nn::BatchNormParams<double>::init(cfg.expanded_channels());

    Tensor<double> x(Shape(2, 8, 8, 8));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
    auto leaves = pca::cwa::bind(tape, params, false);
    auto out = pca::cwa::cwa_forward(tape, tape.leaf(x, false), leaves, state, true, cfg);

    std::printf("full block, C=%d L=%d k=%d:\n", cfg.in_channels, cfg.classes, cfg.k);
    std::printf("  input %s -> gated %s (shape preserved)\n", x.shape().str().c_str(),
                out.gated->value.shape().str().c_str());
    std::printf("  scores %s, attention %s\n", out.scores->value.shape().str().c_str(),
                out.attention->value.shape().str().c_str());
    std::printf("  learnable overhead: %zu scalars (9C + C*kL + 3kL)\n",
                pca::cwa::cwa_param_count(cfg.in_channels, cfg.classes, cfg.k));
    return 0;
}
