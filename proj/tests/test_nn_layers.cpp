#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "pca/gradcheck.hpp"
#include "pca/nn.hpp"
#include "pca/ops.hpp"
#include "pca/rng.hpp"

using pca::Rng;
using pca::Shape;
using pca::Tape;
using pca::Tensor;
using pca::Value;
using pca::nn::Padding;

namespace {

Tensor<double> random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(s);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// scalar objective used by the gradient checks: sum(y * y)
Value<double> sq_sum(Tape<double>& tape, const Value<double>& y) {
    return pca::ops::sum(tape, pca::ops::multiply(tape, y, y));
}

// weighted sum against a fixed covector; probes the Jacobian in a direction
// that normalization cannot annihilate (sum(y*y) is nearly flat after
// standardization, so its finite differences drown in roundoff)
Value<double> weighted_sum(Tape<double>& tape, const Value<double>& y, const Tensor<double>& w) {
    return pca::ops::sum(tape, pca::ops::multiply(tape, y, tape.leaf(w, false)));
}

}  // namespace

TEST_CASE("conv2d forward fixtures") {
    Tape<double> tape;

    SECTION("zero kernel and bias give zero output") {
        auto x = tape.leaf(Tensor<double>::ones(Shape(1, 4, 4, 2)));
        auto k = tape.leaf(Tensor<double>::zeros(Shape(3, 3, 2, 3)));
        auto b = tape.leaf(Tensor<double>::zeros(Shape(1, 1, 1, 3)));
        auto out = pca::nn::conv2d(tape, x, k, b, 1, Padding::same);
        REQUIRE(out->value.shape() == Shape(1, 4, 4, 3));
        for (std::size_t i = 0; i < out->value.size(); ++i) REQUIRE(out->value[i] == 0.0);
    }

    SECTION("1x1 identity kernel is the identity") {
        Rng rng(5);
        Tensor<double> xin = random_tensor(Shape(2, 3, 3, 3), rng);
        Tensor<double> kid(Shape(1, 1, 3, 3));
        for (int c = 0; c < 3; ++c) kid.at(0, 0, c, c) = 1.0;
        auto out = pca::nn::conv2d(tape, tape.leaf(xin), tape.leaf(kid),
                                   tape.leaf(Tensor<double>::zeros(Shape(1, 1, 1, 3))), 1, Padding::same);
        REQUIRE(out->value.vec() == xin.vec());
    }

    SECTION("center-only 3x3 kernel scales a constant input") {
        Tensor<double> k(Shape(3, 3, 1, 1));
        k.at(1, 1, 0, 0) = 2.0;
        auto out = pca::nn::conv2d(tape, tape.leaf(Tensor<double>::full(Shape(1, 5, 5, 1), 5.0)), tape.leaf(k),
                                   tape.leaf(Tensor<double>::zeros(Shape(1, 1, 1, 1))), 1, Padding::same);
        for (std::size_t i = 0; i < out->value.size(); ++i) REQUIRE(out->value[i] == 10.0);
    }

    SECTION("channel mismatch rejected") {
        auto x = tape.leaf(Tensor<double>::ones(Shape(1, 4, 4, 2)));
        auto k = tape.leaf(Tensor<double>::zeros(Shape(3, 3, 3, 1)));
        auto b = tape.leaf(Tensor<double>::zeros(Shape(1, 1, 1, 1)));
        REQUIRE_THROWS_AS(pca::nn::conv2d(tape, x, k, b, 1, Padding::same), std::invalid_argument);
    }

    SECTION("valid padding and stride shapes") {
        auto x = tape.leaf(Tensor<double>::ones(Shape(1, 7, 9, 1)));
        auto k = tape.leaf(Tensor<double>::ones(Shape(3, 3, 1, 1)));
        auto b = tape.leaf(Tensor<double>::zeros(Shape(1, 1, 1, 1)));
        REQUIRE(pca::nn::conv2d(tape, x, k, b, 1, Padding::valid)->value.shape() == Shape(1, 5, 7, 1));
        REQUIRE(pca::nn::conv2d(tape, x, k, b, 2, Padding::valid)->value.shape() == Shape(1, 3, 4, 1));
        // same padding with stride 2 halves (rounding up)
        auto x8 = tape.leaf(Tensor<double>::ones(Shape(1, 8, 8, 1)));
        REQUIRE(pca::nn::conv2d(tape, x8, k, b, 2, Padding::same)->value.shape() == Shape(1, 4, 4, 1));
    }
}

TEST_CASE("same padding preserves spatial dims for random odd kernels") {
    Rng rng(21);
    for (int trial = 0; trial < 8; ++trial) {
        const int kh = 1 + 2 * static_cast<int>(rng.uniform_int(3));
        const int kw = 1 + 2 * static_cast<int>(rng.uniform_int(3));
        const int h = 1 + static_cast<int>(rng.uniform_int(9));
        const int w = 1 + static_cast<int>(rng.uniform_int(9));
        Tape<double> tape;
        auto x = tape.leaf(random_tensor(Shape(1, h, w, 2), rng));
        auto k = tape.leaf(random_tensor(Shape(kh, kw, 2, 3), rng));
        auto b = tape.leaf(Tensor<double>::zeros(Shape(1, 1, 1, 3)));
        auto out = pca::nn::conv2d(tape, x, k, b, 1, Padding::same);
        REQUIRE(out->value.shape() == Shape(1, h, w, 3));
    }
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>::ones(Shape(1, 4, 4, 1)));
    auto even_k = tape.leaf(Tensor<double>::ones(Shape(2, 2, 1, 1)));
    auto b = tape.leaf(Tensor<double>::zeros(Shape(1, 1, 1, 1)));
    REQUIRE_THROWS_AS(pca::nn::conv2d(tape, x, even_k, b, 1, Padding::same), std::invalid_argument);
}

TEST_CASE("conv2d matches a straight-loop oracle") {
    Rng rng(31);
    const Shape xs(2, 5, 4, 3);
    const int kh = 3, kw = 3, oc = 2;
    Tensor<double> x = random_tensor(xs, rng);
    Tensor<double> k = random_tensor(Shape(kh, kw, xs.c, oc), rng);
    Tensor<double> b = random_tensor(Shape(1, 1, 1, oc), rng);

    Tape<double> tape;
    auto out = pca::nn::conv2d(tape, tape.leaf(x), tape.leaf(k), tape.leaf(b), 1, Padding::same);

    for (int n = 0; n < xs.n; ++n)
        for (int oh = 0; oh < xs.h; ++oh)
            for (int ow = 0; ow < xs.w; ++ow)
                for (int o = 0; o < oc; ++o) {
                    double want = b.at(0, 0, 0, o);
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ih = oh - 1 + ky, iw = ow - 1 + kx;
                            if (ih < 0 || ih >= xs.h || iw < 0 || iw >= xs.w) continue;
                            for (int ic = 0; ic < xs.c; ++ic) want += x.at(n, ih, iw, ic) * k.at(ky, kx, ic, o);
                        }
                    REQUIRE(out->value.at(n, oh, ow, o) == Catch::Approx(want).margin(1e-12));
                }
}

TEST_CASE("depthwise separable conv fixtures") {
    Tape<double> tape;

    SECTION("zero pointwise weights leave only the bias") {
        Rng rng(3);
        auto x = tape.leaf(random_tensor(Shape(1, 4, 4, 3), rng));
        auto dw = tape.leaf(random_tensor(Shape(3, 3, 3, 1), rng));
        auto pw = tape.leaf(Tensor<double>::zeros(Shape(1, 1, 3, 2)));
        Tensor<double> bias(Shape(1, 1, 1, 2), {0.5, -1.5});
        auto out = pca::nn::dw_sep_conv3x3(tape, x, dw, pw, tape.leaf(bias));
        for (int h = 0; h < 4; ++h)
            for (int w = 0; w < 4; ++w) {
                REQUIRE(out->value.at(0, h, w, 0) == 0.5);
                REQUIRE(out->value.at(0, h, w, 1) == -1.5);
            }
    }

    SECTION("hand computation: 5 * 2 * 3 + 1 = 31") {
        auto x = tape.leaf(Tensor<double>::full(Shape(1, 3, 3, 1), 5.0));
        Tensor<double> dw(Shape(3, 3, 1, 1));
        dw.at(1, 1, 0, 0) = 2.0;
        auto pw = tape.leaf(Tensor<double>::full(Shape(1, 1, 1, 1), 3.0));
        auto bias = tape.leaf(Tensor<double>::full(Shape(1, 1, 1, 1), 1.0));
        auto out = pca::nn::dw_sep_conv3x3(tape, x, tape.leaf(dw), pw, bias);
        for (std::size_t i = 0; i < out->value.size(); ++i) REQUIRE(out->value[i] == 31.0);
    }

    SECTION("identity factorization") {
        Rng rng(4);
        Tensor<double> xin = random_tensor(Shape(2, 3, 3, 3), rng);
        Tensor<double> dw(Shape(3, 3, 3, 1));
        for (int c = 0; c < 3; ++c) dw.at(1, 1, c, 0) = 1.0;
        Tensor<double> pw(Shape(1, 1, 3, 3));
        for (int c = 0; c < 3; ++c) pw.at(0, 0, c, c) = 1.0;
        auto out = pca::nn::dw_sep_conv3x3(tape, tape.leaf(xin), tape.leaf(dw), tape.leaf(pw),
                                           tape.leaf(Tensor<double>::zeros(Shape(1, 1, 1, 3))));
        REQUIRE(out->value.vec() == xin.vec());
    }

    SECTION("channel mismatch rejected") {
        auto x = tape.leaf(Tensor<double>::ones(Shape(1, 3, 3, 2)));
        auto dw = tape.leaf(Tensor<double>::zeros(Shape(3, 3, 3, 1)));
        auto pw = tape.leaf(Tensor<double>::zeros(Shape(1, 1, 3, 1)));
        auto b = tape.leaf(Tensor<double>::zeros(Shape(1, 1, 1, 1)));
        REQUIRE_THROWS_AS(pca::nn::dw_sep_conv3x3(tape, x, dw, pw, b), std::invalid_argument);
    }
}

TEST_CASE("depthwise separable parameter count beats dense 3x3") {
    using pca::nn::dense_conv3x3_param_count;
    using pca::nn::dw_sep_conv3x3_param_count;
    REQUIRE(dw_sep_conv3x3_param_count(4, 8) == 9u * 4 + 4 * 8 + 8);
    for (int in_c : {1, 3, 16, 64})
        for (int out_c : {2, 8, 32, 128}) {
            REQUIRE(dw_sep_conv3x3_param_count(in_c, out_c) < dense_conv3x3_param_count(in_c, out_c));
        }
    // equality of formula and actual tensor sizes
    Rng rng(8);
    auto p = pca::nn::DwSepConvParams<double>::he_uniform(6, 10, rng);
    REQUIRE(p.param_count() == dw_sep_conv3x3_param_count(6, 10));
}

TEST_CASE("batch norm fixtures") {
    SECTION("constant channel in train mode collapses to beta") {
        Tape<double> tape;
        auto bn = pca::nn::BatchNormParams<double>::init(1);
        bn.beta[0] = 0.75;
        auto x = tape.leaf(Tensor<double>::full(Shape(2, 2, 2, 1), 13.0));
        auto out = pca::nn::batch_norm(tape, x, tape.leaf(bn.gamma), tape.leaf(bn.beta), bn, true);
        for (std::size_t i = 0; i < out->value.size(); ++i) REQUIRE(out->value[i] == Catch::Approx(0.75));
    }

    SECTION("already standardized batch passes through") {
        // batch {-1, +1} has mean 0, biased variance 1
        Tape<double> tape;
        auto bn = pca::nn::BatchNormParams<double>::init(1);
        Tensor<double> x(Shape(2, 1, 1, 1), {-1.0, 1.0});
        auto out = pca::nn::batch_norm(tape, tape.leaf(x), tape.leaf(bn.gamma), tape.leaf(bn.beta), bn, true);
        REQUIRE(out->value[0] == Catch::Approx(-1.0).epsilon(1e-4));
        REQUIRE(out->value[1] == Catch::Approx(1.0).epsilon(1e-4));
    }

    SECTION("gamma=0 collapses to beta") {
        Tape<double> tape;
        Rng rng(6);
        auto bn = pca::nn::BatchNormParams<double>::init(3);
        bn.gamma.fill(0.0);
        bn.beta.fill(-2.0);
        auto x = tape.leaf(random_tensor(Shape(2, 3, 3, 3), rng));
        auto out = pca::nn::batch_norm(tape, x, tape.leaf(bn.gamma), tape.leaf(bn.beta), bn, true);
        for (std::size_t i = 0; i < out->value.size(); ++i) REQUIRE(out->value[i] == -2.0);
    }

    SECTION("train mode standardizes each channel") {
        Rng rng(7);
        auto bn = pca::nn::BatchNormParams<double>::init(4);
        for (int c = 0; c < 4; ++c) bn.gamma[c] = 0.5 + 0.5 * c;
        Tensor<double> x = random_tensor(Shape(4, 5, 5, 4), rng, -3.0, 3.0);
        Tape<double> tape;
        auto out = pca::nn::batch_norm(tape, tape.leaf(x), tape.leaf(bn.gamma), tape.leaf(bn.beta), bn, true);
        const std::size_t m = 4 * 5 * 5;
        for (int c = 0; c < 4; ++c) {
            double mean = 0.0, var = 0.0;
            for (int n = 0; n < 4; ++n)
                for (int h = 0; h < 5; ++h)
                    for (int w = 0; w < 5; ++w) mean += out->value.at(n, h, w, c);
            mean /= static_cast<double>(m);
            for (int n = 0; n < 4; ++n)
                for (int h = 0; h < 5; ++h)
                    for (int w = 0; w < 5; ++w) {
                        const double d = out->value.at(n, h, w, c) - mean;
                        var += d * d;
                    }
            var /= static_cast<double>(m);
            REQUIRE(std::abs(mean) < 1e-5);
            REQUIRE(var == Catch::Approx(bn.gamma[c] * bn.gamma[c]).margin(1e-3));
        }
    }

    SECTION("running stats feed eval mode") {
        auto bn = pca::nn::BatchNormParams<double>::init(1);
        Rng rng(8);
        Tensor<double> x = random_tensor(Shape(4, 3, 3, 1), rng, 4.0, 6.0);
        {
            Tape<double> tape;
            pca::nn::batch_norm(tape, tape.leaf(x), tape.leaf(bn.gamma), tape.leaf(bn.beta), bn, true);
        }
        // one update from (0, 1) with momentum 0.9 moves 10% toward the batch stats
        double batch_mean = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) batch_mean += x[i];
        batch_mean /= static_cast<double>(x.size());
        REQUIRE(bn.running_mean[0] == Catch::Approx(0.1 * batch_mean));

        Tape<double> tape;
        auto out = pca::nn::batch_norm(tape, tape.leaf(x), tape.leaf(bn.gamma), tape.leaf(bn.beta), bn, false);
        const double expect = (x[0] - bn.running_mean[0]) / std::sqrt(bn.running_var[0] + bn.eps);
        REQUIRE(out->value[0] == Catch::Approx(expect));
    }

    SECTION("train mode needs at least two positions") {
        Tape<double> tape;
        auto bn = pca::nn::BatchNormParams<double>::init(2);
        auto x = tape.leaf(Tensor<double>::ones(Shape(1, 1, 1, 2)));
        REQUIRE_THROWS_AS(pca::nn::batch_norm(tape, x, tape.leaf(bn.gamma), tape.leaf(bn.beta), bn, true),
                          std::invalid_argument);
    }
}

TEST_CASE("relu fixtures") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>(Shape(1, 1, 3, 1), {-1.0, 0.0, 2.0}));
    auto out = pca::ops::relu(tape, x);
    REQUIRE(out->value.vec() == std::vector<double>{0.0, 0.0, 2.0});

    auto neg = tape.leaf(Tensor<double>::full(Shape(2, 2, 2, 2), -3.0));
    auto zeros = pca::ops::relu(tape, neg);
    for (std::size_t i = 0; i < zeros->value.size(); ++i) REQUIRE(zeros->value[i] == 0.0);

    // gradient mask equals the (x > 0) indicator; checked away from the kink
    Rng rng(10);
    Tensor<double> xr(Shape(1, 2, 2, 2));
    for (std::size_t i = 0; i < xr.size(); ++i) xr[i] = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.5, 2.0);
    auto f = [](Tape<double>& tape2, const Value<double>& v) {
        return pca::ops::sum(tape2, pca::ops::relu(tape2, v));
    };
    REQUIRE(pca::finite_difference_check(f, xr, 1e-6) < 1e-8);
}

TEST_CASE("avg pool 2x2 fixtures") {
    Tape<double> tape;

    SECTION("constant input") {
        auto out = pca::ops::avg_pool2x2(tape, tape.leaf(Tensor<double>::full(Shape(1, 4, 4, 2), 3.0)));
        REQUIRE(out->value.shape() == Shape(1, 2, 2, 2));
        for (std::size_t i = 0; i < out->value.size(); ++i) REQUIRE(out->value[i] == 3.0);
    }

    SECTION("hand window") {
        auto out = pca::ops::avg_pool2x2(tape, tape.leaf(Tensor<double>(Shape(1, 2, 2, 1), {1, 3, 2, 4})));
        REQUIRE(out->value.scalar_value() == 2.5);
    }

    SECTION("degenerate 2x2 equals the global mean") {
        Rng rng(13);
        Tensor<double> x = random_tensor(Shape(1, 2, 2, 1), rng);
        auto pooled = pca::ops::avg_pool2x2(tape, tape.leaf(x));
        auto global = pca::ops::global_avg_pool(tape, tape.leaf(x));
        REQUIRE(pooled->value.scalar_value() == Catch::Approx(global->value.scalar_value()));
    }

    SECTION("odd dims rejected") {
        REQUIRE_THROWS_AS(pca::ops::avg_pool2x2(tape, tape.leaf(Tensor<double>::ones(Shape(1, 3, 4, 1)))),
                          std::invalid_argument);
    }
}

TEST_CASE("linear fixtures") {
    Tape<double> tape;

    SECTION("zero weights leave the bias") {
        auto x = tape.leaf(Tensor<double>::ones(Shape(3, 1, 1, 4)));
        auto w = tape.leaf(Tensor<double>::zeros(Shape(1, 1, 4, 2)));
        Tensor<double> b(Shape(1, 1, 1, 2), {0.25, -0.5});
        auto out = pca::nn::linear(tape, x, w, tape.leaf(b));
        for (int n = 0; n < 3; ++n) {
            REQUIRE(out->value.at(n, 0, 0, 0) == 0.25);
            REQUIRE(out->value.at(n, 0, 0, 1) == -0.5);
        }
    }

    SECTION("identity weights pass features through") {
        Rng rng(14);
        Tensor<double> x = random_tensor(Shape(2, 1, 1, 3), rng);
        Tensor<double> w(Shape(1, 1, 3, 3));
        for (int i = 0; i < 3; ++i) w.at(0, 0, i, i) = 1.0;
        auto out = pca::nn::linear(tape, tape.leaf(x), tape.leaf(w), tape.leaf(Tensor<double>::zeros(Shape(1, 1, 1, 3))));
        REQUIRE(out->value.vec() == x.vec());
    }

    SECTION("two-feature hand case") {
        Tensor<double> x(Shape(1, 1, 1, 2), {3, 4});
        Tensor<double> w(Shape(1, 1, 2, 2));
        w.at(0, 0, 0, 0) = 1.0;
        w.at(0, 0, 1, 1) = 2.0;
        auto out = pca::nn::linear(tape, tape.leaf(x), tape.leaf(w), tape.leaf(Tensor<double>::zeros(Shape(1, 1, 1, 2))));
        REQUIRE(out->value.vec() == std::vector<double>{3.0, 8.0});
    }

    SECTION("dim mismatch rejected") {
        auto x = tape.leaf(Tensor<double>::ones(Shape(1, 2, 2, 3)));
        auto w = tape.leaf(Tensor<double>::ones(Shape(1, 1, 3, 2)));
        auto b = tape.leaf(Tensor<double>::zeros(Shape(1, 1, 1, 2)));
        REQUIRE_THROWS_AS(pca::nn::linear(tape, x, w, b), std::invalid_argument);
        auto xf = tape.leaf(Tensor<double>::ones(Shape(1, 1, 1, 4)));
        REQUIRE_THROWS_AS(pca::nn::linear(tape, xf, w, b), std::invalid_argument);
    }
}

TEST_CASE("layers pass gradient checks over seeds") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);

        // conv2d, gradients w.r.t. input / kernel / bias
        {
            Tensor<double> x = random_tensor(Shape(2, 4, 4, 2), rng);
            Tensor<double> k = random_tensor(Shape(3, 3, 2, 3), rng);
            Tensor<double> b = random_tensor(Shape(1, 1, 1, 3), rng);
            auto wrt_x = [&](Tape<double>& t, const Value<double>& v) {
                return sq_sum(t, pca::nn::conv2d(t, v, t.leaf(k), t.leaf(b), 1, Padding::same));
            };
            REQUIRE(pca::finite_difference_check(wrt_x, x, 1e-6) < 1e-5);
            auto wrt_k = [&](Tape<double>& t, const Value<double>& v) {
                return sq_sum(t, pca::nn::conv2d(t, t.leaf(x), v, t.leaf(b), 1, Padding::same));
            };
            REQUIRE(pca::finite_difference_check(wrt_k, k, 1e-6) < 1e-5);
            auto wrt_b = [&](Tape<double>& t, const Value<double>& v) {
                return sq_sum(t, pca::nn::conv2d(t, t.leaf(x), t.leaf(k), v, 1, Padding::same));
            };
            REQUIRE(pca::finite_difference_check(wrt_b, b, 1e-6) < 1e-5);
        }

        // strided valid conv
        {
            Tensor<double> x = random_tensor(Shape(1, 6, 6, 2), rng);
            Tensor<double> k = random_tensor(Shape(3, 3, 2, 2), rng);
            Tensor<double> b = random_tensor(Shape(1, 1, 1, 2), rng);
            auto wrt_x = [&](Tape<double>& t, const Value<double>& v) {
                return sq_sum(t, pca::nn::conv2d(t, v, t.leaf(k), t.leaf(b), 2, Padding::valid));
            };
            REQUIRE(pca::finite_difference_check(wrt_x, x, 1e-6) < 1e-5);
        }

        // depthwise separable
        {
            Tensor<double> x = random_tensor(Shape(2, 4, 4, 3), rng);
            Tensor<double> dw = random_tensor(Shape(3, 3, 3, 1), rng);
            Tensor<double> pw = random_tensor(Shape(1, 1, 3, 4), rng);
            Tensor<double> b = random_tensor(Shape(1, 1, 1, 4), rng);
            auto wrt_x = [&](Tape<double>& t, const Value<double>& v) {
                return sq_sum(t, pca::nn::dw_sep_conv3x3(t, v, t.leaf(dw), t.leaf(pw), t.leaf(b)));
            };
            REQUIRE(pca::finite_difference_check(wrt_x, x, 1e-6) < 1e-5);
            auto wrt_dw = [&](Tape<double>& t, const Value<double>& v) {
                return sq_sum(t, pca::nn::dw_sep_conv3x3(t, t.leaf(x), v, t.leaf(pw), t.leaf(b)));
            };
            REQUIRE(pca::finite_difference_check(wrt_dw, dw, 1e-6) < 1e-5);
            auto wrt_pw = [&](Tape<double>& t, const Value<double>& v) {
                return sq_sum(t, pca::nn::dw_sep_conv3x3(t, t.leaf(x), t.leaf(dw), v, t.leaf(b)));
            };
            REQUIRE(pca::finite_difference_check(wrt_pw, pw, 1e-6) < 1e-5);
        }

        // batch norm, train and eval modes
        {
            Tensor<double> x = random_tensor(Shape(3, 3, 3, 2), rng);
            Tensor<double> gamma = random_tensor(Shape(1, 1, 1, 2), rng, 0.5, 1.5);
            Tensor<double> beta = random_tensor(Shape(1, 1, 1, 2), rng);
            Tensor<double> cov = random_tensor(Shape(3, 3, 3, 2), rng);
            for (bool train : {true, false}) {
                auto wrt_x = [&](Tape<double>& t, const Value<double>& v) {
                    auto bn = pca::nn::BatchNormParams<double>::init(2);
                    return weighted_sum(t, pca::nn::batch_norm(t, v, t.leaf(gamma), t.leaf(beta), bn, train), cov);
                };
                REQUIRE(pca::finite_difference_check(wrt_x, x, 1e-6) < 1e-5);
                auto wrt_gamma = [&](Tape<double>& t, const Value<double>& v) {
                    auto bn = pca::nn::BatchNormParams<double>::init(2);
                    return weighted_sum(t, pca::nn::batch_norm(t, t.leaf(x), v, t.leaf(beta), bn, train), cov);
                };
                REQUIRE(pca::finite_difference_check(wrt_gamma, gamma, 1e-6) < 1e-5);
                auto wrt_beta = [&](Tape<double>& t, const Value<double>& v) {
                    auto bn = pca::nn::BatchNormParams<double>::init(2);
                    return weighted_sum(t, pca::nn::batch_norm(t, t.leaf(x), t.leaf(gamma), v, bn, train), cov);
                };
                REQUIRE(pca::finite_difference_check(wrt_beta, beta, 1e-6) < 1e-5);
            }
        }

        // linear
        {
            Tensor<double> x = random_tensor(Shape(3, 1, 1, 4), rng);
            Tensor<double> w = random_tensor(Shape(1, 1, 4, 2), rng);
            Tensor<double> b = random_tensor(Shape(1, 1, 1, 2), rng);
            auto wrt_x = [&](Tape<double>& t, const Value<double>& v) {
                return sq_sum(t, pca::nn::linear(t, v, t.leaf(w), t.leaf(b)));
            };
            REQUIRE(pca::finite_difference_check(wrt_x, x, 1e-6) < 1e-5);
            auto wrt_w = [&](Tape<double>& t, const Value<double>& v) {
                return sq_sum(t, pca::nn::linear(t, t.leaf(x), v, t.leaf(b)));
            };
            REQUIRE(pca::finite_difference_check(wrt_w, w, 1e-6) < 1e-5);
        }
    }
}
