#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pca/autodiff.hpp"
#include "pca/tensor.hpp"

namespace pca {

/// Central finite-difference gradient verification for a pure scalar-valued
/// function of one tensor. Builds the analytic gradient with a fresh tape,
/// then perturbs every coordinate by +-eps and compares. Returns the max
/// over coordinates of |analytic - numeric| / max(floor, |analytic| + |numeric|).
/// The floor is the crossover below which the comparison is absolute: a
/// mathematically-zero direction (e.g. a conv bias absorbed by the batch-norm
/// mean) leaves both sides at the fd noise floor (~1e-8 for f ~ O(10) and
/// eps = 1e-6), which a pure relative metric would score as 100% error.
/// Against a 1e-5 threshold the default floor still flags any coordinate
/// whose absolute disagreement exceeds 1e-7.
template <typename T, typename Fn>
T finite_difference_check(const Fn& f, const Tensor<T>& x, T eps, T floor = T(1e-2)) {
    if (!(eps > T(0))) throw std::invalid_argument("finite_difference_check: eps must be > 0");

    Tensor<T> analytic;
    {
        Tape<T> tape;
        Value<T> xv = tape.leaf(x, true);
        Value<T> loss = f(tape, xv);
        tape.backward(loss);
        analytic = xv->has_grad() ? xv->grad : Tensor<T>::zeros(x.shape());
    }

    auto eval = [&f](const Tensor<T>& point) {
        Tape<T> tape;
        Value<T> xv = tape.leaf(point, false);
        return f(tape, xv)->value.scalar_value();
    };

    T max_rel = T(0);
    Tensor<T> probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T orig = probe[i];
        probe[i] = orig + eps;
        const T fp = eval(probe);
        probe[i] = orig - eps;
        const T fm = eval(probe);
        probe[i] = orig;

        const T numeric = (fp - fm) / (T(2) * eps);
        const T a = analytic[i];
        const T denom = std::max(floor, std::abs(a) + std::abs(numeric));
        max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
    return max_rel;
}

}  // namespace pca
