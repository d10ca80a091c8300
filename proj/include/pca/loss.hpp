#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "pca/autodiff.hpp"
#include "pca/tensor.hpp"

namespace pca {

/// Row-wise softmax of logits (n,1,1,L) as plain values, for scoring/AUC.
template <typename T>
Tensor<T> softmax_probs(const Tensor<T>& logits) {
    const Shape& s = logits.shape();
    Tensor<T> out(s);
    const int L = s.c;
    for (int n = 0; n < s.n; ++n) {
        const T* z = logits.data() + static_cast<std::size_t>(n) * L;
        T* p = out.data() + static_cast<std::size_t>(n) * L;
        T mx = z[0];
        for (int c = 1; c < L; ++c) mx = std::max(mx, z[c]);
        T denom = T(0);
        for (int c = 0; c < L; ++c) {
            p[c] = std::exp(z[c] - mx);
            denom += p[c];
        }
        for (int c = 0; c < L; ++c) p[c] /= denom;
    }
    return out;
}

/// Multi-class focal loss: softmax over logits, per-sample term
/// -(1 - p_y)^gamma * log(p_y), averaged over the batch. gamma = 0 reduces
/// to plain cross-entropy. Stabilized via log-softmax; differentiable.
template <typename T>
Value<T> focal_loss(Tape<T>& tape, const Value<T>& logits, const std::vector<int>& labels, T gamma) {
    pca::detail::check_same_tape(tape, logits, "focal_loss");
    const Shape& s = logits->value.shape();
    if (s.h != 1 || s.w != 1) {
        throw std::invalid_argument("focal_loss: logits must be (n,1,1,L), got " + s.str());
    }
    const int N = s.n, L = s.c;
    if (static_cast<int>(labels.size()) != N) {
        throw std::invalid_argument("focal_loss: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(N) + " samples");
    }
    for (int lab : labels) {
        if (lab < 0 || lab >= L) {
            throw std::invalid_argument("focal_loss: label " + std::to_string(lab) + " out of range [0," +
                                        std::to_string(L) + ")");
        }
    }
    if (gamma < T(0)) throw std::invalid_argument("focal_loss: gamma must be >= 0");

    // log-softmax per row, keep probabilities for the backward rule
    auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(N) * L);
    auto logp_true = std::make_shared<std::vector<T>>(N);
    T total = T(0);
    for (int n = 0; n < N; ++n) {
        const T* z = logits->value.data() + static_cast<std::size_t>(n) * L;
        T* p = probs->data() + static_cast<std::size_t>(n) * L;
        T mx = z[0];
        for (int c = 1; c < L; ++c) mx = std::max(mx, z[c]);
        T denom = T(0);
        for (int c = 0; c < L; ++c) denom += std::exp(z[c] - mx);
        const T lse = mx + std::log(denom);
        for (int c = 0; c < L; ++c) p[c] = std::exp(z[c] - lse);
        const T lp = z[labels[n]] - lse;
        (*logp_true)[n] = lp;
        const T one_minus_p = std::max(T(0), T(1) - p[labels[n]]);
        total += -std::pow(one_minus_p, gamma) * lp;
    }
    total /= static_cast<T>(N);

    Value<T> result = tape.make(Tensor<T>::scalar(total), logits->requires_grad);
    if (logits->requires_grad) {
        auto labels_copy = std::make_shared<std::vector<int>>(labels);
        tape.record(result, [logits, result, probs, logp_true, labels_copy, gamma, N, L]() {
            T* gz = logits->grad_slot().data();
            const T gout = result->grad[0] / static_cast<T>(N);
            for (int n = 0; n < N; ++n) {
                const int y = (*labels_copy)[n];
                const T* p = probs->data() + static_cast<std::size_t>(n) * L;
                const T py = p[y];
                const T lp = (*logp_true)[n];
                const T omp = std::max(T(0), T(1) - py);
                // d/dz_j [-(1-p)^g log p] = (g*(1-p)^(g-1)*p*log p - (1-p)^g) * (delta_jy - p_j)
                T factor = -std::pow(omp, gamma);
                if (gamma > T(0) && lp != T(0)) {
                    factor += gamma * std::pow(omp, gamma - T(1)) * py * lp;
                }
                T* grow = gz + static_cast<std::size_t>(n) * L;
                for (int c = 0; c < L; ++c) {
                    const T indicator = c == y ? T(1) : T(0);
                    grow[c] += gout * factor * (indicator - p[c]);
                }
            }
        });
    }
    return result;
}

/// Value-only focal loss for evaluation passes.
template <typename T>
T focal_loss_value(const Tensor<T>& logits, const std::vector<int>& labels, T gamma) {
    Tape<T> tape;
    return focal_loss(tape, tape.leaf(logits, false), labels, gamma)->value.scalar_value();
}

}  // namespace pca
