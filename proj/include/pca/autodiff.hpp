#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pca/tensor.hpp"

namespace pca {

/// One node of the computation graph: a value plus an optional same-shape
/// gradient slot. Nodes are created by Tape::leaf or by recorded operations
/// and are immutable once their producing op has written them.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::uint64_t tape_id = 0;

    bool has_grad() const { return !grad.empty(); }

    /// Allocates the gradient slot (zero-filled) on first use.
    Tensor<T>& grad_slot() {
        if (grad.empty()) grad = Tensor<T>::zeros(value.shape());
        return grad;
    }
};

template <typename T>
using Value = std::shared_ptr<Node<T>>;

/// Define-by-run tape. Operations append themselves in execution order, which
/// is already topological, so backward() is a single reverse sweep that pulls
/// each recorded op exactly once. Single-threaded by contract.
template <typename T>
class Tape {
public:
    Tape() : id_(next_id()++) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Wraps a plain tensor as a graph input.
    Value<T> leaf(Tensor<T> v, bool requires_grad = false) {
        auto node = std::make_shared<Node<T>>();
        node->value = std::move(v);
        node->requires_grad = requires_grad;
        node->tape_id = id_;
        return node;
    }

    /// Creates the output node for an op result. The op then records its
    /// backward rule with record() when any input requires a gradient.
    Value<T> make(Tensor<T> v, bool requires_grad) {
        auto node = std::make_shared<Node<T>>();
        node->value = std::move(v);
        node->requires_grad = requires_grad;
        node->tape_id = id_;
        return node;
    }

    /// Registers the backward rule of the op that produced `out`. The rule
    /// reads out->grad and accumulates (+=) into the grad slots of the op's
    /// inputs that require gradients.
    void record(Value<T> out, std::function<void()> pull) {
        records_.push_back({std::move(out), std::move(pull)});
    }

    /// Reverse sweep from a scalar loss. Every requires_grad node reachable
    /// from the loss ends up with its gradient filled; fan-out accumulates
    /// additively. Deterministic: fixed reverse execution order.
    void backward(const Value<T>& loss) {
        if (!loss) throw std::invalid_argument("backward: null loss node");
        if (loss->tape_id != id_) throw std::invalid_argument("backward: loss was not produced on this tape");
        if (!loss->value.is_scalar()) {
            throw std::invalid_argument("backward: loss must be scalar, got shape " + loss->value.shape().str());
        }
        loss->grad_slot()[0] += T(1);
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
            if (it->out->has_grad()) it->pull();
        }
    }

    std::size_t num_records() const { return records_.size(); }
    std::uint64_t id() const { return id_; }

private:
    struct Record {
        Value<T> out;
        std::function<void()> pull;
    };

    static std::uint64_t& next_id() {
        static std::uint64_t id = 1;
        return id;
    }

    std::uint64_t id_;
    std::vector<Record> records_;
};

namespace detail {

/// True when the result of an op over these inputs should track gradients.
template <typename T>
inline bool any_requires_grad(const std::vector<Value<T>>& ins) {
    for (const auto& v : ins) {
        if (v && v->requires_grad) return true;
    }
    return false;
}

template <typename T>
inline void check_same_tape(const Tape<T>& tape, const Value<T>& v, const char* op) {
    if (!v) throw std::invalid_argument(std::string(op) + ": null input");
    if (v->tape_id != tape.id()) {
        throw std::invalid_argument(std::string(op) + ": input belongs to a different tape");
    }
}

}  // namespace detail

}  // namespace pca
