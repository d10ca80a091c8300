#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pca {

/// Dimensions of a dense rank-4 tensor, (batch, rows, cols, channels).
/// Parameter tensors reuse the same slots, e.g. a conv kernel is
/// (kh, kw, in_c, out_c) and a bias is (1, 1, 1, out_c).
struct Shape {
    int n = 1;
    int h = 1;
    int w = 1;
    int c = 1;

    Shape() = default;
    Shape(int n_, int h_, int w_, int c_) : n(n_), h(h_), w(w_), c(c_) {}

    std::size_t total() const {
        return static_cast<std::size_t>(n) * h * w * static_cast<std::size_t>(c);
    }

    bool operator==(const Shape& o) const {
        return n == o.n && h == o.h && w == o.w && c == o.c;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::ostringstream os;
        os << "(" << n << "," << h << "," << w << "," << c << ")";
        return os.str();
    }
};

/// Dense rank-4 value container, row-major in (n, h, w, c) order.
/// Plain data only; gradients live on autodiff nodes, not here.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(const Shape& s) : shape_(s), data_(s.total(), T(0)) {
        check_shape(s);
    }

    Tensor(const Shape& s, std::vector<T> data) : shape_(s), data_(std::move(data)) {
        check_shape(s);
        if (data_.size() != s.total()) {
            throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                        " does not match shape " + s.str());
        }
    }

    static Tensor zeros(const Shape& s) { return Tensor(s); }

    static Tensor full(const Shape& s, T v) {
        Tensor t(s);
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor ones(const Shape& s) { return full(s, T(1)); }

    static Tensor scalar(T v) { return full(Shape(1, 1, 1, 1), v); }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    std::size_t index(int n, int h, int w, int c) const {
        return ((static_cast<std::size_t>(n) * shape_.h + h) * shape_.w + w) *
                   static_cast<std::size_t>(shape_.c) + c;
    }

    T& at(int n, int h, int w, int c) { return data_[index(n, h, w, c)]; }
    const T& at(int n, int h, int w, int c) const { return data_[index(n, h, w, c)]; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// Scalar tensors carry exactly one element.
    bool is_scalar() const { return data_.size() == 1; }
    T scalar_value() const {
        if (!is_scalar()) throw std::logic_error("tensor is not scalar: " + shape_.str());
        return data_[0];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    /// Element-type conversion (e.g. double test tensors from float data).
    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

private:
    static void check_shape(const Shape& s) {
        if (s.n < 1 || s.h < 1 || s.w < 1 || s.c < 1) {
            throw std::invalid_argument("all tensor dims must be >= 1, got " + s.str());
        }
    }

    Shape shape_;
    std::vector<T> data_;
};

}  // namespace pca
