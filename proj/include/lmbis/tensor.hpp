#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lmbis {

// Thrown when a kernel would produce or consume NaN/Inf values.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct TensorShape {
    int n = 0;  // batch
    int c = 0;  // channels
    int h = 0;
    int w = 0;

    bool operator==(const TensorShape&) const = default;

    std::size_t count() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

// Dense 4-D array, row-major with width fastest. Carries an optional
// gradient buffer of identical shape.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(TensorShape shape)
        : shape_(shape), data_(shape.count(), T(0)) {
        if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
            throw ShapeError("tensor dims must be non-negative, got " + shape.str());
    }

    TensorT(int n, int c, int h, int w) : TensorT(TensorShape{n, c, h, w}) {}

    static TensorT full(TensorShape shape, T value) {
        TensorT t(shape);
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    const TensorShape& shape() const { return shape_; }
    int batch() const { return shape_.n; }
    int channels() const { return shape_.c; }
    int height() const { return shape_.h; }
    int width() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }

    std::size_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    T& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
    const T& at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

    // Gradient buffer. Allocated lazily, always shape-matched.
    bool has_grad() const { return grad_.has_value(); }

    std::span<T> grad() {
        if (!grad_) grad_.emplace(data_.size(), T(0));
        return *grad_;
    }

    std::span<const T> grad() const {
        if (!grad_) throw std::logic_error("tensor has no gradient buffer");
        return *grad_;
    }

    void zero_grad() {
        if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
    }

    void drop_grad() { grad_.reset(); }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i)
            out[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    TensorShape shape_{};
    std::vector<T> data_;
    std::optional<std::vector<T>> grad_;
};

using Tensor = TensorT<float>;

// Every kernel calls this on its result; non-finite values are signalled
// instead of propagated.
template <typename T>
void require_finite(const TensorT<T>& t, const char* where) {
    for (T v : t.data()) {
        if (!std::isfinite(v))
            throw NumericError(std::string(where) + ": non-finite value in result");
    }
}

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* where) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(where) + ": shape mismatch " + a.shape().str() +
                         " vs " + b.shape().str());
}

}  // namespace lmbis
