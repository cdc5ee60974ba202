#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace cnnga {

/// Dense row-major array of rank 1 to 4. Image tensors are (N, C, H, W); feature tensors (N, F).
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, T fill = T(0)) : shape_(std::move(shape)) {
        if (shape_.empty() || shape_.size() > 4) {
            throw ShapeError("tensor rank must be 1..4");
        }
        data_.assign(element_count(shape_), fill);
    }

    static std::size_t element_count(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
    }

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& operator()(std::size_t n, std::size_t f) { return data_[n * shape_[1] + f]; }
    const T& operator()(std::size_t n, std::size_t f) const { return data_[n * shape_[1] + f]; }

    T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    /// Same data, new shape of equal element count.
    Tensor reshaped(std::vector<std::size_t> shape) const {
        if (element_count(shape) != data_.size()) {
            throw ShapeError("reshape changes element count");
        }
        Tensor out;
        out.shape_ = std::move(shape);
        out.data_ = data_;
        return out;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

} // namespace cnnga
