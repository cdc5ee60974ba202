#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "errors.hpp"
#include "layers.hpp"
#include "tensor.hpp"

namespace cnnga::nn {

/// Adam with bias correction. Moments are created lazily on the first step.
template <class T>
class Adam {
public:
    struct Hyper {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    Adam() = default;
    explicit Adam(Hyper h) : hyper_(h) {}

    std::int64_t step_count() const noexcept { return t_; }
    const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
    const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }

    void step(std::span<const Parameter<T>> params, double lr) {
        if (!(lr > 0.0)) throw InvalidArgument("adam: learning rate must be positive");
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.value->shape());
                v_.emplace_back(p.value->shape());
            }
        }
        if (m_.size() != params.size()) throw ShapeError("adam: parameter list changed between steps");
        ++t_;
        const double c1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
        const T b1 = static_cast<T>(hyper_.beta1), b2 = static_cast<T>(hyper_.beta2);
        const T step_scale = static_cast<T>(lr / c1);
        const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
        const T eps = static_cast<T>(hyper_.eps);
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& w = *params[i].value;
            const Tensor<T>& g = *params[i].grad;
            if (g.size() != w.size() || m_[i].size() != w.size()) throw ShapeError("adam: shape mismatch");
            T* m = m_[i].data();
            T* v = v_[i].data();
            T* pw = w.data();
            const T* pg = g.data();
            for (std::size_t j = 0; j < w.size(); ++j) {
                m[j] = b1 * m[j] + (T(1) - b1) * pg[j];
                v[j] = b2 * v[j] + (T(1) - b2) * pg[j] * pg[j];
                // lr * m_hat / (sqrt(v_hat) + eps)
                pw[j] -= step_scale * m[j] / (std::sqrt(v[j]) * inv_sqrt_c2 + eps);
            }
        }
    }

private:
    Hyper hyper_{};
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
    std::int64_t t_ = 0;
};

} // namespace cnnga::nn
