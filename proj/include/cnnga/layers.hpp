#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "gemm.hpp"
#include "genome.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace cnnga::nn {

enum class Mode { train, eval };

/// Non-owning view of a trainable tensor and its gradient.
template <class T>
struct Parameter {
    std::string name;
    Tensor<T>* value = nullptr;
    Tensor<T>* grad = nullptr;
};

namespace detail {

inline void require_rank(const auto& t, std::size_t rank, const char* who) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(who) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
    }
}

inline void require_saved(bool saved, const char* who) {
    if (!saved) throw ContractError(std::string(who) + ": backward called before forward");
}

template <class T>
void he_uniform(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : w.values()) v = static_cast<T>(uniform_real(rng, -bound, bound));
}

} // namespace detail

/// Stride-1 convolution with zero padding (k-1)/2, lowered to one GEMM over the whole batch.
template <class T>
class Conv2d {
public:
    Conv2d(int in_channels, int out_channels, int kernel_size)
        : in_(static_cast<std::size_t>(in_channels)),
          out_(static_cast<std::size_t>(out_channels)),
          k_(static_cast<std::size_t>(kernel_size)),
          weight_({out_, in_, k_, k_}),
          bias_({out_}),
          grad_weight_({out_, in_, k_, k_}),
          grad_bias_({out_}) {
        if (in_channels <= 0 || out_channels <= 0 || kernel_size <= 0 || kernel_size % 2 == 0) {
            throw InvalidArgument("conv2d needs positive channels and an odd kernel");
        }
    }

    void init(Rng& rng) {
        detail::he_uniform(weight_, in_ * k_ * k_, rng);
        bias_.fill(T(0));
    }

    Tensor<T> forward(const Tensor<T>& x) {
        detail::require_rank(x, 4, "conv2d");
        if (x.dim(1) != in_) {
            throw ShapeError("conv2d: expected " + std::to_string(in_) + " input channels, got " +
                             std::to_string(x.dim(1)));
        }
        in_shape_ = x.shape();
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::size_t hw = h * w, p = n * hw, kc = in_ * k_ * k_;
        im2col(x);

        std::vector<T> out2d(out_ * p, T(0));
        cnnga::detail::gemm(cnnga::detail::Op::normal, cnnga::detail::Op::normal, out_, p, kc, weight_.data(), kc,
                            col_.data(), p, out2d.data(), p);
        Tensor<T> y({n, out_, h, w});
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t o = 0; o < out_; ++o) {
                const T* src = out2d.data() + o * p + b * hw;
                T* dst = y.data() + (b * out_ + o) * hw;
                const T bo = bias_[o];
                for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] + bo;
            }
        }
        saved_ = true;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        detail::require_saved(saved_, "conv2d");
        const std::size_t n = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
        if (dy.shape() != std::vector<std::size_t>{n, out_, h, w}) throw ShapeError("conv2d: gradient shape mismatch");
        const std::size_t hw = h * w, p = n * hw, kc = in_ * k_ * k_;

        std::vector<T> dy2d(out_ * p);
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t o = 0; o < out_; ++o) {
                const T* src = dy.data() + (b * out_ + o) * hw;
                std::copy(src, src + hw, dy2d.data() + o * p + b * hw);
            }
        }
        for (std::size_t o = 0; o < out_; ++o) {
            T acc = T(0);
            const T* row = dy2d.data() + o * p;
            for (std::size_t i = 0; i < p; ++i) acc += row[i];
            grad_bias_[o] = acc;
        }
        grad_weight_.fill(T(0));
        cnnga::detail::gemm(cnnga::detail::Op::normal, cnnga::detail::Op::transposed, out_, kc, p, dy2d.data(), p,
                            col_.data(), p, grad_weight_.data(), kc);

        std::fill(col_.begin(), col_.end(), T(0));
        cnnga::detail::gemm(cnnga::detail::Op::transposed, cnnga::detail::Op::normal, kc, p, out_, weight_.data(), kc,
                            dy2d.data(), p, col_.data(), p);
        Tensor<T> dx(in_shape_);
        col2im(dx);
        return dx;
    }

    void collect(std::vector<Parameter<T>>& out, const std::string& prefix) {
        out.push_back({prefix + ".weight", &weight_, &grad_weight_});
        out.push_back({prefix + ".bias", &bias_, &grad_bias_});
    }

    Tensor<T>& weight() noexcept { return weight_; }
    Tensor<T>& bias() noexcept { return bias_; }
    const Tensor<T>& grad_weight() const noexcept { return grad_weight_; }
    const Tensor<T>& grad_bias() const noexcept { return grad_bias_; }

    std::size_t parameter_count() const noexcept { return weight_.size() + bias_.size(); }

private:
    // col[(c*k + ky)*k + kx][b*hw + y*w + x] = x[b, c, y + ky - pad, x + kx - pad]
    void im2col(const Tensor<T>& x) {
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::size_t hw = h * w, p = n * hw;
        const auto pad = static_cast<std::ptrdiff_t>(k_ / 2);
        col_.assign(in_ * k_ * k_ * p, T(0));
        for (std::size_t c = 0; c < in_; ++c) {
            for (std::size_t ky = 0; ky < k_; ++ky) {
                for (std::size_t kx = 0; kx < k_; ++kx) {
                    const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(ky) - pad;
                    const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(kx) - pad;
                    const std::size_t x_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -ox));
                    const std::size_t x_hi = static_cast<std::size_t>(
                        std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w) - ox, 0, static_cast<std::ptrdiff_t>(w)));
                    T* row = col_.data() + ((c * k_ + ky) * k_ + kx) * p;
                    for (std::size_t b = 0; b < n; ++b) {
                        const T* plane = x.data() + (b * in_ + c) * hw;
                        for (std::size_t y = 0; y < h; ++y) {
                            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + oy;
                            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h) || x_lo >= x_hi) continue;
                            const T* src = plane + static_cast<std::size_t>(sy) * w;
                            T* dst = row + b * hw + y * w;
                            for (std::size_t xx = x_lo; xx < x_hi; ++xx) {
                                dst[xx] = src[static_cast<std::ptrdiff_t>(xx) + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    void col2im(Tensor<T>& dx) const {
        const std::size_t n = dx.dim(0), h = dx.dim(2), w = dx.dim(3);
        const std::size_t hw = h * w, p = n * hw;
        const auto pad = static_cast<std::ptrdiff_t>(k_ / 2);
        for (std::size_t c = 0; c < in_; ++c) {
            for (std::size_t ky = 0; ky < k_; ++ky) {
                for (std::size_t kx = 0; kx < k_; ++kx) {
                    const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(ky) - pad;
                    const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(kx) - pad;
                    const std::size_t x_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -ox));
                    const std::size_t x_hi = static_cast<std::size_t>(
                        std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w) - ox, 0, static_cast<std::ptrdiff_t>(w)));
                    const T* row = col_.data() + ((c * k_ + ky) * k_ + kx) * p;
                    for (std::size_t b = 0; b < n; ++b) {
                        T* plane = dx.data() + (b * in_ + c) * hw;
                        for (std::size_t y = 0; y < h; ++y) {
                            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + oy;
                            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h) || x_lo >= x_hi) continue;
                            T* dst = plane + static_cast<std::size_t>(sy) * w;
                            const T* src = row + b * hw + y * w;
                            for (std::size_t xx = x_lo; xx < x_hi; ++xx) {
                                dst[static_cast<std::ptrdiff_t>(xx) + ox] += src[xx];
                            }
                        }
                    }
                }
            }
        }
    }

    std::size_t in_, out_, k_;
    Tensor<T> weight_, bias_, grad_weight_, grad_bias_;
    std::vector<T> col_;
    std::vector<std::size_t> in_shape_;
    bool saved_ = false;
};

/// Elementwise tanh / relu / leaky relu (slope 0.01).
template <class T>
class ActivationLayer {
public:
    static constexpr T leaky_slope = T(0.01);

    explicit ActivationLayer(Activation kind) : kind_(kind) {}

    Activation kind() const noexcept { return kind_; }

    Tensor<T> forward(const Tensor<T>& x) {
        Tensor<T> y = x;
        switch (kind_) {
        case Activation::tanh:
            for (auto& v : y.values()) v = std::tanh(v);
            break;
        case Activation::relu:
            for (auto& v : y.values()) v = v > T(0) ? v : T(0);
            break;
        case Activation::leaky_relu:
            for (auto& v : y.values()) v = v > T(0) ? v : leaky_slope * v;
            break;
        }
        saved_ = kind_ == Activation::tanh ? y : x;
        has_saved_ = true;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        detail::require_saved(has_saved_, "activation");
        if (dy.shape() != saved_.shape()) throw ShapeError("activation: gradient shape mismatch");
        Tensor<T> dx = dy;
        const T* s = saved_.data();
        T* d = dx.data();
        const std::size_t count = dx.size();
        switch (kind_) {
        case Activation::tanh:
            for (std::size_t i = 0; i < count; ++i) d[i] *= T(1) - s[i] * s[i];
            break;
        case Activation::relu:
            for (std::size_t i = 0; i < count; ++i) d[i] = s[i] > T(0) ? d[i] : T(0);
            break;
        case Activation::leaky_relu:
            for (std::size_t i = 0; i < count; ++i) d[i] = s[i] > T(0) ? d[i] : leaky_slope * d[i];
            break;
        }
        return dx;
    }

private:
    Activation kind_;
    Tensor<T> saved_;  // output for tanh, input otherwise
    bool has_saved_ = false;
};

/// 2x2 window, stride 2. Odd trailing rows/columns are dropped; a side of length 1 passes through.
template <class T>
class MaxPool2x2 {
public:
    static std::size_t output_side(std::size_t side) noexcept { return side >= 2 ? side / 2 : side; }

    Tensor<T> forward(const Tensor<T>& x) {
        detail::require_rank(x, 4, "maxpool");
        in_shape_ = x.shape();
        const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const std::size_t oh = output_side(h), ow = output_side(w);
        const std::size_t wy = h >= 2 ? 2 : 1, wx = w >= 2 ? 2 : 1;
        Tensor<T> y({n, c, oh, ow});
        argmax_.assign(y.size(), 0);
        std::size_t out_index = 0;
        for (std::size_t plane = 0; plane < n * c; ++plane) {
            const std::size_t base = plane * h * w;
            for (std::size_t i = 0; i < oh; ++i) {
                for (std::size_t j = 0; j < ow; ++j, ++out_index) {
                    std::size_t best = base + (i * wy) * w + j * wx;
                    for (std::size_t dy = 0; dy < wy; ++dy) {
                        for (std::size_t dx = 0; dx < wx; ++dx) {
                            const std::size_t idx = base + (i * wy + dy) * w + j * wx + dx;
                            if (x[idx] > x[best]) best = idx;
                        }
                    }
                    argmax_[out_index] = best;
                    y[out_index] = x[best];
                }
            }
        }
        saved_ = true;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        detail::require_saved(saved_, "maxpool");
        if (dy.size() != argmax_.size()) throw ShapeError("maxpool: gradient shape mismatch");
        Tensor<T> dx(in_shape_);
        for (std::size_t i = 0; i < argmax_.size(); ++i) dx[argmax_[i]] += dy[i];
        return dx;
    }

private:
    std::vector<std::size_t> in_shape_;
    std::vector<std::size_t> argmax_;
    bool saved_ = false;
};

/// Per-channel batch normalization over (N, H, W) with learned scale and shift.
template <class T>
class BatchNorm2d {
public:
    explicit BatchNorm2d(int channels, double eps = 1e-5, double momentum = 0.1)
        : c_(static_cast<std::size_t>(channels)),
          eps_(eps),
          momentum_(momentum),
          gamma_({c_}, T(1)),
          beta_({c_}, T(0)),
          grad_gamma_({c_}),
          grad_beta_({c_}),
          running_mean_({c_}, T(0)),
          running_var_({c_}, T(1)) {
        if (channels <= 0) throw InvalidArgument("batchnorm needs positive channels");
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) {
        detail::require_rank(x, 4, "batchnorm");
        if (x.dim(1) != c_) throw ShapeError("batchnorm: channel mismatch");
        const std::size_t n = x.dim(0), hw = x.dim(2) * x.dim(3);
        const std::size_t count = n * hw;
        mode_ = mode;
        xhat_ = Tensor<T>(x.shape());
        inv_std_.assign(c_, T(0));
        Tensor<T> y(x.shape());
        for (std::size_t ch = 0; ch < c_; ++ch) {
            double mean;
            double var;
            if (mode == Mode::train) {
                double sum = 0.0;
                for (std::size_t b = 0; b < n; ++b) {
                    const T* src = x.data() + (b * c_ + ch) * hw;
                    for (std::size_t i = 0; i < hw; ++i) sum += src[i];
                }
                mean = sum / static_cast<double>(count);
                double sq = 0.0;
                for (std::size_t b = 0; b < n; ++b) {
                    const T* src = x.data() + (b * c_ + ch) * hw;
                    for (std::size_t i = 0; i < hw; ++i) {
                        const double d = src[i] - mean;
                        sq += d * d;
                    }
                }
                var = sq / static_cast<double>(count);
                const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
                running_mean_[ch] = static_cast<T>((1.0 - momentum_) * running_mean_[ch] + momentum_ * mean);
                running_var_[ch] = static_cast<T>((1.0 - momentum_) * running_var_[ch] + momentum_ * unbiased);
            } else {
                mean = running_mean_[ch];
                var = running_var_[ch];
            }
            const T inv = static_cast<T>(1.0 / std::sqrt(var + eps_));
            const T m = static_cast<T>(mean);
            inv_std_[ch] = inv;
            for (std::size_t b = 0; b < n; ++b) {
                const std::size_t off = (b * c_ + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    const T xh = (x[off + i] - m) * inv;
                    xhat_[off + i] = xh;
                    y[off + i] = gamma_[ch] * xh + beta_[ch];
                }
            }
        }
        saved_ = true;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        detail::require_saved(saved_, "batchnorm");
        if (dy.shape() != xhat_.shape()) throw ShapeError("batchnorm: gradient shape mismatch");
        const std::size_t n = dy.dim(0), hw = dy.dim(2) * dy.dim(3);
        const double count = static_cast<double>(n * hw);
        Tensor<T> dx(dy.shape());
        for (std::size_t ch = 0; ch < c_; ++ch) {
            double sum_dy = 0.0;
            double sum_dy_xhat = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                const std::size_t off = (b * c_ + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    sum_dy += dy[off + i];
                    sum_dy_xhat += static_cast<double>(dy[off + i]) * xhat_[off + i];
                }
            }
            grad_gamma_[ch] = static_cast<T>(sum_dy_xhat);
            grad_beta_[ch] = static_cast<T>(sum_dy);
            const double scale = static_cast<double>(gamma_[ch]) * inv_std_[ch];
            for (std::size_t b = 0; b < n; ++b) {
                const std::size_t off = (b * c_ + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    if (mode_ == Mode::train) {
                        dx[off + i] = static_cast<T>(scale / count *
                                                     (count * dy[off + i] - sum_dy - xhat_[off + i] * sum_dy_xhat));
                    } else {
                        dx[off + i] = static_cast<T>(scale * dy[off + i]);
                    }
                }
            }
        }
        return dx;
    }

    void collect(std::vector<Parameter<T>>& out, const std::string& prefix) {
        out.push_back({prefix + ".gamma", &gamma_, &grad_gamma_});
        out.push_back({prefix + ".beta", &beta_, &grad_beta_});
    }

    Tensor<T>& gamma() noexcept { return gamma_; }
    Tensor<T>& beta() noexcept { return beta_; }
    Tensor<T>& running_mean() noexcept { return running_mean_; }
    Tensor<T>& running_var() noexcept { return running_var_; }
    const Tensor<T>& grad_gamma() const noexcept { return grad_gamma_; }
    const Tensor<T>& grad_beta() const noexcept { return grad_beta_; }

    std::size_t parameter_count() const noexcept { return 2 * c_; }

private:
    std::size_t c_;
    double eps_;
    double momentum_;
    Tensor<T> gamma_, beta_, grad_gamma_, grad_beta_, running_mean_, running_var_;
    Tensor<T> xhat_;
    std::vector<T> inv_std_;
    Mode mode_ = Mode::train;
    bool saved_ = false;
};

/// Average pooling onto a fixed output grid; bin i covers [floor(i*in/out), ceil((i+1)*in/out)).
template <class T>
class AdaptiveAvgPool2d {
public:
    explicit AdaptiveAvgPool2d(int output_side) : out_(static_cast<std::size_t>(output_side)) {
        if (output_side <= 0) throw InvalidArgument("adaptive pool output must be positive");
    }

    Tensor<T> forward(const Tensor<T>& x) {
        detail::require_rank(x, 4, "adaptive_avgpool");
        in_shape_ = x.shape();
        const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        if (h == 0 || w == 0) throw ShapeError("adaptive_avgpool: empty spatial input");
        Tensor<T> y({n, c, out_, out_});
        for (std::size_t plane = 0; plane < n * c; ++plane) {
            const T* src = x.data() + plane * h * w;
            for (std::size_t i = 0; i < out_; ++i) {
                const auto [y0, y1] = bin(i, h);
                for (std::size_t j = 0; j < out_; ++j) {
                    const auto [x0, x1] = bin(j, w);
                    T acc = T(0);
                    for (std::size_t yy = y0; yy < y1; ++yy) {
                        for (std::size_t xx = x0; xx < x1; ++xx) acc += src[yy * w + xx];
                    }
                    y[(plane * out_ + i) * out_ + j] = acc / static_cast<T>((y1 - y0) * (x1 - x0));
                }
            }
        }
        saved_ = true;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        detail::require_saved(saved_, "adaptive_avgpool");
        const std::size_t n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
        if (dy.shape() != std::vector<std::size_t>{n, c, out_, out_}) {
            throw ShapeError("adaptive_avgpool: gradient shape mismatch");
        }
        Tensor<T> dx(in_shape_);
        for (std::size_t plane = 0; plane < n * c; ++plane) {
            T* dst = dx.data() + plane * h * w;
            for (std::size_t i = 0; i < out_; ++i) {
                const auto [y0, y1] = bin(i, h);
                for (std::size_t j = 0; j < out_; ++j) {
                    const auto [x0, x1] = bin(j, w);
                    const T g = dy[(plane * out_ + i) * out_ + j] / static_cast<T>((y1 - y0) * (x1 - x0));
                    for (std::size_t yy = y0; yy < y1; ++yy) {
                        for (std::size_t xx = x0; xx < x1; ++xx) dst[yy * w + xx] += g;
                    }
                }
            }
        }
        return dx;
    }

private:
    std::pair<std::size_t, std::size_t> bin(std::size_t i, std::size_t in) const {
        return {(i * in) / out_, ((i + 1) * in + out_ - 1) / out_};
    }

    std::size_t out_;
    std::vector<std::size_t> in_shape_;
    bool saved_ = false;
};

/// y = x W^T + b on (N, in) feature tensors.
template <class T>
class Linear {
public:
    Linear(int in_features, int out_features)
        : in_(static_cast<std::size_t>(in_features)),
          out_(static_cast<std::size_t>(out_features)),
          weight_({out_, in_}),
          bias_({out_}),
          grad_weight_({out_, in_}),
          grad_bias_({out_}) {
        if (in_features <= 0 || out_features <= 0) throw InvalidArgument("linear needs positive sizes");
    }

    void init(Rng& rng) {
        detail::he_uniform(weight_, in_, rng);
        bias_.fill(T(0));
    }

    Tensor<T> forward(const Tensor<T>& x) {
        detail::require_rank(x, 2, "linear");
        if (x.dim(1) != in_) {
            throw ShapeError("linear: expected " + std::to_string(in_) + " features, got " + std::to_string(x.dim(1)));
        }
        const std::size_t n = x.dim(0);
        Tensor<T> y({n, out_});
        for (std::size_t b = 0; b < n; ++b) {
            std::copy(bias_.data(), bias_.data() + out_, y.data() + b * out_);
        }
        cnnga::detail::gemm(cnnga::detail::Op::normal, cnnga::detail::Op::transposed, n, out_, in_, x.data(), in_,
                            weight_.data(), in_, y.data(), out_);
        input_ = x;
        saved_ = true;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        detail::require_saved(saved_, "linear");
        const std::size_t n = input_.dim(0);
        if (dy.shape() != std::vector<std::size_t>{n, out_}) throw ShapeError("linear: gradient shape mismatch");
        grad_bias_.fill(T(0));
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t o = 0; o < out_; ++o) grad_bias_[o] += dy(b, o);
        }
        grad_weight_.fill(T(0));
        cnnga::detail::gemm(cnnga::detail::Op::transposed, cnnga::detail::Op::normal, out_, in_, n, dy.data(), out_,
                            input_.data(), in_, grad_weight_.data(), in_);
        Tensor<T> dx({n, in_});
        cnnga::detail::gemm(cnnga::detail::Op::normal, cnnga::detail::Op::normal, n, in_, out_, dy.data(), out_,
                            weight_.data(), in_, dx.data(), in_);
        return dx;
    }

    void collect(std::vector<Parameter<T>>& out, const std::string& prefix) {
        out.push_back({prefix + ".weight", &weight_, &grad_weight_});
        out.push_back({prefix + ".bias", &bias_, &grad_bias_});
    }

    Tensor<T>& weight() noexcept { return weight_; }
    Tensor<T>& bias() noexcept { return bias_; }
    const Tensor<T>& grad_weight() const noexcept { return grad_weight_; }
    const Tensor<T>& grad_bias() const noexcept { return grad_bias_; }

    std::size_t parameter_count() const noexcept { return weight_.size() + bias_.size(); }

private:
    std::size_t in_, out_;
    Tensor<T> weight_, bias_, grad_weight_, grad_bias_;
    Tensor<T> input_;
    bool saved_ = false;
};

/// Inverted dropout: kept units are scaled by 1/(1-p) at train time; identity in eval mode.
template <class T>
class Dropout {
public:
    explicit Dropout(double rate) : rate_(rate) {
        if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("dropout rate must lie in [0,1)");
    }

    double rate() const noexcept { return rate_; }

    /// Reuse the previous mask instead of drawing a new one (finite-difference checks).
    void freeze_mask(bool frozen) noexcept { frozen_ = frozen; }

    Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng& rng) {
        saved_ = true;
        if (mode == Mode::eval || rate_ == 0.0) {
            identity_ = true;
            return x;
        }
        identity_ = false;
        if (!frozen_ || mask_.size() != x.size()) {
            const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
            mask_.resize(x.size());
            for (auto& m : mask_) m = bernoulli(rng, 1.0 - rate_) ? keep_scale : T(0);
        }
        Tensor<T> y = x;
        for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask_[i];
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        detail::require_saved(saved_, "dropout");
        if (identity_) return dy;
        if (dy.size() != mask_.size()) throw ShapeError("dropout: gradient shape mismatch");
        Tensor<T> dx = dy;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask_[i];
        return dx;
    }

    std::span<const T> mask() const noexcept { return mask_; }

private:
    double rate_;
    std::vector<T> mask_;
    bool frozen_ = false;
    bool identity_ = true;
    bool saved_ = false;
};

/// Row-wise softmax with max subtraction.
template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
    detail::require_rank(logits, 2, "softmax");
    if (!logits.all_finite()) throw NumericError("softmax: non-finite logits");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    Tensor<T> p(logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
        T mx = logits(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits(i, j));
        T sum = T(0);
        for (std::size_t j = 0; j < c; ++j) {
            p(i, j) = std::exp(logits(i, j) - mx);
            sum += p(i, j);
        }
        for (std::size_t j = 0; j < c; ++j) p(i, j) /= sum;
    }
    return p;
}

template <class T>
struct LossResult {
    T loss = T(0);
    Tensor<T> grad_logits;
};

/// loss = (1/N) sum_i w[y_i] * -log softmax(logits_i)[y_i], with its gradient w.r.t. the logits.
template <class T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                                    std::span<const T> class_weights) {
    detail::require_rank(logits, 2, "softmax_cross_entropy");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    if (targets.size() != n) throw ShapeError("softmax_cross_entropy: target count mismatch");
    if (class_weights.size() != c) throw ShapeError("softmax_cross_entropy: one weight per class required");
    for (T w : class_weights) {
        if (!(w > T(0))) throw InvalidArgument("softmax_cross_entropy: class weights must be positive");
    }
    if (!logits.all_finite()) throw NumericError("softmax_cross_entropy: non-finite logits");

    LossResult<T> out;
    out.grad_logits = Tensor<T>(logits.shape());
    const T inv_n = T(1) / static_cast<T>(n);
    T total = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = targets[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c) throw InvalidArgument("softmax_cross_entropy: bad target");
        T mx = logits(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits(i, j));
        T sum = T(0);
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(logits(i, j) - mx);
        const T log_sum = std::log(sum);
        const T w = class_weights[static_cast<std::size_t>(y)];
        total += w * (log_sum - (logits(i, static_cast<std::size_t>(y)) - mx));
        for (std::size_t j = 0; j < c; ++j) {
            const T p = std::exp(logits(i, j) - mx - log_sum);
            out.grad_logits(i, j) = w * inv_n * (p - (j == static_cast<std::size_t>(y) ? T(1) : T(0)));
        }
    }
    out.loss = total * inv_n;
    return out;
}

} // namespace cnnga::nn
