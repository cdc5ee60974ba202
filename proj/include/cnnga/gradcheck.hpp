#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "genome.hpp"
#include "layers.hpp"
#include "network.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace cnnga::gradcheck {

/// Perturbation for central differences.
inline constexpr double kStep = 1e-5;
inline constexpr double kLayerTolerance = 1e-6;
inline constexpr double kNetworkTolerance = 1e-5;

struct Result {
    std::string name;
    double max_relative_error = 0.0;
    double tolerance = 0.0;
    std::size_t entries = 0;

    bool passed() const noexcept { return max_relative_error < tolerance; }
};

using DTensor = Tensor<double>;

/// Running comparison of analytic and central-difference gradients. The error is
/// max|analytic - numeric| / max(|analytic|, |numeric|) over all entries of the group.
class Comparison {
public:
    void add(double analytic, double numeric) {
        max_diff_ = std::max(max_diff_, std::abs(analytic - numeric));
        scale_ = std::max({scale_, std::abs(analytic), std::abs(numeric)});
        ++entries_;
    }

    double error() const noexcept { return scale_ > 0.0 ? max_diff_ / scale_ : max_diff_; }
    std::size_t entries() const noexcept { return entries_; }

private:
    double max_diff_ = 0.0;
    double scale_ = 0.0;
    std::size_t entries_ = 0;
};

/// Compares `analytic` with central differences of `loss` w.r.t. every entry of `x`.
inline void compare(Comparison& cmp, DTensor& x, const DTensor& analytic, const std::function<double()>& loss) {
    if (analytic.size() != x.size()) throw ShapeError("gradcheck: analytic gradient shape mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + kStep;
        const double up = loss();
        x[i] = saved - kStep;
        const double down = loss();
        x[i] = saved;
        cmp.add(analytic[i], (up - down) / (2.0 * kStep));
    }
}

inline DTensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    DTensor t(std::move(shape));
    for (auto& v : t.values()) v = uniform_real(rng, lo, hi);
    return t;
}

/// Values bounded away from zero (kinks of relu / leaky relu).
inline DTensor away_from_zero(std::vector<std::size_t> shape, Rng& rng) {
    DTensor t(std::move(shape));
    for (auto& v : t.values()) {
        const double mag = uniform_real(rng, 0.05, 1.0);
        v = bernoulli(rng, 0.5) ? mag : -mag;
    }
    return t;
}

/// Distinct values on a 0.01 grid in random order, so no 2x2 window is near a tie.
inline DTensor tie_free(std::vector<std::size_t> shape, Rng& rng) {
    DTensor t(std::move(shape));
    std::vector<double> grid(t.size());
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = 0.01 * static_cast<double>(i) - 0.5;
    shuffle(grid.begin(), grid.end(), rng);
    std::copy(grid.begin(), grid.end(), t.data());
    return t;
}

inline double dot(const DTensor& a, const DTensor& b) {
    return std::inner_product(a.data(), a.data() + a.size(), b.data(), 0.0);
}

inline Result finish(std::string name, const Comparison& cmp, double tol = kLayerTolerance) {
    return {std::move(name), cmp.error(), tol, cmp.entries()};
}

inline std::vector<Result> check_conv(Rng& rng) {
    std::vector<Result> out;
    for (int k : {3, 5}) {
        nn::Conv2d<double> conv(3, 4, k);
        conv.init(rng);
        for (auto& b : conv.bias().values()) b = uniform_real(rng, -0.5, 0.5);
        DTensor x = random_tensor({2, 3, 6, 5}, rng);
        const DTensor r = random_tensor({2, 4, 6, 5}, rng);
        auto loss = [&] { return dot(conv.forward(x), r); };
        conv.forward(x);
        const DTensor dx = conv.backward(r);
        const DTensor dw = conv.grad_weight(), db = conv.grad_bias();
        Comparison cx, cw, cb;
        compare(cx, x, dx, loss);
        compare(cw, conv.weight(), dw, loss);
        compare(cb, conv.bias(), db, loss);
        const std::string tag = "conv2d k=" + std::to_string(k);
        out.push_back(finish(tag + " input", cx));
        out.push_back(finish(tag + " weight", cw));
        out.push_back(finish(tag + " bias", cb));
    }
    return out;
}

inline std::vector<Result> check_maxpool(Rng& rng) {
    nn::MaxPool2x2<double> pool;
    DTensor x = tie_free({2, 2, 5, 6}, rng);
    const DTensor r = random_tensor({2, 2, 2, 3}, rng);
    auto loss = [&] { return dot(pool.forward(x), r); };
    pool.forward(x);
    const DTensor dx = pool.backward(r);
    Comparison c;
    compare(c, x, dx, loss);
    return {finish("maxpool2x2 input", c)};
}

inline std::vector<Result> check_batchnorm(Rng& rng) {
    std::vector<Result> out;
    for (nn::Mode mode : {nn::Mode::train, nn::Mode::eval}) {
        nn::BatchNorm2d<double> bn(3);
        for (auto& g : bn.gamma().values()) g = uniform_real(rng, 0.5, 1.5);
        for (auto& b : bn.beta().values()) b = uniform_real(rng, -0.5, 0.5);
        for (auto& m : bn.running_mean().values()) m = uniform_real(rng, -0.2, 0.2);
        for (auto& v : bn.running_var().values()) v = uniform_real(rng, 0.5, 1.5);
        DTensor x = random_tensor({3, 3, 4, 3}, rng);
        const DTensor r = random_tensor({3, 3, 4, 3}, rng);
        auto loss = [&] { return dot(bn.forward(x, mode), r); };
        bn.forward(x, mode);
        const DTensor dx = bn.backward(r);
        const DTensor dg = bn.grad_gamma(), dbeta = bn.grad_beta();
        Comparison cx, cg, cb;
        compare(cx, x, dx, loss);
        compare(cg, bn.gamma(), dg, loss);
        compare(cb, bn.beta(), dbeta, loss);
        const std::string tag = mode == nn::Mode::train ? "batchnorm train" : "batchnorm eval";
        out.push_back(finish(tag + " input", cx));
        out.push_back(finish(tag + " gamma", cg));
        out.push_back(finish(tag + " beta", cb));
    }
    return out;
}

inline std::vector<Result> check_adaptive_pool(Rng& rng) {
    std::vector<Result> out;
    const std::vector<std::vector<std::size_t>> shapes{{2, 2, 5, 7}, {2, 2, 1, 1}, {1, 3, 4, 4}};
    for (const auto& shape : shapes) {
        nn::AdaptiveAvgPool2d<double> pool(2);
        DTensor x = random_tensor(shape, rng);
        const DTensor r = random_tensor({shape[0], shape[1], 2, 2}, rng);
        auto loss = [&] { return dot(pool.forward(x), r); };
        pool.forward(x);
        const DTensor dx = pool.backward(r);
        Comparison c;
        compare(c, x, dx, loss);
        out.push_back(finish("adaptive_avgpool " + std::to_string(shape[2]) + "x" + std::to_string(shape[3]) + " input", c));
    }
    return out;
}

inline std::vector<Result> check_linear(Rng& rng) {
    nn::Linear<double> lin(6, 5);
    lin.init(rng);
    for (auto& b : lin.bias().values()) b = uniform_real(rng, -0.5, 0.5);
    DTensor x = random_tensor({4, 6}, rng);
    const DTensor r = random_tensor({4, 5}, rng);
    auto loss = [&] { return dot(lin.forward(x), r); };
    lin.forward(x);
    const DTensor dx = lin.backward(r);
    const DTensor dw = lin.grad_weight(), db = lin.grad_bias();
    Comparison cx, cw, cb;
    compare(cx, x, dx, loss);
    compare(cw, lin.weight(), dw, loss);
    compare(cb, lin.bias(), db, loss);
    return {finish("linear input", cx), finish("linear weight", cw), finish("linear bias", cb)};
}

inline std::vector<Result> check_dropout(Rng& rng) {
    nn::Dropout<double> drop(0.3);
    Rng mask_rng(derive_seed(rng(), 7));
    DTensor x = random_tensor({3, 10}, rng);
    const DTensor r = random_tensor({3, 10}, rng);
    drop.forward(x, nn::Mode::train, mask_rng);
    drop.freeze_mask(true);
    auto loss = [&] { return dot(drop.forward(x, nn::Mode::train, mask_rng), r); };
    drop.forward(x, nn::Mode::train, mask_rng);
    const DTensor dx = drop.backward(r);
    Comparison c;
    compare(c, x, dx, loss);
    return {finish("dropout (fixed mask) input", c)};
}

inline std::vector<Result> check_activations(Rng& rng) {
    std::vector<Result> out;
    for (Activation a : {Activation::tanh, Activation::relu, Activation::leaky_relu}) {
        nn::ActivationLayer<double> act(a);
        DTensor x = away_from_zero({2, 3, 3, 3}, rng);
        const DTensor r = random_tensor({2, 3, 3, 3}, rng);
        auto loss = [&] { return dot(act.forward(x), r); };
        act.forward(x);
        const DTensor dx = act.backward(r);
        Comparison c;
        compare(c, x, dx, loss);
        out.push_back(finish(std::string(to_string(a)) + " input", c));
    }
    return out;
}

inline std::vector<Result> check_softmax_ce(Rng& rng) {
    DTensor logits = random_tensor({5, 2}, rng, -2.0, 2.0);
    const std::vector<int> targets{0, 1, 1, 0, 1};
    const std::vector<double> weights{uniform_real(rng, 0.5, 2.0), uniform_real(rng, 0.5, 2.0)};
    auto loss = [&] { return nn::softmax_cross_entropy<double>(logits, targets, weights).loss; };
    const DTensor g = nn::softmax_cross_entropy<double>(logits, targets, weights).grad_logits;
    Comparison c;
    compare(c, logits, g, loss);
    return {finish("softmax cross-entropy logits", c)};
}

/// Small chain-consistent spec for the composed check: 2 input channels, mixed activations.
inline ModelSpec toy_spec() {
    ModelSpec s;
    s.conv_blocks[0] = {2, 3, 3, Activation::tanh};
    s.conv_blocks[1] = {3, 4, 5, Activation::leaky_relu};
    s.conv_blocks[2] = {4, 4, 3, Activation::relu};
    s.conv_blocks[3] = {4, 5, 7, Activation::tanh};
    s.pool_output = 2;
    s.fc_blocks[0] = {20, 6, Activation::tanh, 0.2};
    s.fc_blocks[1] = {6, 5, Activation::leaky_relu, 0.3};
    s.head = {5, 2};
    return s;
}

/// Whole-network check at (2, 2, 8, 8) input, train mode, dropout masks frozen. All parameters
/// and the input form one comparison group.
inline Result check_network(Rng& rng) {
    nn::Network<double> net(toy_spec(), rng());
    for (std::size_t i = 0; i < 4; ++i) {
        for (auto& g : net.conv_block(i).norm.gamma().values()) g = uniform_real(rng, 0.5, 1.5);
        for (auto& b : net.conv_block(i).norm.beta().values()) b = uniform_real(rng, -0.5, 0.5);
    }
    DTensor x = random_tensor({2, 2, 8, 8}, rng, 0.0, 1.0);
    const std::vector<int> targets{0, 1};
    const std::vector<double> weights{0.8, 1.3};
    net.set_mode(nn::Mode::train);
    net.logits(x);
    net.freeze_dropout(true);
    auto loss = [&] { return nn::softmax_cross_entropy<double>(net.logits(x), targets, weights).loss; };

    const auto lr = nn::softmax_cross_entropy<double>(net.logits(x), targets, weights);
    const DTensor dx = net.backward(lr.grad_logits);
    std::vector<DTensor> grads;
    for (const auto& p : net.parameters()) grads.push_back(*p.grad);

    Comparison c;
    compare(c, x, dx, loss);
    for (std::size_t i = 0; i < grads.size(); ++i) compare(c, *net.parameters()[i].value, grads[i], loss);
    return finish("network 2x2x8x8", c, kNetworkTolerance);
}

/// Every layer check plus the composed network.
inline std::vector<Result> run_all(std::uint64_t seed = 455) {
    Rng rng(seed);
    std::vector<Result> out;
    for (auto part : {check_conv(rng), check_maxpool(rng), check_batchnorm(rng), check_adaptive_pool(rng),
                      check_linear(rng), check_dropout(rng), check_activations(rng), check_softmax_ce(rng)}) {
        out.insert(out.end(), part.begin(), part.end());
    }
    out.push_back(check_network(rng));
    return out;
}

} // namespace cnnga::gradcheck
