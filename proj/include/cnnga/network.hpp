#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "adam.hpp"
#include "errors.hpp"
#include "genome.hpp"
#include "layers.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace cnnga::nn {

/// conv -> activation -> maxpool -> batchnorm
template <class T>
struct ConvBlock {
    Conv2d<T> conv;
    ActivationLayer<T> act;
    MaxPool2x2<T> pool;
    BatchNorm2d<T> norm;

    explicit ConvBlock(const ConvBlockSpec& s)
        : conv(s.in_channels, s.out_channels, s.kernel_size), act(s.activation), norm(s.out_channels) {}
};

/// linear -> activation -> dropout
template <class T>
struct FcBlock {
    Linear<T> linear;
    ActivationLayer<T> act;
    Dropout<T> dropout;

    explicit FcBlock(const FcBlockSpec& s) : linear(s.in_features, s.out_features), act(s.activation), dropout(s.dropout_rate) {}
};

/// The fixed four-conv / two-FC classifier, instantiated from a ModelSpec.
template <class T>
class Network {
public:
    Network(const ModelSpec& spec, std::uint64_t seed)
        : spec_(spec), pool_(spec.pool_output), head_(spec.head.in_features, spec.head.out_features),
          rng_(derive_seed(seed, 0x64726f70ULL)) {
        check_chain(spec);
        conv_.reserve(spec.conv_blocks.size());
        for (const auto& c : spec.conv_blocks) conv_.emplace_back(c);
        fc_.reserve(spec.fc_blocks.size());
        for (const auto& f : spec.fc_blocks) fc_.emplace_back(f);

        Rng init(derive_seed(seed, 0x696e6974ULL));
        for (auto& b : conv_) b.conv.init(init);
        for (auto& b : fc_) b.linear.init(init);
        head_.init(init);

        for (std::size_t i = 0; i < conv_.size(); ++i) {
            conv_[i].conv.collect(params_, "conv" + std::to_string(i + 1));
            conv_[i].norm.collect(params_, "bn" + std::to_string(i + 1));
        }
        for (std::size_t i = 0; i < fc_.size(); ++i) fc_[i].linear.collect(params_, "fc" + std::to_string(i + 1));
        head_.collect(params_, "head");
    }

    // Layers hold pointers into themselves through params_.
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;

    const ModelSpec& spec() const noexcept { return spec_; }
    Mode mode() const noexcept { return mode_; }
    void set_mode(Mode m) noexcept { mode_ = m; }

    const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value->size();
        return n;
    }

    /// Raw class scores (N, classes) for (N, C, H, W) input, in the current mode.
    Tensor<T> logits(const Tensor<T>& x) {
        if (x.rank() != 4 || x.dim(1) != static_cast<std::size_t>(spec_.input_channels())) {
            throw ShapeError("network: expected input (N, " + std::to_string(spec_.input_channels()) +
                             ", H, W), got " + shape_string(x.shape()));
        }
        Tensor<T> h = x;
        for (auto& b : conv_) {
            h = b.conv.forward(h);
            h = b.act.forward(h);
            h = b.pool.forward(h);
            h = b.norm.forward(h, mode_);
        }
        h = pool_.forward(h);
        flat_shape_ = h.shape();
        h = h.reshaped({h.dim(0), h.size() / h.dim(0)});
        for (auto& b : fc_) {
            h = b.linear.forward(h);
            h = b.act.forward(h);
            h = b.dropout.forward(h, mode_, rng_);
        }
        return head_.forward(h);
    }

    /// Class probabilities, rows sum to one.
    Tensor<T> forward(const Tensor<T>& x) { return softmax(logits(x)); }

    /// Backpropagates d(loss)/d(logits) through the last logits() call; fills parameter
    /// gradients and returns d(loss)/d(input).
    Tensor<T> backward(const Tensor<T>& grad_logits) {
        if (flat_shape_.empty()) throw ContractError("network: backward called before forward");
        Tensor<T> g = head_.backward(grad_logits);
        for (std::size_t i = fc_.size(); i-- > 0;) {
            g = fc_[i].dropout.backward(g);
            g = fc_[i].act.backward(g);
            g = fc_[i].linear.backward(g);
        }
        g = g.reshaped(flat_shape_);
        g = pool_.backward(g);
        for (std::size_t i = conv_.size(); i-- > 0;) {
            g = conv_[i].norm.backward(g);
            g = conv_[i].pool.backward(g);
            g = conv_[i].act.backward(g);
            g = conv_[i].conv.backward(g);
        }
        return g;
    }

    /// One optimization step in train mode; returns the batch loss.
    T train_batch(const Tensor<T>& x, std::span<const int> labels, std::span<const T> class_weights, Adam<T>& adam,
                  double lr) {
        set_mode(Mode::train);
        const Tensor<T> out = logits(x);
        auto loss = softmax_cross_entropy(out, labels, class_weights);
        backward(loss.grad_logits);
        adam.step(params_, lr);
        return loss.loss;
    }

    /// Freeze every dropout mask to its last draw.
    void freeze_dropout(bool frozen) {
        for (auto& b : fc_) b.dropout.freeze_mask(frozen);
    }

    /// Parameters followed by batchnorm running statistics, in declaration order.
    std::vector<std::pair<std::string, Tensor<T>*>> state_tensors() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        for (const auto& p : params_) out.emplace_back(p.name, p.value);
        for (std::size_t i = 0; i < conv_.size(); ++i) {
            out.emplace_back("bn" + std::to_string(i + 1) + ".running_mean", &conv_[i].norm.running_mean());
            out.emplace_back("bn" + std::to_string(i + 1) + ".running_var", &conv_[i].norm.running_var());
        }
        return out;
    }

    ConvBlock<T>& conv_block(std::size_t i) { return conv_.at(i); }
    FcBlock<T>& fc_block(std::size_t i) { return fc_.at(i); }
    Linear<T>& head() noexcept { return head_; }

private:
    ModelSpec spec_;
    std::vector<ConvBlock<T>> conv_;
    AdaptiveAvgPool2d<T> pool_;
    std::vector<FcBlock<T>> fc_;
    Linear<T> head_;
    std::vector<Parameter<T>> params_;
    std::vector<std::size_t> flat_shape_;
    Rng rng_;
    Mode mode_ = Mode::train;
};

// ---------------------------------------------------------------------------------------------
// Weight files: text header, then little-endian float32 payload in header order.
//
//   cnnga-weights 1
//   tensors <count>
//   <name> <rank> <d0> ... <dk>
//   ...
//   end
//   <binary payload>

template <class T>
void save_weights(Network<T>& net, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write weights to " + path.string());
    auto tensors = net.state_tensors();
    os << "cnnga-weights 1\ntensors " << tensors.size() << '\n';
    for (const auto& [name, t] : tensors) {
        os << name << ' ' << t->rank();
        for (auto d : t->shape()) os << ' ' << d;
        os << '\n';
    }
    os << "end\n";
    for (const auto& [name, t] : tensors) {
        for (T v : t->values()) {
            auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            unsigned char bytes[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                      static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
            os.write(reinterpret_cast<const char*>(bytes), 4);
        }
    }
    if (!os) throw DataError("failed writing weights to " + path.string());
}

template <class T>
void load_weights(Network<T>& net, const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read weights from " + path.string());
    std::string line;
    std::getline(is, line);
    if (line != "cnnga-weights 1") throw DataError("not a weight file: " + path.string());
    std::getline(is, line);
    std::istringstream count_line(line);
    std::string tag;
    std::size_t count = 0;
    count_line >> tag >> count;
    auto tensors = net.state_tensors();
    if (tag != "tensors" || count != tensors.size()) throw DataError("weight file does not match the network");
    for (const auto& [name, t] : tensors) {
        std::getline(is, line);
        std::istringstream ls(line);
        std::string got_name;
        std::size_t rank = 0;
        ls >> got_name >> rank;
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) ls >> d;
        if (!ls || got_name != name || shape != t->shape()) {
            throw DataError("weight file entry '" + got_name + "' does not match tensor '" + name + "'");
        }
    }
    std::getline(is, line);
    if (line != "end") throw DataError("weight file header not terminated");
    for (const auto& [name, t] : tensors) {
        for (auto& v : t->values()) {
            unsigned char bytes[4];
            if (!is.read(reinterpret_cast<char*>(bytes), 4)) throw DataError("weight file truncated");
            const std::uint32_t bits = std::uint32_t(bytes[0]) | std::uint32_t(bytes[1]) << 8 |
                                       std::uint32_t(bytes[2]) << 16 | std::uint32_t(bytes[3]) << 24;
            v = static_cast<T>(std::bit_cast<float>(bits));
        }
    }
}

} // namespace cnnga::nn
