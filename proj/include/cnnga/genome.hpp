#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "random.hpp"

namespace cnnga {

enum class Activation { tanh, relu, leaky_relu };

constexpr std::string_view to_string(Activation a) noexcept {
    switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    }
    return "?";
}

inline Activation parse_activation(std::string_view s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    if (s == "leaky_relu" || s == "leakyrelu" || s == "leakyRelu") return Activation::leaky_relu;
    throw ParseError("unknown activation '" + std::string(s) + "'");
}

/// Ordered set of admissible values for one gene. Gene indices are positions into it.
template <class V>
class GeneAlphabet {
public:
    GeneAlphabet() = default;
    GeneAlphabet(std::initializer_list<V> values) : GeneAlphabet(std::vector<V>(values)) {}
    explicit GeneAlphabet(std::vector<V> values) : values_(std::move(values)) {
        if (values_.empty()) {
            throw InvalidArgument("gene alphabet must be non-empty");
        }
        for (std::size_t i = 0; i < values_.size(); ++i) {
            for (std::size_t j = i + 1; j < values_.size(); ++j) {
                if (values_[i] == values_[j]) {
                    throw InvalidArgument("gene alphabet values must be distinct");
                }
            }
        }
    }

    std::size_t size() const noexcept { return values_.size(); }
    const V& operator[](std::size_t i) const { return values_[i]; }
    const V& at(std::size_t i) const {
        if (i >= values_.size()) {
            throw InvalidGenome("gene index " + std::to_string(i) + " outside alphabet of size " +
                                std::to_string(values_.size()));
        }
        return values_[i];
    }
    const std::vector<V>& values() const noexcept { return values_; }

private:
    std::vector<V> values_;
};

inline constexpr std::size_t kGenomeLength = 16;
inline constexpr std::size_t kNumGroups = 5;

/// Gene groups in genome order. Crossover swaps whole groups; mutation picks one.
enum class Group : std::uint8_t { conv_dims = 0, kernels = 1, activations = 2, fc_widths = 3, dropouts = 4 };

inline constexpr std::array<Group, kNumGroups> kAllGroups{Group::conv_dims, Group::kernels, Group::activations,
                                                          Group::fc_widths, Group::dropouts};

constexpr std::string_view to_string(Group g) noexcept {
    switch (g) {
    case Group::conv_dims: return "G0";
    case Group::kernels: return "G1";
    case Group::activations: return "G2";
    case Group::fc_widths: return "G3";
    case Group::dropouts: return "G4";
    }
    return "?";
}

/// Half-open range of gene positions.
struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    constexpr std::size_t size() const noexcept { return end - begin; }
    constexpr bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }
    friend constexpr bool operator==(IndexRange, IndexRange) = default;
};

// Layout: 3 conv dims | 3 kernels | 6 activations (conv1..4, fc1..2) | 2 fc widths | 2 dropouts.
constexpr IndexRange group_bounds(Group g) noexcept {
    switch (g) {
    case Group::conv_dims: return {0, 3};
    case Group::kernels: return {3, 6};
    case Group::activations: return {6, 12};
    case Group::fc_widths: return {12, 14};
    case Group::dropouts: return {14, 16};
    }
    return {};
}

constexpr Group group_of(std::size_t gene) noexcept {
    for (Group g : kAllGroups) {
        if (group_bounds(g).contains(gene)) return g;
    }
    return Group::dropouts;
}

/// Parameters of the first convolution, which are not evolved.
struct FixedFirstConv {
    int in_channels = 3;
    int out_channels = 32;
    int kernel_size = 3;
};

/// Gene alphabets (one per group) plus the fixed first convolution.
class SearchSpace {
public:
    SearchSpace(GeneAlphabet<int> conv_channels, GeneAlphabet<int> kernel_sizes, GeneAlphabet<Activation> activations,
                GeneAlphabet<int> fc_widths, GeneAlphabet<double> dropout_rates, FixedFirstConv first = {})
        : conv_channels_(std::move(conv_channels)),
          kernel_sizes_(std::move(kernel_sizes)),
          activations_(std::move(activations)),
          fc_widths_(std::move(fc_widths)),
          dropout_rates_(std::move(dropout_rates)),
          first_(first) {
        for (int c : conv_channels_.values()) {
            if (c <= 0) throw InvalidArgument("conv channel counts must be positive");
        }
        for (int k : kernel_sizes_.values()) {
            if (k <= 0 || k % 2 == 0) throw InvalidArgument("kernel sizes must be positive and odd");
        }
        for (int w : fc_widths_.values()) {
            if (w <= 0) throw InvalidArgument("fc widths must be positive");
        }
        for (double p : dropout_rates_.values()) {
            if (!(p >= 0.0 && p < 1.0)) throw InvalidArgument("dropout rates must lie in [0,1)");
        }
        if (first_.in_channels <= 0 || first_.out_channels <= 0 || first_.kernel_size <= 0 ||
            first_.kernel_size % 2 == 0) {
            throw InvalidArgument("invalid fixed first convolution");
        }
    }

    const GeneAlphabet<int>& conv_channels() const noexcept { return conv_channels_; }
    const GeneAlphabet<int>& kernel_sizes() const noexcept { return kernel_sizes_; }
    const GeneAlphabet<Activation>& activations() const noexcept { return activations_; }
    const GeneAlphabet<int>& fc_widths() const noexcept { return fc_widths_; }
    const GeneAlphabet<double>& dropout_rates() const noexcept { return dropout_rates_; }
    const FixedFirstConv& first_conv() const noexcept { return first_; }

    /// Alphabet size for the gene at `position`.
    std::size_t alphabet_size(std::size_t position) const {
        switch (group_of(position)) {
        case Group::conv_dims: return conv_channels_.size();
        case Group::kernels: return kernel_sizes_.size();
        case Group::activations: return activations_.size();
        case Group::fc_widths: return fc_widths_.size();
        case Group::dropouts: return dropout_rates_.size();
        }
        return 0;
    }

    static constexpr IndexRange group_bounds(Group g) noexcept { return cnnga::group_bounds(g); }

private:
    GeneAlphabet<int> conv_channels_;
    GeneAlphabet<int> kernel_sizes_;
    GeneAlphabet<Activation> activations_;
    GeneAlphabet<int> fc_widths_;
    GeneAlphabet<double> dropout_rates_;
    FixedFirstConv first_;
};

/// Default hyperparameter alphabets.
inline SearchSpace default_search_space() {
    return SearchSpace({32, 64, 128, 256}, {3, 5, 7}, {Activation::tanh, Activation::relu, Activation::leaky_relu},
                       {512, 256, 128}, {0.1, 0.2, 0.3, 0.5});
}

struct Genome {
    std::array<std::uint32_t, kGenomeLength> genes{};

    std::uint32_t& operator[](std::size_t i) { return genes[i]; }
    std::uint32_t operator[](std::size_t i) const { return genes[i]; }

    friend bool operator==(const Genome&, const Genome&) = default;
    friend auto operator<=>(const Genome&, const Genome&) = default;
};

inline bool is_valid(const Genome& g, const SearchSpace& space) {
    for (std::size_t i = 0; i < kGenomeLength; ++i) {
        if (g[i] >= space.alphabet_size(i)) return false;
    }
    return true;
}

inline void validate(const Genome& g, const SearchSpace& space) {
    for (std::size_t i = 0; i < kGenomeLength; ++i) {
        if (g[i] >= space.alphabet_size(i)) {
            throw InvalidGenome("gene " + std::to_string(i) + " has index " + std::to_string(g[i]) +
                                " but its alphabet has " + std::to_string(space.alphabet_size(i)) + " values");
        }
    }
}

/// Canonical identity: dash-joined decimal indices.
inline std::string genome_key(const Genome& g) {
    std::string out;
    out.reserve(kGenomeLength * 3);
    for (std::size_t i = 0; i < kGenomeLength; ++i) {
        if (i) out += '-';
        out += std::to_string(g[i]);
    }
    return out;
}

/// One line of 16 space-separated decimal indices.
inline std::string format_genome(const Genome& g) {
    std::string out;
    for (std::size_t i = 0; i < kGenomeLength; ++i) {
        if (i) out += ' ';
        out += std::to_string(g[i]);
    }
    return out;
}

/// Inverse of format_genome. Also accepts the dash-joined key form.
inline Genome parse_genome(std::string_view line) {
    Genome g;
    std::size_t count = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == ',' || c == '\r' || c == '\n'; };
    auto malformed = [&] { return ParseError("malformed genome line: '" + std::string(line) + "'"); };
    while (p < end) {
        while (p < end && is_space(*p)) ++p;
        if (p == end) break;
        if (count == kGenomeLength) {
            throw ParseError("genome line has more than 16 genes");
        }
        std::uint32_t value = 0;
        auto [next, ec] = std::from_chars(p, end, value);
        if (ec != std::errc{}) throw malformed();
        if (next < end && *next == '-') {
            if (next + 1 == end || *(next + 1) < '0' || *(next + 1) > '9') throw malformed();
            ++next;
        } else if (next < end && !is_space(*next)) {
            throw malformed();
        }
        g[count++] = value;
        p = next;
    }
    if (count != kGenomeLength) {
        throw ParseError("genome line has " + std::to_string(count) + " genes, expected 16");
    }
    return g;
}

/// `n` genomes with every gene drawn uniformly from its alphabet.
inline std::vector<Genome> init_population(std::size_t n, const SearchSpace& space, Rng& rng) {
    if (n == 0) {
        throw InvalidArgument("population size must be at least 1");
    }
    std::vector<Genome> pop(n);
    for (auto& g : pop) {
        for (std::size_t i = 0; i < kGenomeLength; ++i) {
            g[i] = static_cast<std::uint32_t>(uniform_index(rng, space.alphabet_size(i)));
        }
    }
    return pop;
}

// ---------------------------------------------------------------------------------------------
// Decoded architecture

struct ConvBlockSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel_size = 0;
    Activation activation = Activation::tanh;

    friend bool operator==(const ConvBlockSpec&, const ConvBlockSpec&) = default;
};

struct FcBlockSpec {
    int in_features = 0;
    int out_features = 0;
    Activation activation = Activation::tanh;
    double dropout_rate = 0.0;

    friend bool operator==(const FcBlockSpec&, const FcBlockSpec&) = default;
};

struct HeadSpec {
    int in_features = 0;
    int out_features = 2;

    friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

/// Concrete CNN: 4 conv blocks, adaptive average pool, 2 FC blocks, 2-way head.
struct ModelSpec {
    std::array<ConvBlockSpec, 4> conv_blocks{};
    int pool_output = 2;
    std::array<FcBlockSpec, 2> fc_blocks{};
    HeadSpec head{};

    int input_channels() const noexcept { return conv_blocks[0].in_channels; }

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Throws ShapeError unless the channel and feature chain is consistent.
inline void check_chain(const ModelSpec& spec) {
    auto fail = [](const std::string& what) { throw ShapeError("model spec: " + what); };
    for (std::size_t k = 0; k < spec.conv_blocks.size(); ++k) {
        const auto& c = spec.conv_blocks[k];
        if (c.in_channels <= 0 || c.out_channels <= 0) fail("conv channels must be positive");
        if (c.kernel_size <= 0 || c.kernel_size % 2 == 0) fail("conv kernels must be positive and odd");
        if (k > 0 && c.in_channels != spec.conv_blocks[k - 1].out_channels) {
            fail("conv" + std::to_string(k + 1) + " input does not match previous output");
        }
    }
    if (spec.pool_output <= 0) fail("pool output must be positive");
    if (spec.fc_blocks[0].in_features != spec.conv_blocks[3].out_channels * spec.pool_output * spec.pool_output) {
        fail("fc1 input does not match the pooled feature count");
    }
    if (spec.fc_blocks[1].in_features != spec.fc_blocks[0].out_features) fail("fc2 input does not match fc1 output");
    if (spec.head.in_features != spec.fc_blocks[1].out_features) fail("head input does not match fc2 output");
    for (const auto& f : spec.fc_blocks) {
        if (f.out_features <= 0) fail("fc widths must be positive");
        if (!(f.dropout_rate >= 0.0 && f.dropout_rate < 1.0)) fail("dropout must lie in [0,1)");
    }
    if (spec.head.out_features != 2) fail("head must have 2 outputs");
}

inline ModelSpec decode(const Genome& g, const SearchSpace& space) {
    validate(g, space);
    const auto& first = space.first_conv();
    ModelSpec spec;
    const auto act = [&](std::size_t i) { return space.activations()[g[6 + i]]; };
    spec.conv_blocks[0] = {first.in_channels, first.out_channels, first.kernel_size, act(0)};
    for (std::size_t k = 1; k < 4; ++k) {
        spec.conv_blocks[k] = {spec.conv_blocks[k - 1].out_channels, space.conv_channels()[g[k - 1]],
                               space.kernel_sizes()[g[3 + k - 1]], act(k)};
    }
    spec.pool_output = 2;
    const int pooled = spec.conv_blocks[3].out_channels * spec.pool_output * spec.pool_output;
    spec.fc_blocks[0] = {pooled, space.fc_widths()[g[12]], act(4), space.dropout_rates()[g[14]]};
    spec.fc_blocks[1] = {spec.fc_blocks[0].out_features, space.fc_widths()[g[13]], act(5), space.dropout_rates()[g[15]]};
    spec.head = {spec.fc_blocks[1].out_features, 2};
    return spec;
}

/// Structured text form, one `name key=value ...` record per line.
inline std::string to_text(const ModelSpec& spec) {
    std::ostringstream os;
    for (std::size_t k = 0; k < spec.conv_blocks.size(); ++k) {
        const auto& c = spec.conv_blocks[k];
        os << "conv" << k + 1 << " in=" << c.in_channels << " out=" << c.out_channels << " kernel=" << c.kernel_size
           << " activation=" << to_string(c.activation) << '\n';
    }
    os << "avgpool output=" << spec.pool_output << '\n';
    for (std::size_t k = 0; k < spec.fc_blocks.size(); ++k) {
        const auto& f = spec.fc_blocks[k];
        os << "fc" << k + 1 << " in=" << f.in_features << " out=" << f.out_features
           << " activation=" << to_string(f.activation) << " dropout=" << f.dropout_rate << '\n';
    }
    os << "head in=" << spec.head.in_features << " out=" << spec.head.out_features << '\n';
    return os.str();
}

} // namespace cnnga
