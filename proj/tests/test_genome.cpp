#include <gtest/gtest.h>

#include <array>
#include <set>
#include <unordered_set>

#include <cnnga/genome.hpp>

using namespace cnnga;

namespace {

Genome genome_of(std::array<std::uint32_t, kGenomeLength> genes) { return Genome{genes}; }

}  // namespace

TEST(GeneAlphabet, RejectsEmptyAndDuplicates) {
    EXPECT_THROW(GeneAlphabet<int>({}), InvalidArgument);
    EXPECT_THROW(GeneAlphabet<int>({3, 5, 3}), InvalidArgument);
    GeneAlphabet<int> a({3, 5, 7});
    EXPECT_EQ(a.size(), 3u);
    EXPECT_EQ(a.at(2), 7);
    EXPECT_THROW(a.at(3), InvalidGenome);
}

TEST(SearchSpace, GroupBoundsPartitionGenome) {
    EXPECT_EQ(group_bounds(Group::conv_dims).begin, 0u);
    EXPECT_EQ(group_bounds(Group::conv_dims).end, 3u);
    EXPECT_EQ(group_bounds(Group::activations).begin, 6u);
    EXPECT_EQ(group_bounds(Group::activations).end, 12u);

    std::array<int, kGenomeLength> hits{};
    std::size_t expected_begin = 0;
    for (Group g : kAllGroups) {
        const auto r = group_bounds(g);
        EXPECT_EQ(r.begin, expected_begin);
        for (std::size_t i = r.begin; i < r.end; ++i) {
            ++hits[i];
            EXPECT_EQ(group_of(i), g);
        }
        expected_begin = r.end;
    }
    EXPECT_EQ(expected_begin, kGenomeLength);
    for (int h : hits) EXPECT_EQ(h, 1);
}

TEST(SearchSpace, AlphabetSizesFollowGroups) {
    const auto space = default_search_space();
    const std::array<std::size_t, kGenomeLength> sizes{4, 4, 4, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 4, 4};
    for (std::size_t i = 0; i < kGenomeLength; ++i) EXPECT_EQ(space.alphabet_size(i), sizes[i]) << i;
}

TEST(SearchSpace, RejectsEvenKernelAndBadDropout) {
    EXPECT_THROW(SearchSpace({32}, {4}, {Activation::relu}, {16}, {0.1}), InvalidArgument);
    EXPECT_THROW(SearchSpace({32}, {3}, {Activation::relu}, {16}, {1.0}), InvalidArgument);
}

TEST(InitPopulation, ShapeAndBounds) {
    const auto space = default_search_space();
    Rng rng(1);
    const auto pop = init_population(50, space, rng);
    ASSERT_EQ(pop.size(), 50u);
    for (const auto& g : pop) {
        EXPECT_TRUE(is_valid(g, space));
        EXPECT_NO_THROW(check_chain(decode(g, space)));
    }
}

TEST(InitPopulation, ZeroIsInvalid) {
    Rng rng(1);
    EXPECT_THROW(init_population(0, default_search_space(), rng), InvalidArgument);
}

TEST(InitPopulation, SingleValuedAlphabetsGiveZeroGenome) {
    const SearchSpace space({64}, {5}, {Activation::relu}, {128}, {0.2});
    Rng rng(9);
    const auto pop = init_population(1, space, rng);
    ASSERT_EQ(pop.size(), 1u);
    EXPECT_EQ(pop[0], Genome{});
}

TEST(InitPopulation, GeneZeroIsUniform) {
    const auto space = default_search_space();
    Rng rng(2024);
    const auto pop = init_population(1000, space, rng);
    std::array<int, 4> counts{};
    for (const auto& g : pop) ++counts.at(g.genes[0]);
    for (int c : counts) EXPECT_NEAR(c / 1000.0, 0.25, 0.05);
}

TEST(InitPopulation, DeterministicBySeed) {
    const auto space = default_search_space();
    Rng a(77), b(77);
    EXPECT_EQ(init_population(20, space, a), init_population(20, space, b));
}

TEST(Decode, AllZeroGenome) {
    const auto spec = decode(Genome{}, default_search_space());
    EXPECT_EQ(spec.conv_blocks[0].in_channels, 3);
    EXPECT_EQ(spec.conv_blocks[0].out_channels, 32);
    EXPECT_EQ(spec.conv_blocks[0].kernel_size, 3);
    for (std::size_t i = 1; i < 4; ++i) {
        EXPECT_EQ(spec.conv_blocks[i].out_channels, 32);
        EXPECT_EQ(spec.conv_blocks[i].kernel_size, 3);
    }
    for (const auto& c : spec.conv_blocks) EXPECT_EQ(c.activation, Activation::tanh);
    for (const auto& f : spec.fc_blocks) {
        EXPECT_EQ(f.out_features, 512);
        EXPECT_EQ(f.activation, Activation::tanh);
        EXPECT_DOUBLE_EQ(f.dropout_rate, 0.1);
    }
    EXPECT_EQ(spec.fc_blocks[0].in_features, 32 * 4);
    EXPECT_EQ(spec.head.in_features, 512);
    EXPECT_EQ(spec.head.out_features, 2);
}

TEST(Decode, ConvDimsFromFirstGroup) {
    const auto spec = decode(genome_of({0, 1, 3, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}), default_search_space());
    EXPECT_EQ(spec.conv_blocks[1].out_channels, 32);
    EXPECT_EQ(spec.conv_blocks[2].out_channels, 64);
    EXPECT_EQ(spec.conv_blocks[3].out_channels, 256);
    EXPECT_EQ(spec.conv_blocks[2].in_channels, 32);
    EXPECT_EQ(spec.conv_blocks[3].in_channels, 64);
    EXPECT_EQ(spec.fc_blocks[0].in_features, 256 * 4);
}

TEST(Decode, GeneLayout) {
    const auto g = genome_of({3, 2, 1, 2, 1, 0, 1, 2, 0, 1, 2, 0, 2, 1, 3, 2});
    const auto spec = decode(g, default_search_space());
    EXPECT_EQ(spec.conv_blocks[1].out_channels, 256);
    EXPECT_EQ(spec.conv_blocks[2].out_channels, 128);
    EXPECT_EQ(spec.conv_blocks[3].out_channels, 64);
    EXPECT_EQ(spec.conv_blocks[1].kernel_size, 7);
    EXPECT_EQ(spec.conv_blocks[2].kernel_size, 5);
    EXPECT_EQ(spec.conv_blocks[3].kernel_size, 3);
    EXPECT_EQ(spec.conv_blocks[0].activation, Activation::relu);
    EXPECT_EQ(spec.conv_blocks[1].activation, Activation::leaky_relu);
    EXPECT_EQ(spec.conv_blocks[2].activation, Activation::tanh);
    EXPECT_EQ(spec.conv_blocks[3].activation, Activation::relu);
    EXPECT_EQ(spec.fc_blocks[0].activation, Activation::leaky_relu);
    EXPECT_EQ(spec.fc_blocks[1].activation, Activation::tanh);
    EXPECT_EQ(spec.fc_blocks[0].out_features, 128);
    EXPECT_EQ(spec.fc_blocks[1].out_features, 256);
    EXPECT_EQ(spec.fc_blocks[1].in_features, 128);
    EXPECT_DOUBLE_EQ(spec.fc_blocks[0].dropout_rate, 0.5);
    EXPECT_DOUBLE_EQ(spec.fc_blocks[1].dropout_rate, 0.3);
    EXPECT_EQ(spec.head.in_features, 256);
}

TEST(Decode, PureFunction) {
    const auto space = default_search_space();
    Rng rng(5);
    for (const auto& g : init_population(100, space, rng)) EXPECT_EQ(decode(g, space), decode(g, space));
}

TEST(Decode, OutOfRangeGene) {
    auto g = Genome{};
    g.genes[3] = 3;
    EXPECT_FALSE(is_valid(g, default_search_space()));
    EXPECT_THROW(decode(g, default_search_space()), InvalidGenome);
}

TEST(CheckChain, DetectsBrokenChain) {
    auto spec = decode(Genome{}, default_search_space());
    spec.conv_blocks[2].in_channels = 64;
    EXPECT_THROW(check_chain(spec), ShapeError);
    spec = decode(Genome{}, default_search_space());
    spec.head.out_features = 3;
    EXPECT_THROW(check_chain(spec), ShapeError);
}

TEST(GenomeKey, AllZero) { EXPECT_EQ(genome_key(Genome{}), "0-0-0-0-0-0-0-0-0-0-0-0-0-0-0-0"); }

TEST(GenomeKey, InjectiveOnRandomSample) {
    const auto space = default_search_space();
    Rng rng(31337);
    const auto pop = init_population(20000, space, rng);
    std::set<Genome> distinct(pop.begin(), pop.end());
    std::unordered_set<std::string> keys;
    for (const auto& g : distinct) keys.insert(genome_key(g));
    EXPECT_GE(distinct.size(), 10000u);
    EXPECT_EQ(keys.size(), distinct.size());
}

TEST(ParseGenome, RoundTripsFormatAndKey) {
    const auto g = genome_of({3, 2, 1, 2, 1, 0, 1, 2, 0, 1, 2, 0, 2, 1, 3, 2});
    EXPECT_EQ(parse_genome(format_genome(g)), g);
    EXPECT_EQ(parse_genome(genome_key(g)), g);
    EXPECT_EQ(parse_genome("  3,2,1,2,1,0,1,2,0,1,2,0,2,1,3,2\n"), g);
}

TEST(ParseGenome, RejectsMalformed) {
    EXPECT_THROW(parse_genome("0 0 0"), ParseError);
    EXPECT_THROW(parse_genome("0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 x"), ParseError);
    EXPECT_THROW(parse_genome("0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0"), ParseError);
    EXPECT_THROW(parse_genome("0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 -1"), ParseError);
}

TEST(ModelSpecText, ListsEveryLayer) {
    const std::string text = to_text(decode(Genome{}, default_search_space()));
    EXPECT_NE(text.find("conv1 in=3 out=32 kernel=3 activation=tanh"), std::string::npos);
    EXPECT_NE(text.find("avgpool output=2"), std::string::npos);
    EXPECT_NE(text.find("head in=512 out=2"), std::string::npos);
}
