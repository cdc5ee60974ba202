#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "fitness.hpp"
#include "genome.hpp"
#include "random.hpp"

namespace cnnga {

struct GaConfig {
    std::size_t population_size = 50;
    std::size_t max_generations = 100;
    std::size_t tournament_size = 5;
    std::size_t parents_per_generation = 10;
    double crossover_rate = 0.6;
    /// Offspring per generation; 0 means "same as parents_per_generation", the only supported value.
    std::size_t lambda = 0;
    std::uint64_t master_seed = 0;
    /// Worker threads for offspring evaluation. Results do not depend on it.
    std::size_t parallel = 1;

    std::size_t offspring_count() const noexcept { return parents_per_generation; }

    void validate() const {
        if (population_size == 0) throw InvalidArgument("population size must be positive");
        if (tournament_size == 0) throw InvalidArgument("tournament size must be positive");
        if (tournament_size > population_size) throw InvalidArgument("tournament size exceeds population size");
        if (parents_per_generation == 0 || parents_per_generation % 2 != 0) {
            throw InvalidArgument("parents per generation must be a positive even number");
        }
        if (parents_per_generation > population_size) {
            throw InvalidArgument("parents per generation exceeds population size");
        }
        if (lambda != 0 && lambda != parents_per_generation) {
            throw InvalidArgument("lambda must equal the number of offspring (parents per generation)");
        }
        if (!(crossover_rate >= 0.0 && crossover_rate <= 1.0)) throw InvalidArgument("crossover rate must lie in [0,1]");
        if (parallel == 0) throw InvalidArgument("parallel worker count must be positive");
    }
};

struct Individual {
    Genome genome;
    std::optional<double> fitness;

    friend bool operator==(const Individual&, const Individual&) = default;
};

struct GenerationRecord {
    std::size_t generation = 0;
    double best_fitness = 0.0;
    double mean_fitness = 0.0;
    double worst_fitness = 0.0;
    std::string best_genome_key;
    std::size_t evaluations_performed = 0;

    friend bool operator==(const GenerationRecord&, const GenerationRecord&) = default;
};

/// genome_key -> fitness. Ordered so that serialized caches are canonical.
class FitnessCache {
public:
    std::optional<double> find(const std::string& key) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }
    void insert(const std::string& key, double fitness) { entries_.emplace(key, fitness); }
    bool contains(const std::string& key) const { return entries_.count(key) != 0; }
    std::size_t size() const noexcept { return entries_.size(); }
    const std::map<std::string, double>& entries() const noexcept { return entries_; }

private:
    std::map<std::string, double> entries_;
};

namespace detail {

inline double fitness_of(const Individual& ind) {
    if (!ind.fitness) throw ContractError("individual " + genome_key(ind.genome) + " has not been evaluated");
    return *ind.fitness;
}

} // namespace detail

// ---------------------------------------------------------------------------------------------
// Parent selection

/// Population positions of `count` tournament winners, in selection order. Each tournament draws
/// min(k, pool) distinct members of the remaining pool; the fittest wins (ties uniform) and leaves the pool.
inline std::vector<std::size_t> tournament_select_indices(std::span<const Individual> pop, std::size_t k,
                                                          std::size_t count, Rng& rng) {
    if (k == 0) throw InvalidArgument("tournament size must be positive");
    if (count > pop.size()) throw InvalidArgument("cannot select more parents than the population holds");
    for (const auto& ind : pop) detail::fitness_of(ind);

    std::vector<std::size_t> pool(pop.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    std::vector<std::size_t> winners;
    winners.reserve(count);
    std::vector<std::size_t> tied;
    for (std::size_t round = 0; round < count; ++round) {
        const std::size_t draw = std::min(k, pool.size());
        // Partial Fisher-Yates: the first `draw` pool slots become a uniform sample.
        for (std::size_t i = 0; i < draw; ++i) {
            const std::size_t j = i + uniform_index(rng, pool.size() - i);
            std::swap(pool[i], pool[j]);
        }
        double best = -1.0;
        tied.clear();
        for (std::size_t i = 0; i < draw; ++i) {
            const double f = *pop[pool[i]].fitness;
            if (f > best) {
                best = f;
                tied.assign(1, i);
            } else if (f == best) {
                tied.push_back(i);
            }
        }
        const std::size_t slot = tied.size() == 1 ? tied[0] : tied[uniform_index(rng, tied.size())];
        winners.push_back(pool[slot]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(slot));
    }
    return winners;
}

inline std::vector<Individual> tournament_select(std::span<const Individual> pop, std::size_t k, std::size_t count,
                                                 Rng& rng) {
    std::vector<Individual> out;
    for (std::size_t i : tournament_select_indices(pop, k, count, rng)) out.push_back(pop[i]);
    return out;
}

// ---------------------------------------------------------------------------------------------
// Variation

/// Exchanges the gene slices of groups `a` and `b` between two genomes, one group after the other.
inline std::pair<Genome, Genome> swap_groups(const Genome& p1, const Genome& p2, Group a, Group b) {
    std::pair<Genome, Genome> children{p1, p2};
    for (Group g : {a, b}) {
        const IndexRange r = group_bounds(g);
        for (std::size_t i = r.begin; i < r.end; ++i) std::swap(children.first[i], children.second[i]);
    }
    return children;
}

/// With probability `rate`, swaps two distinct, uniformly chosen groups; otherwise copies the parents.
inline std::pair<Genome, Genome> crossover(const Genome& p1, const Genome& p2, const SearchSpace& space, double rate,
                                           Rng& rng) {
    validate(p1, space);
    validate(p2, space);
    if (!bernoulli(rng, rate)) return {p1, p2};
    const std::size_t first = uniform_index(rng, kNumGroups);
    std::size_t second = uniform_index(rng, kNumGroups - 1);
    if (second >= first) ++second;
    return swap_groups(p1, p2, kAllGroups[first], kAllGroups[second]);
}

/// Reorders the conv-dimension genes so their decoded channel counts are non-decreasing.
inline Genome sort_conv_dims(Genome g, const SearchSpace& space) {
    const IndexRange r = group_bounds(Group::conv_dims);
    const auto& alphabet = space.conv_channels();
    std::stable_sort(g.genes.begin() + static_cast<std::ptrdiff_t>(r.begin),
                     g.genes.begin() + static_cast<std::ptrdiff_t>(r.end),
                     [&](std::uint32_t a, std::uint32_t b) { return alphabet.at(a) < alphabet.at(b); });
    return g;
}

struct MutationResult {
    Genome genome;
    Group group = Group::conv_dims;
    std::size_t position = 0;   ///< gene position chosen before the conv dims are re-sorted
    std::uint32_t new_index = 0;
    bool changed = false;       ///< false only when the chosen gene has a single-valued alphabet
};

/// Sorts the conv dims, then resamples one gene of one uniformly chosen group to a different
/// value; re-sorts if that gene was a conv dim.
inline MutationResult mutate_traced(const Genome& input, const SearchSpace& space, Rng& rng) {
    validate(input, space);
    MutationResult out;
    out.genome = sort_conv_dims(input, space);
    out.group = kAllGroups[uniform_index(rng, kNumGroups)];
    const IndexRange r = group_bounds(out.group);
    out.position = r.begin + uniform_index(rng, r.size());
    const std::size_t alphabet = space.alphabet_size(out.position);
    const std::uint32_t current = out.genome[out.position];
    out.new_index = current;
    if (alphabet > 1) {
        auto pick = static_cast<std::uint32_t>(uniform_index(rng, alphabet - 1));
        if (pick >= current) ++pick;
        out.genome[out.position] = pick;
        out.new_index = pick;
        out.changed = true;
    }
    if (out.group == Group::conv_dims) out.genome = sort_conv_dims(out.genome, space);
    return out;
}

inline Genome mutate(const Genome& g, const SearchSpace& space, Rng& rng) {
    return mutate_traced(g, space, rng).genome;
}

// ---------------------------------------------------------------------------------------------
// Survivor selection

/// Drops the offspring.size() least fit members (ties uniform) and appends every offspring.
/// Survivors keep their relative order.
inline std::vector<Individual> survivor_select(std::span<const Individual> pop, std::span<const Individual> offspring,
                                               Rng& rng) {
    if (offspring.size() > pop.size()) throw InvalidArgument("more offspring than population members");
    for (const auto& ind : pop) detail::fitness_of(ind);
    for (const auto& ind : offspring) detail::fitness_of(ind);

    std::vector<std::size_t> order(pop.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order.begin(), order.end(), rng);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return *pop[a].fitness < *pop[b].fitness; });
    std::vector<bool> removed(pop.size(), false);
    for (std::size_t i = 0; i < offspring.size(); ++i) removed[order[i]] = true;

    std::vector<Individual> next;
    next.reserve(pop.size());
    for (std::size_t i = 0; i < pop.size(); ++i) {
        if (!removed[i]) next.push_back(pop[i]);
    }
    next.insert(next.end(), offspring.begin(), offspring.end());
    return next;
}

// ---------------------------------------------------------------------------------------------
// Evaluation

/// Per-genome evaluation seed.
inline std::uint64_t evaluation_seed(std::uint64_t master_seed, const Genome& g) {
    return derive_seed(master_seed, genome_key(g));
}

/// Fills in fitness for every individual, cache first. Uncached genomes are evaluated once each
/// (optionally on several threads) and merged in population order. Returns the number of new evaluations.
inline std::size_t evaluate_population(std::vector<Individual>& inds, const FitnessEvaluator& evaluator,
                                       FitnessCache& cache, std::uint64_t master_seed, std::size_t parallel = 1) {
    std::vector<Genome> todo;
    std::vector<std::string> keys;
    for (const auto& ind : inds) {
        std::string key = genome_key(ind.genome);
        if (cache.contains(key) || std::find(keys.begin(), keys.end(), key) != keys.end()) continue;
        todo.push_back(ind.genome);
        keys.push_back(std::move(key));
    }

    std::vector<double> results(todo.size(), 0.0);
    std::vector<std::exception_ptr> errors(todo.size());
    auto work = [&](std::size_t i) {
        try {
            const double f = evaluator.evaluate(todo[i], evaluation_seed(master_seed, todo[i]));
            if (!(f >= 0.0 && f <= 1.0)) throw NumericError("fitness " + std::to_string(f) + " outside [0,1]");
            results[i] = f;
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    const std::size_t workers = std::min(parallel, todo.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < todo.size(); ++i) work(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < workers; ++t) {
            threads.emplace_back([&] {
                for (std::size_t i = next++; i < todo.size(); i = next++) work(i);
            });
        }
        for (auto& t : threads) t.join();
    }
    for (std::size_t i = 0; i < todo.size(); ++i) {
        if (errors[i]) {
            try {
                std::rethrow_exception(errors[i]);
            } catch (const std::exception& e) {
                throw EvaluationError(keys[i], e.what());
            }
        }
        cache.insert(keys[i], results[i]);
    }
    for (auto& ind : inds) ind.fitness = *cache.find(genome_key(ind.genome));
    return todo.size();
}

inline GenerationRecord summarize(std::size_t generation, std::span<const Individual> pop, std::size_t evaluations) {
    if (pop.empty()) throw InvalidArgument("cannot summarize an empty population");
    GenerationRecord rec;
    rec.generation = generation;
    rec.evaluations_performed = evaluations;
    double sum = 0.0;
    rec.best_fitness = detail::fitness_of(pop[0]);
    rec.worst_fitness = rec.best_fitness;
    rec.best_genome_key = genome_key(pop[0].genome);
    for (const auto& ind : pop) {
        const double f = detail::fitness_of(ind);
        sum += f;
        if (f > rec.best_fitness) {
            rec.best_fitness = f;
            rec.best_genome_key = genome_key(ind.genome);
        }
        rec.worst_fitness = std::min(rec.worst_fitness, f);
    }
    // Rounding in the sum must not push the mean outside [worst, best].
    rec.mean_fitness = std::clamp(sum / static_cast<double>(pop.size()), rec.worst_fitness, rec.best_fitness);
    return rec;
}

// ---------------------------------------------------------------------------------------------
// Generational loop

struct StepResult {
    std::vector<Individual> population;
    GenerationRecord record;
};

/// One generation: tournaments, sequential pairing, crossover, mutation of every child,
/// cache-first evaluation, worst-lambda replacement.
inline StepResult step(std::span<const Individual> pop, std::size_t generation, const GaConfig& config,
                       const SearchSpace& space, const FitnessEvaluator& evaluator, FitnessCache& cache, Rng& rng) {
    config.validate();
    if (pop.size() != config.population_size) throw InvalidArgument("population size differs from configuration");
    const auto parents = tournament_select(pop, config.tournament_size, config.parents_per_generation, rng);
    std::vector<Individual> children;
    children.reserve(parents.size());
    for (std::size_t i = 0; i + 1 < parents.size(); i += 2) {
        auto [a, b] = crossover(parents[i].genome, parents[i + 1].genome, space, config.crossover_rate, rng);
        children.push_back({mutate(a, space, rng), std::nullopt});
        children.push_back({mutate(b, space, rng), std::nullopt});
    }
    const std::size_t evaluated = evaluate_population(children, evaluator, cache, config.master_seed, config.parallel);
    StepResult out;
    out.population = survivor_select(pop, children, rng);
    out.record = summarize(generation, out.population, evaluated);
    return out;
}

/// Everything needed to continue a run: a checkpoint serializes exactly this.
struct RunState {
    GaConfig config;
    std::size_t generation = 0;
    std::vector<Individual> population;
    FitnessCache cache;
    Rng rng;
    Individual best;
};

struct RunResult {
    Individual best;
    std::vector<GenerationRecord> history;
    bool completed = true;
};

/// Called after every generation (including generation 0). Returning false stops the run.
using GenerationObserver = std::function<bool(const RunState&, const GenerationRecord&)>;

inline void update_best(Individual& best, std::span<const Individual> pop) {
    for (const auto& ind : pop) {
        if (!best.fitness || *ind.fitness > *best.fitness) best = ind;
    }
}

/// Random initial population, evaluated; the returned record is generation 0.
inline std::pair<RunState, GenerationRecord> initialize(const GaConfig& config, const SearchSpace& space,
                                                        const FitnessEvaluator& evaluator) {
    config.validate();
    RunState state;
    state.config = config;
    state.rng.seed(config.master_seed);
    for (auto& g : init_population(config.population_size, space, state.rng)) {
        state.population.push_back({g, std::nullopt});
    }
    const std::size_t evaluated =
        evaluate_population(state.population, evaluator, state.cache, config.master_seed, config.parallel);
    update_best(state.best, state.population);
    GenerationRecord record = summarize(0, state.population, evaluated);
    return {std::move(state), std::move(record)};
}

/// Advances `state` until config.max_generations or until the observer asks to stop.
inline RunResult advance(RunState& state, const SearchSpace& space, const FitnessEvaluator& evaluator,
                         const GenerationObserver& observer = {}) {
    RunResult result;
    while (state.generation < state.config.max_generations) {
        auto next = step(state.population, state.generation + 1, state.config, space, evaluator, state.cache, state.rng);
        state.population = std::move(next.population);
        ++state.generation;
        update_best(state.best, state.population);
        result.history.push_back(next.record);
        if (observer && !observer(state, next.record)) {
            result.completed = state.generation >= state.config.max_generations;
            break;
        }
    }
    result.best = state.best;
    return result;
}

/// Full run: generation 0 plus max_generations steps, max_generations + 1 records.
inline RunResult run(const GaConfig& config, const SearchSpace& space, const FitnessEvaluator& evaluator,
                     const GenerationObserver& observer = {}) {
    auto [state, first] = initialize(config, space, evaluator);
    RunResult result;
    result.history.push_back(first);
    if (observer && !observer(state, first)) {
        result.best = state.best;
        result.completed = config.max_generations == 0;
        return result;
    }
    RunResult rest = advance(state, space, evaluator, observer);
    result.history.insert(result.history.end(), rest.history.begin(), rest.history.end());
    result.best = rest.best;
    result.completed = rest.completed;
    return result;
}

} // namespace cnnga
