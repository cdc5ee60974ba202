// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run every criterion
//   acceptance 2 7        run only criteria 2 and 7

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <cnnga/cnnga.hpp>

#ifndef CNNGA_CLI_PATH
#error "CNNGA_CLI_PATH must point at the cnnga executable"
#endif

using namespace cnnga;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned thresholds.
constexpr double kLayerTol = 1e-6;
constexpr double kNetworkTol = 1e-5;
constexpr double kGradSuiteSeconds = 120.0;
constexpr int kOperatorTrials = 1000;
constexpr int kConvergenceSeeds = 10;
constexpr int kConvergenceRequired = 9;
constexpr double kConvergenceSeconds = 10.0;
constexpr int kTrendSeeds = 20;
constexpr double kDeskSeconds = 30.0 * 60.0;
constexpr double kDeskAccuracy = 0.9;
constexpr std::size_t kResumeAt = 50;

struct Verdict {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

int cli(const fs::path& cwd, const std::string& args) {
    const std::string cmd = "cd '" + cwd.string() + "' && '" + CNNGA_CLI_PATH + "' " + args + " > /dev/null 2>> '" +
                            (cwd / "stderr.txt").string() + "'";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("cnnga_acceptance_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Genome top_genome(const SearchSpace& space) {
    Genome g;
    for (std::size_t i = 0; i < kGenomeLength; ++i) g[i] = static_cast<std::uint32_t>(space.alphabet_size(i) - 1);
    return g;
}

// ---------------------------------------------------------------------------------------------

Verdict gradient_fidelity() {
    const auto t0 = Clock::now();
    const auto results = gradcheck::run_all();
    const double elapsed = seconds_since(t0);
    double worst_layer = 0.0, network = 0.0;
    std::string failed;
    for (const auto& r : results) {
        const bool is_network = r.name.rfind("network", 0) == 0;
        if (r.tolerance > (is_network ? kNetworkTol : kLayerTol)) failed += " " + r.name + "(tolerance)";
        double& worst = is_network ? network : worst_layer;
        worst = std::max(worst, r.max_relative_error);
        if (!r.passed()) failed += " " + r.name;
    }
    Verdict v;
    v.pass = failed.empty() && elapsed < kGradSuiteSeconds;
    v.detail = fmt("%zu checks, worst layer rel err %.2e (< %.0e), network %.2e (< %.0e), %.2f s (< %.0f s)",
                   results.size(), worst_layer, kLayerTol, network, kNetworkTol, elapsed, kGradSuiteSeconds);
    if (!failed.empty()) v.detail += "; failed:" + failed;
    return v;
}

Verdict class_weight_exactness() {
    std::size_t cases = 0, bad = 0;
    auto check = [&](std::size_t zeros, std::size_t ones) {
        std::vector<int> labels(zeros, 0);
        labels.insert(labels.end(), ones, 1);
        Rng rng(zeros * 7919 + ones);
        shuffle(labels.begin(), labels.end(), rng);
        const auto w = class_weights(labels);
        const auto n = static_cast<std::int64_t>(zeros + ones);
        const std::int64_t m[2] = {static_cast<std::int64_t>(zeros), static_cast<std::int64_t>(ones)};
        // m_i * W_i == N / 2  <=>  2 * m_i * num_i == N * den_i
        for (int i = 0; i < 2; ++i) bad += 2 * m[i] * w[i].numerator != n * w[i].denominator;
        ++cases;
    };
    for (std::size_t n = 2; n <= 600; ++n) {
        for (std::size_t ones = 1; ones < n; ++ones) check(n - ones, ones);
    }
    Rng rng(2);
    for (int t = 0; t < 2000; ++t) {
        const std::size_t n = 2 + uniform_index(rng, 200000);
        const std::size_t ones = 1 + uniform_index(rng, n - 1);
        check(n - ones, ones);
    }
    return {bad == 0, fmt("%zu label multisets (all compositions up to N=600 plus 2000 random up to N=200001), "
                          "%zu inexact",
                          cases, bad)};
}

Verdict operator_properties() {
    const auto space = default_search_space();
    Rng rng(20240);
    std::map<std::string, int> failures;
    auto fail = [&](const char* what) { ++failures[what]; };

    for (int t = 0; t < kOperatorTrials; ++t) {
        const auto ps = init_population(2, space, rng);
        const auto [a, b] = crossover(ps[0], ps[1], space, 0.6, rng);
        for (Group g : kAllGroups) {
            std::multiset<std::uint32_t> before, after;
            const auto r = group_bounds(g);
            for (std::size_t i = r.begin; i < r.end; ++i) {
                before.insert({ps[0][i], ps[1][i]});
                after.insert({a[i], b[i]});
            }
            if (before != after) fail("crossover multiset");
        }
        const auto [c, d] = crossover(ps[0], ps[1], space, 0.0, rng);
        if (c != ps[0] || d != ps[1]) fail("crossover rate 0");
    }

    for (int t = 0; t < kOperatorTrials; ++t) {
        const Genome sorted = sort_conv_dims(init_population(1, space, rng)[0], space);
        const auto m = mutate_traced(sorted, space, rng);
        const Genome& out = m.genome;
        const auto& ch = space.conv_channels();
        if (!(ch.at(out[0]) <= ch.at(out[1]) && ch.at(out[1]) <= ch.at(out[2]))) fail("mutate sorted");
        // One gene value changes; a conv-dim change may be re-sorted into another slot.
        std::size_t outside = 0;
        for (std::size_t i = 3; i < kGenomeLength; ++i) outside += out[i] != sorted[i];
        std::multiset<std::uint32_t> g0_in{sorted[0], sorted[1], sorted[2]}, g0_out{out[0], out[1], out[2]};
        std::size_t g0_changed = 0;
        for (auto v : g0_in) {
            auto it = g0_out.find(v);
            if (it == g0_out.end()) ++g0_changed;
            else g0_out.erase(it);
        }
        if (outside + g0_changed != 1) fail("mutate one gene");
    }

    for (int t = 0; t < kOperatorTrials; ++t) {
        std::vector<Individual> pop;
        for (const auto& g : init_population(50, space, rng)) pop.push_back({g, surrogate_eval(g, space)});
        const auto idx = tournament_select_indices(pop, 5, 10, rng);
        if (std::set<std::size_t>(idx.begin(), idx.end()).size() != idx.size()) fail("tournament distinct");

        const std::size_t k = 1 + uniform_index(rng, 20);
        std::vector<Individual> small(pop.begin(), pop.begin() + static_cast<std::ptrdiff_t>(k));
        double mx = 0.0;
        for (const auto& i : small) mx = std::max(mx, *i.fitness);
        const auto w = tournament_select_indices(small, k, 1, rng);
        if (*small[w[0]].fitness != mx) fail("tournament full pool max");
    }

    for (int t = 0; t < kOperatorTrials; ++t) {
        std::vector<Individual> pop(50), off(10);
        for (auto& p : pop) p.fitness = uniform_real(rng);
        for (auto& o : off) o.fitness = uniform_real(rng);
        std::vector<double> f;
        for (const auto& p : pop) f.push_back(*p.fitness);
        std::sort(f.begin(), f.end(), std::greater<>());
        std::multiset<double> expected(f.begin(), f.begin() + 40);
        for (const auto& o : off) expected.insert(*o.fitness);
        std::multiset<double> got;
        for (const auto& i : survivor_select(pop, off, rng)) got.insert(*i.fitness);
        if (got != expected) fail("survivor oracle");
    }

    const SurrogateEvaluator ev(space);
    for (int t = 0; t < kOperatorTrials; ++t) {
        GaConfig cfg;
        cfg.population_size = 20;
        cfg.max_generations = 15;
        cfg.master_seed = static_cast<std::uint64_t>(t);
        const auto r = run(cfg, space, ev);
        if (r.history.size() != 16) fail("history length");
        for (std::size_t i = 1; i < r.history.size(); ++i) {
            if (r.history[i].best_fitness < r.history[i - 1].best_fitness) {
                fail("best non-decreasing");
                break;
            }
        }
    }

    Verdict v;
    v.pass = failures.empty();
    v.detail = fmt("%d trials per property over 8 properties", kOperatorTrials);
    for (const auto& [what, n] : failures) v.detail += fmt("; %s failed %d times", what.c_str(), n);
    return v;
}

Verdict surrogate_convergence() {
    const auto space = default_search_space();
    const SurrogateEvaluator ev(space);
    int reached = 0;
    double slowest = 0.0;
    for (int s = 0; s < kConvergenceSeeds; ++s) {
        GaConfig cfg;
        cfg.master_seed = static_cast<std::uint64_t>(s);
        const auto t0 = Clock::now();
        const auto r = run(cfg, space, ev);
        slowest = std::max(slowest, seconds_since(t0));
        reached += r.history.back().best_fitness == 1.0 && r.best.genome == top_genome(space);
    }
    return {reached >= kConvergenceRequired && slowest < kConvergenceSeconds,
            fmt("optimum reached in %d/%d seeds (need >= %d), slowest run %.3f s (< %.0f s)", reached,
                kConvergenceSeeds, kConvergenceRequired, slowest, kConvergenceSeconds)};
}

Verdict population_trend() {
    const auto space = default_search_space();
    const SurrogateEvaluator ev(space);
    std::vector<double> means;
    for (std::size_t np : {20u, 30u, 50u}) {
        double sum = 0.0;
        for (int s = 0; s < kTrendSeeds; ++s) {
            GaConfig cfg;
            cfg.population_size = np;
            cfg.master_seed = 1000 + static_cast<std::uint64_t>(s);
            sum += run(cfg, space, ev).history.back().best_fitness;
        }
        means.push_back(sum / kTrendSeeds);
    }
    return {means[0] <= means[1] && means[1] <= means[2],
            fmt("mean best fitness at generation 100 over %d seeds: Np=20 %.6f, Np=30 %.6f, Np=50 %.6f", kTrendSeeds,
                means[0], means[1], means[2])};
}

Verdict desk_scale() {
    const fs::path dir = scratch("desk");
    const std::string args =
        "search --evaluator cnn --data synthetic:250:32 --data-seed 0 --pop-size 8 --parents 4 --generations 5 "
        "--epochs 5 --seed 1 --out ";
    const auto t0 = Clock::now();
    const int first = cli(dir, args + "a");
    const double elapsed = seconds_since(t0);
    const int second = cli(dir, args + "b");
    if (first != 0 || second != 0) return {false, fmt("search exited with %d / %d", first, second)};
    const auto history = read_history(dir / "a" / "history.jsonl");
    const double best = history.empty() ? 0.0 : history.back().best_fitness;
    const bool identical = slurp(dir / "a" / "history.jsonl") == slurp(dir / "b" / "history.jsonl");
    std::size_t evaluations = 0;
    for (const auto& r : history) evaluations += r.evaluations_performed;
    Verdict v;
    v.pass = elapsed < kDeskSeconds && best >= kDeskAccuracy && identical && history.size() == 6;
    v.detail = fmt("best validation accuracy %.4f (>= %.1f), %zu trainings in %.1f s (< %.0f s), rerun history %s",
                   best, kDeskAccuracy, evaluations, elapsed, kDeskSeconds, identical ? "byte-identical" : "DIFFERS");
    fs::remove_all(dir);
    return v;
}

Verdict split_fidelity() {
    auto recs = data::synth_generate(487, 8, 8, 5);
    const auto ds = data::split(std::move(recs), 0.8, 5);
    const auto plan = data::batches(ds.train, 16, 0);
    std::size_t full = 0, partial_size = 0, partial = 0;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        const std::size_t n = plan.indices(i).size();
        if (n == 16) ++full;
        else {
            ++partial;
            partial_size = n;
        }
    }
    const bool ok = ds.train.size() == 390 && ds.val.size() == 97 && full == 24 && partial == 1 && partial_size == 6;
    return {ok, fmt("487 -> %zu train / %zu val; %zu full batches of 16 plus %zu of %zu", ds.train.size(),
                    ds.val.size(), full, partial, partial_size)};
}

Verdict resume_equivalence() {
    const fs::path dir = scratch("resume");
    const std::string args = "search --generations 100 --seed 42 --out ";
    const int full = cli(dir, args + "full");
    const int halted = cli(dir, args + "part --halt-after " + std::to_string(kResumeAt));
    const auto checkpoint = read_checkpoint(dir / "part" / "checkpoint.txt");
    const int resumed = cli(dir, "resume part/checkpoint.txt");
    const bool identical = slurp(dir / "full" / "history.jsonl") == slurp(dir / "part" / "history.jsonl");
    const bool best_same = slurp(dir / "full" / "best_genome.txt") == slurp(dir / "part" / "best_genome.txt");
    Verdict v;
    v.pass = full == 0 && halted == 130 && resumed == 0 && checkpoint.state.generation == kResumeAt && identical &&
             best_same;
    v.detail = fmt("interrupted at generation %zu (exit %d), resumed (exit %d): history %s, best genome %s",
                   checkpoint.state.generation, halted, resumed, identical ? "identical" : "DIFFERS",
                   best_same ? "identical" : "DIFFERS");
    fs::remove_all(dir);
    return v;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
        {"gradient fidelity", gradient_fidelity},
        {"class-weight exactness", class_weight_exactness},
        {"operator properties", operator_properties},
        {"surrogate convergence", surrogate_convergence},
        {"population-size trend", population_trend},
        {"desk-scale end-to-end", desk_scale},
        {"split fidelity", split_fidelity},
        {"resume equivalence", resume_equivalence},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.count(id)) continue;
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failed += !v.pass;
        std::printf("AC%d %s  %s: %s\n", id, v.pass ? "PASS" : "FAIL", criteria[i].first, v.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
