// cnnga: genetic search over CNN hyperparameters.
//
// Exit codes: 0 ok, 1 check failure, 2 usage, 3 data, 4 checkpoint, 130 interrupted.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include <cnnga/cnnga.hpp>

namespace fs = std::filesystem;
using namespace cnnga;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitCheckpoint = 4;
constexpr int kExitInterrupted = 130;

std::atomic<bool> g_interrupted{false};

extern "C" void on_sigint(int) { g_interrupted = true; }

/// Flags shared by search and eval-genome; each maps onto a RunConfig key.
struct ConfigFlags {
    std::optional<std::string> config_file;
    std::map<std::string, std::string> values;

    void add_to(CLI::App& app, const std::vector<std::pair<std::string, std::string>>& flags) {
        for (const auto& [flag, help] : flags) {
            app.add_option_function<std::string>(
                "--" + flag, [this, flag = flag](const std::string& v) { values[flag] = v; }, help);
        }
    }

    RunConfig build() const {
        RunConfig cfg;
        if (config_file) apply_config_text(cfg, read_text_file(*config_file));
        for (const auto& [k, v] : values) cfg.set(k, v);
        cfg.validate();
        return cfg;
    }
};

const std::vector<std::pair<std::string, std::string>> kSearchFlags{
    {"seed", "master seed"},
    {"pop-size", "population size (default 50)"},
    {"generations", "number of generations (default 100)"},
    {"tournament-size", "tournament size (default 5)"},
    {"parents", "parents per generation, even (default 10)"},
    {"crossover-rate", "crossover probability (default 0.6)"},
    {"evaluator", "cnn | surrogate (default surrogate)"},
    {"data", "dataset directory or synthetic:<n>:<size>"},
    {"data-seed", "seed for synthetic data and the train/validation split"},
    {"image-size", "resize side for directory datasets (default 256)"},
    {"epochs", "training epochs per evaluation (default 20)"},
    {"lr", "Adam learning rate (default 0.0005)"},
    {"batch-size", "mini-batch size (default 16)"},
    {"out", "output directory"},
    {"parallel", "evaluation worker threads"},
};

data::SplitDataset load_dataset(const RunConfig& cfg) {
    std::vector<data::ImageRecord> records;
    constexpr std::string_view prefix = "synthetic:";
    if (cfg.data.rfind(prefix, 0) == 0) {
        const std::string spec = cfg.data.substr(prefix.size());
        const auto colon = spec.find(':');
        if (colon == std::string::npos) throw InvalidArgument("synthetic data must be synthetic:<n>:<size>");
        const auto n = parse_unsigned<std::size_t>(spec.substr(0, colon), "synthetic count");
        const auto size = parse_unsigned<std::size_t>(spec.substr(colon + 1), "synthetic size");
        records = data::synth_generate(n, size, size, cfg.data_seed);
    } else {
        records = data::load_directory(cfg.data, cfg.image_size, cfg.image_size);
    }
    return data::split(std::move(records), cfg.split_ratio, cfg.data_seed);
}

/// Evaluator plus whatever it borrows.
struct EvaluatorBundle {
    data::SplitDataset dataset;
    std::unique_ptr<std::ofstream> log;
    std::unique_ptr<FitnessEvaluator> evaluator;
};

EvaluatorBundle make_evaluator(const RunConfig& cfg, const SearchSpace& space, const fs::path& out_dir) {
    EvaluatorBundle b;
    if (cfg.evaluator == EvaluatorKind::surrogate) {
        b.evaluator = std::make_unique<SurrogateEvaluator>(space);
        return b;
    }
    b.dataset = load_dataset(cfg);
    std::cerr << "dataset: " << b.dataset.train.size() << " train / " << b.dataset.val.size() << " validation\n";
    b.log = std::make_unique<std::ofstream>(out_dir / "evaluations.jsonl", std::ios::app);
    auto* log = b.log.get();
    b.evaluator = std::make_unique<CnnEvaluator>(space, b.dataset, cfg.train, [log](const EvaluationReport& r) {
        *log << to_json(r).dump() << '\n';
        log->flush();
    });
    return b;
}

/// Appends each record to the history, then checkpoints; stops on SIGINT or at `halt_after`.
GenerationObserver make_observer(const fs::path& dir, const RunConfig& cfg, std::optional<std::size_t> halt_after) {
    return [dir, cfg, halt_after](const RunState& state, const GenerationRecord& rec) {
        {
            std::ofstream hist(dir / "history.jsonl", std::ios::app);
            hist << to_json_line(rec) << '\n';
        }
        write_checkpoint(dir / "checkpoint.txt", state, cfg);
        std::cerr << "generation " << rec.generation << ": best " << rec.best_fitness << " mean " << rec.mean_fitness
                  << " worst " << rec.worst_fitness << " (" << rec.evaluations_performed << " evaluations)\n";
        if (g_interrupted) return false;
        return !(halt_after && rec.generation >= *halt_after);
    };
}

void write_best(const fs::path& dir, const Individual& best, const SearchSpace& space) {
    write_text_file_atomic(dir / "best_genome.txt", best_genome_text(best, space));
    std::cout << "best fitness " << format_double(best.fitness.value_or(0.0)) << "\n" << format_genome(best.genome)
              << "\n";
}

int cmd_search(const ConfigFlags& flags, std::optional<std::size_t> halt_after) {
    const RunConfig cfg = flags.build();
    const SearchSpace space = default_search_space();
    const fs::path dir = cfg.out;
    fs::create_directories(dir);
    write_text_file_atomic(dir / "config.txt", cfg.to_text());
    std::ofstream(dir / "history.jsonl", std::ios::trunc);
    if (fs::exists(dir / "evaluations.jsonl")) fs::remove(dir / "evaluations.jsonl");

    auto bundle = make_evaluator(cfg, space, dir);
    const RunResult result = run(cfg.ga, space, *bundle.evaluator, make_observer(dir, cfg, halt_after));
    if (!result.completed) {
        std::cerr << "interrupted; resume with: cnnga resume " << (dir / "checkpoint.txt").string() << "\n";
        return kExitInterrupted;
    }
    write_best(dir, result.best, space);
    return kExitOk;
}

int cmd_resume(const fs::path& checkpoint_path, std::optional<std::size_t> parallel,
               std::optional<std::size_t> halt_after) {
    Checkpoint cp = read_checkpoint(checkpoint_path);
    const fs::path dir = checkpoint_path.parent_path().empty() ? fs::path(".") : checkpoint_path.parent_path();
    const SearchSpace space = default_search_space();
    if (cp.state.generation >= cp.config.ga.max_generations) {
        std::cout << "run already complete at generation " << cp.state.generation << "\n";
        return kExitOk;
    }
    if (parallel) cp.state.config.parallel = *parallel;

    // Records past the checkpoint were written by a generation that never checkpointed.
    const fs::path history_path = dir / "history.jsonl";
    std::vector<std::string> kept;
    {
        std::ifstream is(history_path);
        std::string line;
        while (kept.size() < cp.state.generation + 1 && std::getline(is, line)) {
            if (!trim(line).empty()) kept.push_back(line);
        }
    }
    if (kept.size() != cp.state.generation + 1) {
        throw CheckpointError("history file is shorter than the checkpoint generation");
    }
    {
        std::ofstream os(history_path, std::ios::trunc);
        for (const auto& l : kept) os << l << '\n';
    }

    auto bundle = make_evaluator(cp.config, space, dir);
    const RunResult result = advance(cp.state, space, *bundle.evaluator, make_observer(dir, cp.config, halt_after));
    if (!result.completed) return kExitInterrupted;
    write_best(dir, result.best, space);
    return kExitOk;
}

int cmd_gen_data(std::size_t n, std::size_t size, std::uint64_t seed, const fs::path& out, const std::string& format) {
    if (format != "ppm" && format != "tensor") throw InvalidArgument("format must be ppm or tensor");
    const auto records = data::synth_generate(n, size, size, seed);
    data::write_dataset(records, out, format == "ppm" ? data::ImageFormat::ppm : data::ImageFormat::tensor);
    std::cout << "wrote " << records.size() << " images to " << out.string() << "\n";
    return kExitOk;
}

int cmd_grad_check() {
    const auto results = gradcheck::run_all();
    bool ok = true;
    for (const auto& r : results) {
        std::printf("%-34s max rel err %.3e  (tol %.0e, %zu entries)  %s\n", r.name.c_str(), r.max_relative_error,
                    r.tolerance, r.entries, r.passed() ? "ok" : "FAILED");
        ok = ok && r.passed();
    }
    if (!ok) {
        for (const auto& r : results) {
            if (!r.passed()) std::cerr << "gradient check failed: " << r.name << "\n";
        }
    }
    return ok ? kExitOk : kExitCheckFailed;
}

int cmd_eval_genome(const std::string& genome_line, const ConfigFlags& flags) {
    const Genome g = parse_genome(genome_line);
    const SearchSpace space = default_search_space();
    validate(g, space);
    const RunConfig cfg = flags.build();
    const auto dataset = load_dataset(cfg);
    const auto report = evaluate_cnn(g, space, dataset, cfg.train, evaluation_seed(cfg.ga.master_seed, g));
    std::cout << to_text(decode(g, space)) << to_json(report).dump(2) << "\n";
    return kExitOk;
}

int cmd_report(const fs::path& history_path, std::optional<fs::path> csv_path) {
    const auto history = read_history(history_path);
    std::printf("%10s %12s %12s %12s %6s\n", "generation", "best", "mean", "worst", "evals");
    for (const auto& r : history) {
        std::printf("%10zu %12.6f %12.6f %12.6f %6zu\n", r.generation, r.best_fitness, r.mean_fitness, r.worst_fitness,
                    r.evaluations_performed);
    }
    const fs::path csv = csv_path ? *csv_path : history_path.parent_path() / "fitness_curves.csv";
    if (fs::exists(csv) && fs::equivalent(csv, history_path)) throw InvalidArgument("csv path equals the history file");
    std::ofstream os(csv, std::ios::trunc);
    if (!os) throw DataError("cannot write " + csv.string());
    os << "generation,best_fitness,mean_fitness,worst_fitness\n";
    for (const auto& r : history) {
        os << r.generation << ',' << format_double(r.best_fitness) << ',' << format_double(r.mean_fitness) << ','
           << format_double(r.worst_fitness) << '\n';
    }
    std::cerr << "fitness curves written to " << csv.string() << "\n";
    return kExitOk;
}

/// Highest final best fitness per population size over a set of run directories.
int cmd_report_across(const std::vector<fs::path>& dirs) {
    std::map<std::size_t, std::pair<double, std::size_t>, std::greater<>> by_pop;
    for (const auto& dir : dirs) {
        RunConfig cfg;
        apply_config_text(cfg, read_text_file(dir / "config.txt"));
        const auto history = read_history(dir / "history.jsonl");
        if (history.empty()) throw DataError("empty history in " + dir.string());
        double best = 0.0;
        for (const auto& r : history) best = std::max(best, r.best_fitness);
        auto& slot = by_pop.try_emplace(cfg.ga.population_size, 0.0, 0).first->second;
        slot.first = std::max(slot.first, best);
        ++slot.second;
    }
    std::printf("%-14s %10s %6s\n", "method", "best", "runs");
    for (const auto& [pop, entry] : by_pop) {
        const std::string label = "GA, N_p=" + std::to_string(pop);
        std::printf("%-14s %10.4f %6zu\n", label.c_str(), entry.first, entry.second);
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Genetic search over CNN hyperparameters"};
    app.require_subcommand(1);

    ConfigFlags search_flags;
    std::optional<std::size_t> halt_after;
    auto* search = app.add_subcommand("search", "run a genetic search");
    search->add_option("--config", search_flags.config_file, "key = value configuration file");
    search_flags.add_to(*search, kSearchFlags);
    search->add_option("--halt-after", halt_after, "stop after this generation as if interrupted");

    std::string checkpoint;
    std::optional<std::size_t> resume_parallel;
    auto* resume = app.add_subcommand("resume", "continue a run from its checkpoint");
    resume->add_option("checkpoint", checkpoint, "checkpoint file")->required();
    resume->add_option("--parallel", resume_parallel, "evaluation worker threads");
    resume->add_option("--halt-after", halt_after, "stop after this generation as if interrupted");

    std::size_t gen_n = 250, gen_size = 32;
    std::uint64_t gen_seed = 0;
    std::string gen_out = "synthetic_data", gen_format = "ppm";
    auto* gen = app.add_subcommand("gen-data", "write a synthetic two-class dataset");
    gen->add_option("--n", gen_n, "number of images");
    gen->add_option("--size", gen_size, "image side length");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--format", gen_format, "ppm | tensor");

    auto* grad = app.add_subcommand("grad-check", "finite-difference check of every layer");

    std::string genome_line;
    ConfigFlags eval_flags;
    auto* eval = app.add_subcommand("eval-genome", "train and score one genome");
    eval->add_option("genome", genome_line, "16 gene indices, quoted, space separated")->required();
    eval->add_option("--config", eval_flags.config_file, "key = value configuration file");
    eval_flags.add_to(*eval, {{"seed", "master seed"},
                              {"data", "dataset directory or synthetic:<n>:<size>"},
                              {"data-seed", "seed for synthetic data and the split"},
                              {"image-size", "resize side for directory datasets"},
                              {"epochs", "training epochs"},
                              {"lr", "learning rate"},
                              {"batch-size", "mini-batch size"}});

    std::string history_path;
    std::optional<std::string> csv_path;
    std::vector<std::string> across;
    auto* report = app.add_subcommand("report", "tabulate a run history");
    report->add_option("history", history_path, "history.jsonl of a run");
    report->add_option("--csv", csv_path, "where to write the fitness-curve CSV");
    report->add_option("--across", across, "run directories to aggregate by population size");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    std::signal(SIGINT, on_sigint);
    try {
        if (*search) return cmd_search(search_flags, halt_after);
        if (*resume) return cmd_resume(checkpoint, resume_parallel, halt_after);
        if (*gen) return cmd_gen_data(gen_n, gen_size, gen_seed, gen_out, gen_format);
        if (*grad) return cmd_grad_check();
        if (*eval) return cmd_eval_genome(genome_line, eval_flags);
        if (*report) {
            if (!across.empty()) {
                std::vector<fs::path> dirs(across.begin(), across.end());
                return cmd_report_across(dirs);
            }
            if (history_path.empty()) throw InvalidArgument("report needs a history file or --across");
            return cmd_report(history_path, csv_path ? std::optional<fs::path>(*csv_path) : std::nullopt);
        }
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheckpoint;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const InvalidGenome& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const EvaluationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheckFailed;
    }
    return kExitUsage;
}
