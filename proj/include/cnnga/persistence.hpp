#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "evolution.hpp"
#include "fitness.hpp"
#include "genome.hpp"

namespace cnnga {

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw Error("cannot format number");
    return std::string(buf, end);
}

inline double parse_double(std::string_view s, std::string_view what) {
    double v = 0.0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size()) {
        throw ParseError("invalid number for " + std::string(what) + ": '" + std::string(s) + "'");
    }
    return v;
}

template <class U>
U parse_unsigned(std::string_view s, std::string_view what) {
    U v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size() || s.empty()) {
        throw ParseError("invalid integer for " + std::string(what) + ": '" + std::string(s) + "'");
    }
    return v;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
    return s;
}

// ---------------------------------------------------------------------------------------------
// Run configuration

enum class EvaluatorKind { surrogate, cnn };

/// Everything a search needs. Text form: `key = value` lines, `#` comments, any order.
struct RunConfig {
    GaConfig ga;
    TrainConfig train;
    /// Directory with 0/ and 1/ subdirectories, or `synthetic:<n>:<size>`.
    std::string data = "synthetic:250:32";
    EvaluatorKind evaluator = EvaluatorKind::surrogate;
    std::string out = "run";
    /// Side length images from a directory are resized to.
    std::size_t image_size = 256;
    std::uint64_t data_seed = 0;
    double split_ratio = 0.8;

    /// Sets one entry; accepts `pop-size` and `pop_size` spellings.
    void set(std::string key, std::string_view raw) {
        for (auto& c : key) {
            if (c == '-') c = '_';
        }
        const std::string_view value = trim(raw);
        if (key == "seed") ga.master_seed = parse_unsigned<std::uint64_t>(value, key);
        else if (key == "pop_size") ga.population_size = parse_unsigned<std::size_t>(value, key);
        else if (key == "generations") ga.max_generations = parse_unsigned<std::size_t>(value, key);
        else if (key == "tournament_size") ga.tournament_size = parse_unsigned<std::size_t>(value, key);
        else if (key == "parents") ga.parents_per_generation = parse_unsigned<std::size_t>(value, key);
        else if (key == "crossover_rate") ga.crossover_rate = parse_double(value, key);
        else if (key == "lambda") ga.lambda = parse_unsigned<std::size_t>(value, key);
        else if (key == "parallel") ga.parallel = parse_unsigned<std::size_t>(value, key);
        else if (key == "epochs") train.epochs = parse_unsigned<std::size_t>(value, key);
        else if (key == "lr") train.learning_rate = parse_double(value, key);
        else if (key == "batch_size") train.batch_size = parse_unsigned<std::size_t>(value, key);
        else if (key == "data") data = std::string(value);
        else if (key == "evaluator") {
            if (value == "surrogate") evaluator = EvaluatorKind::surrogate;
            else if (value == "cnn") evaluator = EvaluatorKind::cnn;
            else throw ParseError("evaluator must be 'cnn' or 'surrogate'");
        } else if (key == "out") out = std::string(value);
        else if (key == "image_size") image_size = parse_unsigned<std::size_t>(value, key);
        else if (key == "data_seed") data_seed = parse_unsigned<std::uint64_t>(value, key);
        else if (key == "split_ratio") split_ratio = parse_double(value, key);
        else throw ParseError("unknown configuration key '" + key + "'");
    }

    void validate() const {
        ga.validate();
        train.validate();
        if (image_size < 8) throw InvalidArgument("image size must be at least 8");
        if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw InvalidArgument("split ratio must lie in (0,1)");
        if (data.empty()) throw InvalidArgument("data source must be set");
        if (out.empty()) throw InvalidArgument("output directory must be set");
    }

    /// Canonical `key = value` text; parse_config(to_text()) reproduces the config.
    std::string to_text() const {
        std::ostringstream os;
        os << "seed = " << ga.master_seed << '\n'
           << "pop_size = " << ga.population_size << '\n'
           << "generations = " << ga.max_generations << '\n'
           << "tournament_size = " << ga.tournament_size << '\n'
           << "parents = " << ga.parents_per_generation << '\n'
           << "crossover_rate = " << format_double(ga.crossover_rate) << '\n'
           << "lambda = " << ga.lambda << '\n'
           << "parallel = " << ga.parallel << '\n'
           << "epochs = " << train.epochs << '\n'
           << "lr = " << format_double(train.learning_rate) << '\n'
           << "batch_size = " << train.batch_size << '\n'
           << "data = " << data << '\n'
           << "evaluator = " << (evaluator == EvaluatorKind::cnn ? "cnn" : "surrogate") << '\n'
           << "out = " << out << '\n'
           << "image_size = " << image_size << '\n'
           << "data_seed = " << data_seed << '\n'
           << "split_ratio = " << format_double(split_ratio) << '\n';
        return os.str();
    }
};

/// Applies `key = value` lines onto `cfg` (unset keys keep their current values).
inline void apply_config_text(RunConfig& cfg, std::string_view text) {
    std::size_t line_no = 0;
    while (!text.empty()) {
        const std::size_t eol = text.find('\n');
        std::string_view line = text.substr(0, eol);
        text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ParseError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        cfg.set(std::string(trim(line.substr(0, eq))), line.substr(eq + 1));
    }
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

/// Writes through a temporary file and rename, so an interrupted write leaves the old file intact.
inline void write_text_file_atomic(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot write " + tmp.string());
        os << content;
        os.flush();
        if (!os) throw DataError("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------------------------
// History: JSON-lines, one GenerationRecord per line

inline std::string to_json_line(const GenerationRecord& r) {
    nlohmann::ordered_json j;
    j["generation"] = r.generation;
    j["best_fitness"] = r.best_fitness;
    j["mean_fitness"] = r.mean_fitness;
    j["worst_fitness"] = r.worst_fitness;
    j["best_genome_key"] = r.best_genome_key;
    j["evaluations_performed"] = r.evaluations_performed;
    return j.dump();
}

inline GenerationRecord parse_history_line(std::string_view line) {
    try {
        const auto j = nlohmann::json::parse(line);
        GenerationRecord r;
        r.generation = j.at("generation").get<std::size_t>();
        r.best_fitness = j.at("best_fitness").get<double>();
        r.mean_fitness = j.at("mean_fitness").get<double>();
        r.worst_fitness = j.at("worst_fitness").get<double>();
        r.best_genome_key = j.at("best_genome_key").get<std::string>();
        r.evaluations_performed = j.at("evaluations_performed").get<std::size_t>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed history record: ") + e.what());
    }
}

inline std::vector<GenerationRecord> read_history(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot read history " + path.string());
    std::vector<GenerationRecord> out;
    std::string line;
    while (std::getline(is, line)) {
        if (!trim(line).empty()) out.push_back(parse_history_line(line));
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Checkpoints
//
//   cnnga-checkpoint 1
//   generation <g>
//   config
//   <key = value lines>
//   end-config
//   rng <engine state>
//   population <n>
//   <16 genes> <fitness>            (n lines)
//   best <16 genes> <fitness>
//   cache <m>
//   <genome key> <fitness>          (m lines)
//   end

inline std::string checkpoint_text(const RunState& state, const RunConfig& cfg) {
    std::ostringstream os;
    os << "cnnga-checkpoint 1\n";
    os << "generation " << state.generation << '\n';
    os << "config\n" << cfg.to_text() << "end-config\n";
    os << "rng " << state.rng << '\n';
    os << "population " << state.population.size() << '\n';
    for (const auto& ind : state.population) {
        os << format_genome(ind.genome) << ' ' << format_double(ind.fitness.value()) << '\n';
    }
    os << "best " << format_genome(state.best.genome) << ' ' << format_double(state.best.fitness.value()) << '\n';
    os << "cache " << state.cache.size() << '\n';
    for (const auto& [key, f] : state.cache.entries()) os << key << ' ' << format_double(f) << '\n';
    os << "end\n";
    return os.str();
}

inline void write_checkpoint(const std::filesystem::path& path, const RunState& state, const RunConfig& cfg) {
    write_text_file_atomic(path, checkpoint_text(state, cfg));
}

struct Checkpoint {
    RunConfig config;
    RunState state;
};

inline Checkpoint parse_checkpoint(std::string_view text) {
    std::vector<std::string_view> lines;
    while (!text.empty()) {
        const std::size_t eol = text.find('\n');
        lines.push_back(text.substr(0, eol));
        text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    }
    std::size_t at = 0;
    auto next = [&]() -> std::string_view {
        if (at >= lines.size()) throw CheckpointError("checkpoint truncated");
        return lines[at++];
    };
    auto expect_prefix = [&](std::string_view line, std::string_view prefix) {
        if (line.substr(0, prefix.size()) != prefix) {
            throw CheckpointError("checkpoint: expected '" + std::string(prefix) + "', found '" + std::string(line) + "'");
        }
        return trim(line.substr(prefix.size()));
    };
    auto individual = [&](std::string_view line) {
        const auto last_space = line.rfind(' ');
        if (last_space == std::string_view::npos) throw CheckpointError("checkpoint: malformed individual");
        Individual ind;
        ind.genome = parse_genome(line.substr(0, last_space));
        ind.fitness = parse_double(trim(line.substr(last_space + 1)), "fitness");
        return ind;
    };

    Checkpoint cp;
    try {
        if (trim(next()) != "cnnga-checkpoint 1") throw CheckpointError("not a checkpoint file");
        cp.state.generation = parse_unsigned<std::size_t>(expect_prefix(next(), "generation "), "generation");
        if (trim(next()) != "config") throw CheckpointError("checkpoint: missing config block");
        std::string config_text;
        for (std::string_view line = next(); trim(line) != "end-config"; line = next()) {
            config_text.append(line).push_back('\n');
        }
        apply_config_text(cp.config, config_text);
        cp.config.validate();
        cp.state.config = cp.config.ga;

        std::istringstream rng_text(std::string(expect_prefix(next(), "rng ")));
        rng_text >> cp.state.rng;
        if (!rng_text) throw CheckpointError("checkpoint: malformed rng state");

        const auto n = parse_unsigned<std::size_t>(expect_prefix(next(), "population "), "population");
        if (n != cp.config.ga.population_size) throw CheckpointError("checkpoint: population size mismatch");
        for (std::size_t i = 0; i < n; ++i) cp.state.population.push_back(individual(next()));
        cp.state.best = individual(expect_prefix(next(), "best "));
        const auto m = parse_unsigned<std::size_t>(expect_prefix(next(), "cache "), "cache");
        for (std::size_t i = 0; i < m; ++i) {
            const std::string_view line = next();
            const auto sp = line.find(' ');
            if (sp == std::string_view::npos) throw CheckpointError("checkpoint: malformed cache entry");
            cp.state.cache.insert(std::string(line.substr(0, sp)), parse_double(trim(line.substr(sp + 1)), "cache"));
        }
        if (trim(next()) != "end") throw CheckpointError("checkpoint: missing end marker");
    } catch (const CheckpointError&) {
        throw;
    } catch (const Error& e) {
        throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
    }
    if (cp.state.generation > cp.config.ga.max_generations) throw CheckpointError("checkpoint beyond configured run");
    return cp;
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) throw CheckpointError("checkpoint not found: " + path.string());
    return parse_checkpoint(read_text_file(path));
}

// ---------------------------------------------------------------------------------------------
// Best-genome file: genome line, decoded spec, fitness.

inline std::string best_genome_text(const Individual& best, const SearchSpace& space) {
    std::ostringstream os;
    os << format_genome(best.genome) << '\n' << to_text(decode(best.genome, space));
    os << "fitness " << format_double(best.fitness.value_or(0.0)) << '\n';
    return os.str();
}

} // namespace cnnga
