// End-to-end checks of the command-line tool.

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <cnnga/persistence.hpp>

#ifndef CNNGA_CLI_PATH
#error "CNNGA_CLI_PATH must point at the cnnga executable"
#endif

using namespace cnnga;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
};

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               (std::string("cnnga_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    Outcome run(const std::string& args) const {
        const fs::path log = dir_ / "stdout.txt";
        const std::string cmd = std::string("cd '") + dir_.string() + "' && '" + CNNGA_CLI_PATH + "' " + args + " > '" +
                                log.string() + "' 2> '" + (dir_ / "stderr.txt").string() + "'";
        const int status = std::system(cmd.c_str());
        Outcome o;
        o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        o.out = slurp(log);
        return o;
    }

    static std::string slurp(const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        std::ostringstream ss;
        ss << is.rdbuf();
        return ss.str();
    }

    static std::size_t line_count(const std::string& s) {
        return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
    }

    fs::path dir_;
};

}  // namespace

TEST_F(Cli, SearchWritesRunDirectory) {
    const auto o = run("search --pop-size 12 --parents 4 --generations 6 --seed 3 --out r");
    ASSERT_EQ(o.code, 0);
    for (const char* f : {"config.txt", "history.jsonl", "checkpoint.txt", "best_genome.txt"}) {
        EXPECT_TRUE(fs::exists(dir_ / "r" / f)) << f;
    }
    const auto history = read_history(dir_ / "r" / "history.jsonl");
    ASSERT_EQ(history.size(), 7u);
    for (std::size_t i = 1; i < history.size(); ++i) EXPECT_GE(history[i].best_fitness, history[i - 1].best_fitness);
    const auto best = slurp(dir_ / "r" / "best_genome.txt");
    EXPECT_NO_THROW(parse_genome(best.substr(0, best.find('\n'))));
    EXPECT_NE(best.find("head in="), std::string::npos);
}

TEST_F(Cli, ZeroGenerationsGivesOneRecord) {
    ASSERT_EQ(run("search --generations 0 --out r").code, 0);
    EXPECT_EQ(line_count(slurp(dir_ / "r" / "history.jsonl")), 1u);
}

TEST_F(Cli, RerunIsByteIdentical) {
    ASSERT_EQ(run("search --generations 25 --seed 11 --out a").code, 0);
    ASSERT_EQ(run("search --generations 25 --seed 11 --out b --parallel 3").code, 0);
    EXPECT_EQ(slurp(dir_ / "a" / "history.jsonl"), slurp(dir_ / "b" / "history.jsonl"));
    ASSERT_EQ(run("search --generations 25 --seed 11 --out a").code, 0);
    EXPECT_EQ(slurp(dir_ / "a" / "history.jsonl"), slurp(dir_ / "b" / "history.jsonl"));
}

TEST_F(Cli, FlagsOverrideConfigFile) {
    std::ofstream(dir_ / "exp.cfg") << "# sweep\npop_size = 30\ngenerations = 3\nseed = 4\n";
    ASSERT_EQ(run("search --config exp.cfg --pop-size 20 --out r").code, 0);
    RunConfig echoed;
    apply_config_text(echoed, slurp(dir_ / "r" / "config.txt"));
    EXPECT_EQ(echoed.ga.population_size, 20u);
    EXPECT_EQ(echoed.ga.max_generations, 3u);
    EXPECT_EQ(echoed.ga.master_seed, 4u);
    EXPECT_EQ(line_count(slurp(dir_ / "r" / "history.jsonl")), 4u);
}

TEST_F(Cli, UsageErrors) {
    EXPECT_EQ(run("search --pop-size 3 --out r").code, 2);
    EXPECT_EQ(run("search --pop-size many").code, 2);
    EXPECT_EQ(run("search --evaluator quantum").code, 2);
    std::ofstream(dir_ / "bad.cfg") << "population = 5\n";
    EXPECT_EQ(run("search --config bad.cfg").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("eval-genome '0 0 0'").code, 2);
    EXPECT_EQ(run("eval-genome '0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 9'").code, 2);
}

TEST_F(Cli, InterruptAndResume) {
    ASSERT_EQ(run("search --generations 30 --seed 8 --out full").code, 0);
    EXPECT_EQ(run("search --generations 30 --seed 8 --out part --halt-after 12").code, 130);
    EXPECT_EQ(line_count(slurp(dir_ / "part" / "history.jsonl")), 13u);
    EXPECT_FALSE(fs::exists(dir_ / "part" / "best_genome.txt"));
    // A stray record past the checkpoint (e.g., killed mid-write) is dropped on resume.
    std::ofstream(dir_ / "part" / "history.jsonl", std::ios::app) << "{\"generation\":13}\n";
    ASSERT_EQ(run("resume part/checkpoint.txt").code, 0);
    EXPECT_EQ(slurp(dir_ / "part" / "history.jsonl"), slurp(dir_ / "full" / "history.jsonl"));
    EXPECT_EQ(slurp(dir_ / "part" / "best_genome.txt"), slurp(dir_ / "full" / "best_genome.txt"));

    const auto before = slurp(dir_ / "part" / "history.jsonl");
    EXPECT_EQ(run("resume part/checkpoint.txt").code, 0);
    EXPECT_EQ(slurp(dir_ / "part" / "history.jsonl"), before);
}

TEST_F(Cli, CheckpointErrors) {
    EXPECT_EQ(run("resume nowhere/checkpoint.txt").code, 4);
    fs::create_directories(dir_ / "r");
    std::ofstream(dir_ / "r" / "checkpoint.txt") << "cnnga-checkpoint 1\ngeneration x\n";
    EXPECT_EQ(run("resume r/checkpoint.txt").code, 4);
}

TEST_F(Cli, GenDataAndEvalGenome) {
    ASSERT_EQ(run("gen-data --n 12 --size 8 --seed 2 --out data").code, 0);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir_ / "data")) files += e.is_regular_file();
    EXPECT_EQ(files, 12u);
    const auto o = run("eval-genome '0 0 0 0 0 0 0 0 0 0 0 0 2 2 0 0' --data data --image-size 8 --epochs 2");
    ASSERT_EQ(o.code, 0);
    const auto json = nlohmann::json::parse(o.out.substr(o.out.find('{')));
    EXPECT_EQ(json.at("loss_trace").size(), 2u);
    const double acc = json.at("validation_accuracy").get<double>();
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
    EXPECT_NE(o.out.find("conv4 in=32 out=32"), std::string::npos);
}

TEST_F(Cli, DataErrors) {
    EXPECT_EQ(run("eval-genome '0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0' --data missing_dir --image-size 8").code, 3);
    fs::create_directories(dir_ / "empty" / "0");
    fs::create_directories(dir_ / "empty" / "1");
    EXPECT_EQ(run("search --evaluator cnn --data empty --image-size 8 --out r").code, 3);
}

TEST_F(Cli, GradCheckPasses) {
    const auto o = run("grad-check");
    EXPECT_EQ(o.code, 0);
    EXPECT_EQ(o.out.find("FAILED"), std::string::npos);
    EXPECT_NE(o.out.find("network"), std::string::npos);
}

TEST_F(Cli, ReportTableAndCsv) {
    ASSERT_EQ(run("search --generations 10 --out r").code, 0);
    const auto history_before = slurp(dir_ / "r" / "history.jsonl");
    const auto o = run("report r/history.jsonl");
    ASSERT_EQ(o.code, 0);
    EXPECT_EQ(line_count(o.out), 12u);
    EXPECT_EQ(slurp(dir_ / "r" / "history.jsonl"), history_before);
    const auto csv = slurp(dir_ / "r" / "fitness_curves.csv");
    EXPECT_EQ(csv.rfind("generation,best_fitness,mean_fitness,worst_fitness\n", 0), 0u);
    EXPECT_EQ(line_count(csv), 12u);
    EXPECT_EQ(run("report r/history.jsonl --csv curves.csv").code, 0);
    EXPECT_TRUE(fs::exists(dir_ / "curves.csv"));
}

TEST_F(Cli, ReportAcrossPopulationSizes) {
    ASSERT_EQ(run("search --pop-size 20 --generations 5 --seed 1 --out p20a").code, 0);
    ASSERT_EQ(run("search --pop-size 20 --generations 5 --seed 2 --out p20b").code, 0);
    ASSERT_EQ(run("search --pop-size 30 --generations 5 --seed 1 --out p30").code, 0);
    const auto o = run("report --across p20a p20b p30");
    ASSERT_EQ(o.code, 0);
    EXPECT_NE(o.out.find("GA, N_p=30"), std::string::npos);
    EXPECT_NE(o.out.find("GA, N_p=20"), std::string::npos);
    EXPECT_LT(o.out.find("N_p=30"), o.out.find("N_p=20"));
}
