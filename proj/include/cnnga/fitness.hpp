#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dataio.hpp"
#include "errors.hpp"
#include "genome.hpp"
#include "network.hpp"
#include "random.hpp"

namespace cnnga {

struct TrainConfig {
    std::size_t epochs = 20;
    double learning_rate = 0.0005;
    std::size_t batch_size = 16;

    void validate() const {
        if (epochs == 0) throw InvalidArgument("epochs must be positive");
        if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
        if (batch_size == 0) throw InvalidArgument("batch size must be positive");
    }
};

/// Class weight N / (2 m) kept as an exact fraction.
struct ClassWeight {
    std::int64_t numerator = 1;
    std::int64_t denominator = 1;

    double value() const noexcept { return static_cast<double>(numerator) / static_cast<double>(denominator); }

    friend bool operator==(const ClassWeight&, const ClassWeight&) = default;
};

/// W_i = N / (2 m_i) for each class i, N the label count and m_i the class size.
inline std::vector<ClassWeight> class_weights(std::span<const int> labels, int num_classes = 2) {
    if (num_classes < 1) throw InvalidArgument("need at least one class");
    std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
    for (int y : labels) {
        if (y < 0 || y >= num_classes) throw DataError("label " + std::to_string(y) + " outside class range");
        ++counts[static_cast<std::size_t>(y)];
    }
    const auto n = static_cast<std::int64_t>(labels.size());
    std::vector<ClassWeight> out;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] == 0) throw DataError("class " + std::to_string(i) + " has no samples; its weight is undefined");
        const std::int64_t den = 2 * counts[i];
        const std::int64_t g = std::gcd(n, den);
        out.push_back({n / g, den / g});
    }
    return out;
}

struct EvaluationReport {
    std::string genome_key;
    double validation_accuracy = 0.0;
    std::vector<double> loss_trace;  // mean training loss per epoch
    double wall_seconds = 0.0;
    bool diverged = false;
};

inline nlohmann::json to_json(const EvaluationReport& r) {
    return {{"genome_key", r.genome_key},
            {"validation_accuracy", r.validation_accuracy},
            {"loss_trace", r.loss_trace},
            {"wall_seconds", r.wall_seconds},
            {"diverged", r.diverged}};
}

/// Fitness contract: a genome (plus its private seed) maps to a value in [0,1], deterministically.
class FitnessEvaluator {
public:
    virtual ~FitnessEvaluator() = default;
    virtual double evaluate(const Genome& genome, std::uint64_t seed) const = 0;
};

/// Normalized gene-index sum; 1 only at the all-max-index genome.
inline double surrogate_eval(const Genome& g, const SearchSpace& space) {
    validate(g, space);
    double total = 0.0;
    for (std::size_t i = 0; i < kGenomeLength; ++i) {
        const std::size_t span = space.alphabet_size(i) - 1;
        // Single-valued alphabets are pinned at their only value, which is also their maximum.
        total += span == 0 ? 1.0 : static_cast<double>(g[i]) / static_cast<double>(span);
    }
    return total / static_cast<double>(kGenomeLength);
}

class SurrogateEvaluator final : public FitnessEvaluator {
public:
    explicit SurrogateEvaluator(SearchSpace space) : space_(std::move(space)) {}
    double evaluate(const Genome& genome, std::uint64_t) const override { return surrogate_eval(genome, space_); }

private:
    SearchSpace space_;
};

/// Fraction of records whose argmax class matches the label; ties go to class 0.
inline double accuracy(std::span<const int> predicted, std::span<const int> labels) {
    if (predicted.size() != labels.size() || labels.empty()) throw InvalidArgument("accuracy: size mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Eval-mode argmax predictions over `records`, batch by batch.
inline std::vector<int> predict(nn::Network<float>& net, std::span<const data::ImageRecord> records,
                                std::size_t batch_size) {
    net.set_mode(nn::Mode::eval);
    std::vector<int> out;
    out.reserve(records.size());
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < records.size(); start += batch_size) {
        idx.clear();
        for (std::size_t i = start; i < std::min(records.size(), start + batch_size); ++i) idx.push_back(i);
        auto b = data::BatchPlan::make_batch<float>(records, idx);
        const Tensor<float> p = net.forward(b.x);
        for (std::size_t n = 0; n < idx.size(); ++n) out.push_back(p(n, 1) > p(n, 0) ? 1 : 0);
    }
    return out;
}

/// Trains the decoded network on the training split and scores it on the validation split.
/// Network init, shuffling and dropout all derive from `seed`. A non-finite loss marks the
/// phenotype as diverged with accuracy 0.
inline EvaluationReport evaluate_cnn(const Genome& genome, const SearchSpace& space, const data::SplitDataset& dataset,
                                     const TrainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (dataset.train.empty() || dataset.val.empty()) throw DataError("train and validation splits must be non-empty");
    const auto start = std::chrono::steady_clock::now();
    EvaluationReport report;
    report.genome_key = genome_key(genome);

    std::vector<int> train_labels;
    train_labels.reserve(dataset.train.size());
    for (const auto& r : dataset.train) train_labels.push_back(r.label);
    const auto weights = class_weights(train_labels);
    const std::vector<float> w{static_cast<float>(weights[0].value()), static_cast<float>(weights[1].value())};

    nn::Network<float> net(decode(genome, space), derive_seed(seed, "network"));
    nn::Adam<float> adam;
    for (std::size_t epoch = 0; epoch < cfg.epochs && !report.diverged; ++epoch) {
        const auto plan = data::batches(dataset.train, cfg.batch_size, derive_seed(seed, 1000 + epoch));
        double sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t b = 0; b < plan.size(); ++b) {
            const auto batch = plan.batch<float>(b);
            float loss;
            try {
                loss = net.train_batch(batch.x, batch.y, w, adam, cfg.learning_rate);
            } catch (const NumericError&) {
                report.diverged = true;
                break;
            }
            if (!std::isfinite(loss)) {
                report.diverged = true;
                break;
            }
            sum += static_cast<double>(loss) * static_cast<double>(batch.y.size());
            seen += batch.y.size();
        }
        report.loss_trace.push_back(seen ? sum / static_cast<double>(seen) : std::nan(""));
    }

    if (!report.diverged) {
        try {
            std::vector<int> labels;
            for (const auto& r : dataset.val) labels.push_back(r.label);
            report.validation_accuracy = accuracy(predict(net, dataset.val, cfg.batch_size), labels);
        } catch (const NumericError&) {
            report.diverged = true;
        }
    }
    if (report.diverged) report.validation_accuracy = 0.0;
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

/// CNN-training evaluator over a fixed split. Reports go to an optional sink, one call per evaluation.
class CnnEvaluator final : public FitnessEvaluator {
public:
    using ReportSink = std::function<void(const EvaluationReport&)>;

    CnnEvaluator(SearchSpace space, const data::SplitDataset& dataset, TrainConfig cfg, ReportSink sink = {})
        : space_(std::move(space)), dataset_(dataset), cfg_(cfg), sink_(std::move(sink)) {
        cfg_.validate();
    }

    double evaluate(const Genome& genome, std::uint64_t seed) const override {
        const EvaluationReport r = evaluate_cnn(genome, space_, dataset_, cfg_, seed);
        if (sink_) {
            std::lock_guard lock(sink_mutex_);
            sink_(r);
        }
        return r.validation_accuracy;
    }

private:
    SearchSpace space_;
    const data::SplitDataset& dataset_;
    TrainConfig cfg_;
    ReportSink sink_;
    mutable std::mutex sink_mutex_;
};

} // namespace cnnga
