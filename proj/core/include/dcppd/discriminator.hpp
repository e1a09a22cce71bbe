#pragma once

#include <filesystem>
#include <vector>

#include "dcppd/metrics.hpp"
#include "dcppd/questions.hpp"
#include "dcppd/tape.hpp"

namespace dcppd::probe {

struct OptimConfig {
    double lr = 1e-3;
    int epochs = 400;  // full-batch steps; the production preset is 1000
    std::uint64_t seed = 0;
};

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Multi-label linear probe over a frozen embedding.
class LinearProbe {
public:
    LinearProbe() = default;
    LinearProbe(QuestionSetId qs, std::int64_t classes, std::int64_t embed_dim,
                std::uint64_t seed);
    LinearProbe(const LinearProbe& o) { *this = o; }
    LinearProbe& operator=(const LinearProbe& o);

    QuestionSetId qs = QuestionSetId::QS1;
    Parameter weights;            // [C x E]
    Parameter bias;               // [C]
    Tensor thresholds;            // [C], decision rule is score >= threshold
    std::vector<std::uint8_t> trained_class;  // 0 = excluded (no positives)

    std::int64_t classes() const { return weights.value.rows(); }
    std::int64_t embed_dim() const { return weights.value.cols(); }
    ParamSet& params() { return params_; }

    void save(const std::filesystem::path& path) const;
    static LinearProbe load(const std::filesystem::path& path);

private:
    void register_params();
    ParamSet params_;
};

struct PosWeights {
    Tensor weight;                      // [C], N_neg / N_pos; 1 for excluded classes
    Tensor class_mask;                  // [C], 0 drops the class from the loss
    std::vector<std::uint8_t> flagged;  // classes with no positives
};

// Exact integer-count ratio per class, computed on the training labels.
PosWeights compute_pos_weights(const std::vector<LabelVector>& labels);

// Full-batch Adam on class-weighted BCE over frozen embeddings.
// embeddings: [N x E]; labels: one LabelVector per row.
LinearProbe train_probe(const Tensor& embeddings, const std::vector<LabelVector>& labels,
                        const QuestionSet& qs, const OptimConfig& opt);

struct Prediction {
    LabelVector labels;
    std::vector<double> scores;
};

// scores = sigmoid(W x + b); label = score >= threshold (ties predict 1)
Prediction predict(const LinearProbe& probe, const Tensor& embedding);

metrics::MetricsReport evaluate_probe(const LinearProbe& probe, const Tensor& embeddings,
                                      const std::vector<LabelVector>& gt, const QuestionSet& qs);

// Emulates an external classifier of configurable quality by flipping each
// ground-truth entry independently at its class rate.
LabelVector simulate_cue_source(const LabelVector& gt, const std::vector<double>& flip_rates,
                                std::uint64_t seed);

}  // namespace dcppd::probe
