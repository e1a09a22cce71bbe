#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dcppd/questions.hpp"

namespace dcppd::metrics {

struct Confusion {
    long tp = 0, fp = 0, fn = 0, tn = 0;
};

// P = TP/(TP+FP), R = TP/(TP+FN), F1 = harmonic mean; all 0 when the
// denominator is 0.
double precision(const Confusion& c);
double recall(const Confusion& c);
double f1(const Confusion& c);

struct QuestionMetrics {
    std::string question;
    Confusion counts;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    std::optional<double> auroc;  // absent when the question has no positives
    long support = 0;             // ground-truth positives
};

struct MetricsReport {
    QuestionSetId qs;
    std::vector<QuestionMetrics> per_question;
    // macro averages over questions with at least one ground-truth positive
    double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
    std::optional<double> macro_auroc;
    int macro_count = 0;  // questions included in the macros
};

// Mann-Whitney rank AUROC with midrank tie handling; nullopt when either
// class is empty.
std::optional<double> auroc(const std::vector<double>& scores,
                            const std::vector<std::uint8_t>& labels);

// preds/refs: one LabelVector per sample; scores (optional, may be empty):
// per sample per question, enables AUROC.
MetricsReport evaluate_binary(const QuestionSet& qs, const std::vector<LabelVector>& preds,
                              const std::vector<LabelVector>& refs,
                              const std::vector<std::vector<double>>& scores = {});

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // unbiased (n-1)
};

// throws std::invalid_argument with fewer than 2 values
MeanStd mean_std(const std::vector<double>& values);

}  // namespace dcppd::metrics
