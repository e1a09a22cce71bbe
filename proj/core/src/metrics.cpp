#include "dcppd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dcppd::metrics {

double precision(const Confusion& c) {
    const long d = c.tp + c.fp;
    return d == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(d);
}

double recall(const Confusion& c) {
    const long d = c.tp + c.fn;
    return d == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(d);
}

double f1(const Confusion& c) {
    const double p = precision(c), r = recall(c);
    return (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

std::optional<double> auroc(const std::vector<double>& scores,
                            const std::vector<std::uint8_t>& labels) {
    const std::size_t n = scores.size();
    if (labels.size() != n) throw std::invalid_argument("auroc: size mismatch");
    long n_pos = 0;
    for (auto l : labels) n_pos += l ? 1 : 0;
    const long n_neg = static_cast<long>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // midranks over tied scores
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }

    double rank_sum_pos = 0.0;
    for (std::size_t k = 0; k < n; ++k)
        if (labels[k]) rank_sum_pos += rank[k];
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1.0);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MetricsReport evaluate_binary(const QuestionSet& qs, const std::vector<LabelVector>& preds,
                              const std::vector<LabelVector>& refs,
                              const std::vector<std::vector<double>>& scores) {
    if (preds.size() != refs.size())
        throw std::invalid_argument("evaluate_binary: sample count mismatch");
    const int C = qs.arity();
    MetricsReport rep;
    rep.qs = qs.id;
    rep.per_question.resize(C);

    for (int q = 0; q < C; ++q) {
        QuestionMetrics& m = rep.per_question[q];
        m.question = qs.questions[q];
        std::vector<double> s;
        std::vector<std::uint8_t> y;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            if (preds[i].arity() != C || refs[i].arity() != C)
                throw std::invalid_argument("evaluate_binary: label arity mismatch");
            const bool p = preds[i].values[q] != 0, r = refs[i].values[q] != 0;
            if (p && r) ++m.counts.tp;
            else if (p && !r) ++m.counts.fp;
            else if (!p && r) ++m.counts.fn;
            else ++m.counts.tn;
            if (!scores.empty()) {
                s.push_back(scores[i][q]);
                y.push_back(r ? 1 : 0);
            }
        }
        m.precision = precision(m.counts);
        m.recall = recall(m.counts);
        m.f1 = f1(m.counts);
        m.support = m.counts.tp + m.counts.fn;
        if (!scores.empty()) m.auroc = auroc(s, y);
    }

    double sp = 0, sr = 0, sf = 0, sa = 0;
    int n = 0, na = 0;
    for (const auto& m : rep.per_question) {
        if (m.support == 0) continue;  // unevaluable question, omitted from macros
        sp += m.precision;
        sr += m.recall;
        sf += m.f1;
        ++n;
        if (m.auroc) {
            sa += *m.auroc;
            ++na;
        }
    }
    rep.macro_count = n;
    if (n > 0) {
        rep.macro_precision = sp / n;
        rep.macro_recall = sr / n;
        rep.macro_f1 = sf / n;
    }
    if (na > 0) rep.macro_auroc = sa / na;
    return rep;
}

MeanStd mean_std(const std::vector<double>& values) {
    if (values.size() < 2)
        throw std::invalid_argument("mean_std: need at least 2 values, got " +
                                    std::to_string(values.size()));
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

}  // namespace dcppd::metrics
