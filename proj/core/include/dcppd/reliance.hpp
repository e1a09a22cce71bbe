#pragma once

#include <filesystem>
#include <stdexcept>
#include <vector>

#include "dcppd/metrics.hpp"
#include "dcppd/tensor.hpp"

namespace dcppd::rel {

struct RegionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegenerateTraceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Per-step attention over the prompt positions, averaged over all heads
// and layers and renormalized over the prompt, so each row sums to 1.
struct AttentionTrace {
    Tensor steps;               // [T x S]
    std::vector<int> r_text;    // cue-token positions
    std::vector<int> r_image;   // image-token positions

    std::int64_t step_count() const { return steps.rows(); }
    std::int64_t prompt_len() const { return steps.cols(); }
};

// (1/T) sum_t (1/|R|) sum_{i in R} a_t(i)
double region_mass(const AttentionTrace& trace, const std::vector<int>& region);

struct RelianceResult {
    double m_text = 0.0, m_image = 0.0;
    double s_text = 0.0, s_image = 0.0;
};

RelianceResult reliance_scores(double m_text, double m_image);
RelianceResult trace_reliance(const AttentionTrace& trace);

// mean +/- unbiased std of S_text over a set of traces (>= 2)
metrics::MeanStd reliance_report(const std::vector<double>& s_text_values);

// Trace file: "DCPA", u32 version, u64 header length, JSON header with the
// region index sets, then float32 [T x S].
void save_trace(const std::filesystem::path& path, const AttentionTrace& trace);
AttentionTrace load_trace(const std::filesystem::path& path);

}  // namespace dcppd::rel
