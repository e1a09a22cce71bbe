#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dcppd/metrics.hpp"
#include "dcppd/questions.hpp"

namespace dcppd::evalproto {

constexpr int kExtractorVersion = 1;
constexpr int kPromptTemplateVersion = 1;

struct ExtractionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct AlignmentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct AnswerFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// strict: any sentence outside the grammar raises ExtractionError (used for
// reference reports, where the grammar is exact by construction).
// lenient: unknown sentences assert nothing and are counted (used for
// model-generated text).
enum class ExtractMode { strict, lenient };

struct Extraction {
    LabelVector qs1, qs2, qs3;
    int unparsed_sentences = 0;

    const LabelVector& get(QuestionSetId id) const {
        switch (id) {
            case QuestionSetId::QS1: return qs1;
            case QuestionSetId::QS2: return qs2;
            default: return qs3;
        }
    }
};

Extraction extract_all(const std::string& report_text, const QuestionCatalog& cat,
                       ExtractMode mode = ExtractMode::strict);
LabelVector extract_answers(const std::string& report_text, const QuestionSet& qs,
                            const QuestionCatalog& cat, ExtractMode mode = ExtractMode::strict);

// --- remote extractor ------------------------------------------------------

class QAClient {
public:
    virtual ~QAClient() = default;
    // true = yes. Transport problems raise TransportError; answers that do
    // not normalize to yes/no raise AnswerFormatError. Never a silent default.
    virtual bool ask(const std::string& report, const std::string& question) = 0;

    static std::string prompt_text(const std::string& report, const std::string& question);
};

struct HttpQAClientConfig {
    std::string endpoint;  // e.g. http://127.0.0.1:8099/qa; falls back to DCPPD_QA_ENDPOINT
    int timeout_sec = 10;
    int retries = 0;
};

std::unique_ptr<QAClient> make_http_qa_client(const HttpQAClientConfig& cfg);

Extraction extract_remote(const std::string& report_text, const QuestionCatalog& cat,
                          QAClient& client);

// --- reference-answer cache --------------------------------------------------

std::uint64_t extractor_fingerprint(const QuestionCatalog& cat);

class AnswerCache {
public:
    explicit AnswerCache(std::uint64_t fingerprint) : fingerprint_(fingerprint) {}

    std::uint64_t fingerprint() const { return fingerprint_; }
    long parse_count() const { return parse_count_; }
    std::size_t size() const { return entries_.size(); }

    const Extraction* find(const std::string& id) const;
    const Extraction& get_or_parse(const std::string& id, const std::string& report_text,
                                   const QuestionCatalog& cat);

    void save(const std::filesystem::path& path) const;
    // entries are kept only when the stored fingerprint matches
    static AnswerCache load(const std::filesystem::path& path, std::uint64_t expected_fingerprint);

private:
    std::uint64_t fingerprint_;
    std::map<std::string, Extraction> entries_;
    long parse_count_ = 0;
};

// --- agreement / hierarchy ----------------------------------------------------

// (id, text) lists aligned by position; mismatching ids raise
// AlignmentError. Reference answers come from the cache (strict parse);
// candidates are parsed leniently.
metrics::MetricsReport agreement_metrics(
    const std::vector<std::pair<std::string, std::string>>& generated,
    const std::vector<std::pair<std::string, std::string>>& reference, const QuestionSet& qs,
    const QuestionCatalog& cat, AnswerCache& cache);

struct HierarchyReport {
    struct Row {
        FindingKind kind;
        double f1_presence = 0.0;
        double f1_laterality = 0.0;
        double f1_lobe = 0.0;  // NaN for findings without lobar questions
        double delta_presence_laterality = 0.0;
        double delta_laterality_lobe = 0.0;
        bool has_lobe_level = false;
    };
    std::vector<Row> rows;  // QS1 question order
    double consistency_rate = 1.0;
};

HierarchyReport hierarchy_analysis(const metrics::MetricsReport& qs1,
                                   const metrics::MetricsReport& qs2,
                                   const metrics::MetricsReport& qs3,
                                   const std::vector<Extraction>& generated_labels,
                                   const QuestionCatalog& cat);

// --- lexical -----------------------------------------------------------------

struct BleuResult {
    double value = 0.0;
    bool empty_candidate = false;
};

// Arithmetic mean of cumulative BLEU-1..4 with clipped n-gram precision and
// the standard brevity penalty; a zero n-gram precision zeroes that BLEU-n.
BleuResult bleu_mean(const std::vector<int>& candidate, const std::vector<int>& reference);

}  // namespace dcppd::evalproto
