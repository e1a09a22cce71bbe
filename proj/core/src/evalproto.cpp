#include "dcppd/evalproto.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>

#include "dcppd/report_grammar.hpp"
#include "dcppd/serialize.hpp"
#include "dcppd/tape.hpp"

// httplib pulls in resolver headers whose macros collide with Eigen
// internals, so it must come after anything that includes Eigen
#include "httplib.h"
#include "json.hpp"

namespace dcppd::evalproto {

Extraction extract_all(const std::string& report_text, const QuestionCatalog& cat,
                       ExtractMode mode) {
    Extraction out;
    out.qs1 = zero_labels(QuestionSetId::QS1, cat.qs1.arity());
    out.qs2 = zero_labels(QuestionSetId::QS2, cat.qs2.arity());
    out.qs3 = zero_labels(QuestionSetId::QS3, cat.qs3.arity());

    for (const auto& sentence : grammar::split_sentences(report_text)) {
        const auto fact = grammar::parse_sentence(sentence);
        if (!fact) {
            if (mode == ExtractMode::strict)
                throw ExtractionError("unparseable sentence: \"" + sentence + "\"");
            ++out.unparsed_sentences;
            continue;
        }
        if (!fact->positive) continue;  // negations assert nothing beyond the default
        const int q1 = qs1_index(cat.qs1, fact->kind);
        if (q1 >= 0) out.qs1.values[q1] = 1;
        if (fact->side) out.qs2.values[qs2_index(fact->kind, *fact->side)] = 1;
        if (fact->lobe) out.qs3.values[qs3_index(fact->kind, *fact->lobe)] = 1;
    }
    return out;
}

LabelVector extract_answers(const std::string& report_text, const QuestionSet& qs,
                            const QuestionCatalog& cat, ExtractMode mode) {
    return extract_all(report_text, cat, mode).get(qs.id);
}

// --- remote extractor ---------------------------------------------------------

std::string QAClient::prompt_text(const std::string& report, const std::string& question) {
    return "Based on the following radiology report:\n" + report + "\n\n" + question +
           " Answer Yes or No only.";
}

namespace {

std::string trim_lower(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    const auto e = s.find_last_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    s = s.substr(b, e - b + 1);
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

struct UrlParts {
    std::string host_port;  // scheme://host:port
    std::string path;
};

UrlParts split_endpoint(const std::string& endpoint) {
    const auto scheme = endpoint.find("://");
    if (scheme == std::string::npos)
        throw ConfigError("QA endpoint must look like http://host:port/path, got: " + endpoint);
    const auto slash = endpoint.find('/', scheme + 3);
    if (slash == std::string::npos) return {endpoint, "/"};
    return {endpoint.substr(0, slash), endpoint.substr(slash)};
}

class HttpQAClient final : public QAClient {
public:
    explicit HttpQAClient(HttpQAClientConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.endpoint.empty()) {
            const char* env = std::getenv("DCPPD_QA_ENDPOINT");
            if (env != nullptr) cfg_.endpoint = env;
        }
        if (cfg_.endpoint.empty())
            throw ConfigError(
                "no QA endpoint configured (set qa_endpoint or DCPPD_QA_ENDPOINT)");
        parts_ = split_endpoint(cfg_.endpoint);
    }

    bool ask(const std::string& report, const std::string& question) override {
        nlohmann::ordered_json req;
        req["report"] = report;
        req["question"] = question;
        req["template_version"] = kPromptTemplateVersion;
        const std::string body = req.dump();

        std::string last_error;
        for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
            httplib::Client cli(parts_.host_port);
            cli.set_connection_timeout(cfg_.timeout_sec, 0);
            cli.set_read_timeout(cfg_.timeout_sec, 0);
            auto res = cli.Post(parts_.path, body, "application/json");
            if (!res) {
                last_error = "transport failure contacting " + cfg_.endpoint;
                continue;
            }
            if (res->status != 200) {
                last_error = "QA endpoint returned status " + std::to_string(res->status);
                continue;
            }
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(res->body);
            } catch (const std::exception&) {
                throw AnswerFormatError("QA response is not JSON: " + res->body);
            }
            if (!j.contains("answer"))
                throw AnswerFormatError("QA response missing 'answer': " + res->body);
            const std::string a = trim_lower(j.at("answer").get<std::string>());
            if (a == "yes") return true;
            if (a == "no") return false;
            throw AnswerFormatError("QA answer does not normalize to yes/no: '" +
                                    j.at("answer").get<std::string>() + "'");
        }
        throw TransportError(last_error.empty() ? "QA request failed" : last_error);
    }

private:
    HttpQAClientConfig cfg_;
    UrlParts parts_;
};

}  // namespace

std::unique_ptr<QAClient> make_http_qa_client(const HttpQAClientConfig& cfg) {
    return std::make_unique<HttpQAClient>(cfg);
}

Extraction extract_remote(const std::string& report_text, const QuestionCatalog& cat,
                          QAClient& client) {
    Extraction out;
    out.qs1 = zero_labels(QuestionSetId::QS1, cat.qs1.arity());
    out.qs2 = zero_labels(QuestionSetId::QS2, cat.qs2.arity());
    out.qs3 = zero_labels(QuestionSetId::QS3, cat.qs3.arity());
    auto fill = [&](const QuestionSet& qs, LabelVector& lv) {
        for (int i = 0; i < qs.arity(); ++i)
            lv.values[i] = client.ask(report_text, qs.questions[i]) ? 1 : 0;
    };
    fill(cat.qs1, out.qs1);
    fill(cat.qs2, out.qs2);
    fill(cat.qs3, out.qs3);
    return out;
}

// --- cache ---------------------------------------------------------------------

std::uint64_t extractor_fingerprint(const QuestionCatalog& cat) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const int v = kExtractorVersion;
    h = fnv1a_bytes(&v, sizeof(v), h);
    const std::uint64_t q = cat.fingerprint();
    h = fnv1a_bytes(&q, sizeof(q), h);
    const int g = grammar::kGrammarVersion;
    h = fnv1a_bytes(&g, sizeof(g), h);
    return h;
}

const Extraction* AnswerCache::find(const std::string& id) const {
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
}

const Extraction& AnswerCache::get_or_parse(const std::string& id, const std::string& report_text,
                                            const QuestionCatalog& cat) {
    auto it = entries_.find(id);
    if (it != entries_.end()) return it->second;
    ++parse_count_;
    return entries_.emplace(id, extract_all(report_text, cat, ExtractMode::strict)).first->second;
}

void AnswerCache::save(const std::filesystem::path& path) const {
    nlohmann::ordered_json j;
    j["fingerprint"] = fingerprint_;
    nlohmann::ordered_json entries;
    for (const auto& [id, e] : entries_) {
        entries[id] = {{"qs1", e.qs1.values}, {"qs2", e.qs2.values}, {"qs3", e.qs3.values}};
    }
    j["entries"] = entries;
    const std::string s = j.dump();
    write_file(path, std::vector<unsigned char>(s.begin(), s.end()));
}

AnswerCache AnswerCache::load(const std::filesystem::path& path,
                              std::uint64_t expected_fingerprint) {
    AnswerCache cache(expected_fingerprint);
    if (!std::filesystem::exists(path)) return cache;
    const auto bytes = read_file(path);
    const auto j = nlohmann::ordered_json::parse(bytes.begin(), bytes.end());
    if (j.at("fingerprint").get<std::uint64_t>() != expected_fingerprint) return cache;
    for (const auto& [id, e] : j.at("entries").items()) {
        Extraction x;
        x.qs1 = LabelVector{QuestionSetId::QS1, e.at("qs1").get<std::vector<std::uint8_t>>()};
        x.qs2 = LabelVector{QuestionSetId::QS2, e.at("qs2").get<std::vector<std::uint8_t>>()};
        x.qs3 = LabelVector{QuestionSetId::QS3, e.at("qs3").get<std::vector<std::uint8_t>>()};
        cache.entries_.emplace(id, std::move(x));
    }
    return cache;
}

// --- agreement / hierarchy -------------------------------------------------------

metrics::MetricsReport agreement_metrics(
    const std::vector<std::pair<std::string, std::string>>& generated,
    const std::vector<std::pair<std::string, std::string>>& reference, const QuestionSet& qs,
    const QuestionCatalog& cat, AnswerCache& cache) {
    if (generated.size() != reference.size())
        throw AlignmentError("agreement_metrics: " + std::to_string(generated.size()) +
                             " generated vs " + std::to_string(reference.size()) +
                             " reference reports");
    std::vector<LabelVector> preds, refs;
    for (std::size_t i = 0; i < generated.size(); ++i) {
        if (generated[i].first != reference[i].first)
            throw AlignmentError("agreement_metrics: id mismatch at row " + std::to_string(i) +
                                 ": " + generated[i].first + " vs " + reference[i].first);
        preds.push_back(
            extract_all(generated[i].second, cat, ExtractMode::lenient).get(qs.id));
        refs.push_back(cache.get_or_parse(reference[i].first, reference[i].second, cat).get(qs.id));
    }
    return metrics::evaluate_binary(qs, preds, refs);
}

HierarchyReport hierarchy_analysis(const metrics::MetricsReport& qs1,
                                   const metrics::MetricsReport& qs2,
                                   const metrics::MetricsReport& qs3,
                                   const std::vector<Extraction>& generated_labels,
                                   const QuestionCatalog& cat) {
    HierarchyReport out;
    for (int q = 0; q < static_cast<int>(qs1.per_question.size()); ++q) {
        const auto kind = qs1_kind(cat.qs1, q);
        if (!kind) continue;  // question not covered by the synthetic findings
        HierarchyReport::Row row;
        row.kind = *kind;
        row.f1_presence = qs1.per_question[q].f1;

        double s2 = 0.0;
        int n2 = 0;
        for (int i = 0; i < static_cast<int>(qs2.per_question.size()); ++i) {
            if (qs2_entry(i).first != *kind) continue;
            s2 += qs2.per_question[i].f1;
            ++n2;
        }
        row.f1_laterality = n2 > 0 ? s2 / n2 : 0.0;

        row.has_lobe_level = kind_has_lobes(*kind);
        if (row.has_lobe_level) {
            double s3 = 0.0;
            int n3 = 0;
            for (int i = 0; i < static_cast<int>(qs3.per_question.size()); ++i) {
                if (qs3_entry(i).first != *kind) continue;
                s3 += qs3.per_question[i].f1;
                ++n3;
            }
            row.f1_lobe = n3 > 0 ? s3 / n3 : 0.0;
            row.delta_laterality_lobe = row.f1_laterality - row.f1_lobe;
        } else {
            row.f1_lobe = std::nan("");
        }
        row.delta_presence_laterality = row.f1_presence - row.f1_laterality;
        out.rows.push_back(row);
    }

    if (!generated_labels.empty()) {
        long ok = 0;
        for (const auto& e : generated_labels)
            if (labels_hierarchy_consistent(e.qs1, e.qs2, e.qs3, cat)) ++ok;
        out.consistency_rate =
            static_cast<double>(ok) / static_cast<double>(generated_labels.size());
    }
    return out;
}

// --- BLEU -------------------------------------------------------------------------

namespace {

std::map<std::vector<int>, int> ngram_counts(const std::vector<int>& toks, int n) {
    std::map<std::vector<int>, int> counts;
    if (static_cast<int>(toks.size()) < n) return counts;
    for (std::size_t i = 0; i + n <= toks.size(); ++i)
        ++counts[std::vector<int>(toks.begin() + i, toks.begin() + i + n)];
    return counts;
}

}  // namespace

BleuResult bleu_mean(const std::vector<int>& candidate, const std::vector<int>& reference) {
    BleuResult out;
    if (candidate.empty()) {
        out.empty_candidate = true;
        return out;
    }
    const double c = static_cast<double>(candidate.size());
    const double r = static_cast<double>(reference.size());
    const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);

    double log_sum = 0.0;
    bool dead = false;
    double total = 0.0;
    for (int n = 1; n <= 4; ++n) {
        const auto cand = ngram_counts(candidate, n);
        const auto ref = ngram_counts(reference, n);
        long clipped = 0, total_n = 0;
        for (const auto& [gram, count] : cand) {
            auto it = ref.find(gram);
            clipped += std::min<long>(count, it == ref.end() ? 0 : it->second);
            total_n += count;
        }
        const double p = total_n == 0 ? 0.0 : static_cast<double>(clipped) / total_n;
        if (p == 0.0) dead = true;  // zero precision zeroes BLEU-n upward
        if (!dead) {
            log_sum += std::log(p);
            total += bp * std::exp(log_sum / n);
        }
    }
    out.value = total / 4.0;
    return out;
}

}  // namespace dcppd::evalproto
