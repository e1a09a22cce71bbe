#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dcppd/config.hpp"
#include "dcppd/discriminator.hpp"
#include "dcppd/evalproto.hpp"
#include "dcppd/generator.hpp"
#include "dcppd/reliance.hpp"

namespace dcppd::harness {

struct MissingArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// fixed 6-decimal formatting for CSV cells (determinism contract)
std::string fmt(double v);

// Creates out_dir/runs/<command>-<confighash>-<k> with a frozen config
// echo; k is the first free index, so prior run records are never touched.
std::filesystem::path create_run_dir(const ExperimentConfig& cfg, const std::string& command);

void write_text_file(const std::filesystem::path& path, const std::string& content);

// Orchestrates one experiment configuration. Artifacts (datasets,
// checkpoints, feature caches) are content-addressed under
// out_dir/artifacts and reused when present.
class Pipeline {
public:
    explicit Pipeline(ExperimentConfig cfg);

    const ExperimentConfig& cfg() const { return cfg_; }
    const QuestionCatalog& catalog() const { return catalog_; }
    std::filesystem::path artifact_dir() const;

    // artifact paths (existence not implied)
    std::filesystem::path dataset_dir(bool eval_split) const;
    std::filesystem::path backbone_path() const;
    std::filesystem::path features_path(bool eval_split) const;
    std::filesystem::path probe_path(QuestionSetId qs) const;
    std::filesystem::path pretrained_path() const;
    std::filesystem::path stage1_path() const;

    struct Stage2Spec {
        double p = 0.3;
        std::string cue_source = "gt";  // gt | probe | noisy | none
        std::vector<QuestionSetId> cue_sets;
        bool no_image = false;
    };
    std::string stage2_tag(const Stage2Spec& s) const;
    std::filesystem::path stage2_path(const Stage2Spec& s) const;

    // builders (idempotent: reuse the artifact when it already exists)
    std::filesystem::path ensure_dataset(bool eval_split);
    std::filesystem::path ensure_backbone();
    std::filesystem::path ensure_features(bool eval_split);
    std::filesystem::path ensure_probe(QuestionSetId qs);
    std::filesystem::path ensure_pretrained();
    std::filesystem::path ensure_stage1();
    std::filesystem::path ensure_stage2(const Stage2Spec& s);

    // loaded views (throw MissingArtifactError naming the producing command)
    const synth::Dataset& dataset(bool eval_split);
    struct Features {
        Tensor embeddings;           // [N x L*C]
        std::vector<Tensor> tokens;  // per item [T x C]
    };
    const Features& features(bool eval_split);
    const probe::LinearProbe& probe(QuestionSetId qs);

    struct EvalOptions {
        std::string cue_source = "gt";  // gt | probe | noisy | none
        double noisy_flip = 0.1;
        std::vector<QuestionSetId> cue_sets;
        bool no_image = false;
        std::filesystem::path run_dir;  // when set, generations/metrics are written
        bool write_traces = false;
        std::string setting_label;  // free-form tag recorded in summaries
    };

    struct EvalResult {
        metrics::MetricsReport qs1, qs2, qs3;
        evalproto::HierarchyReport hierarchy;
        double bleu = 0.0;
        int truncated = 0;
        std::vector<double> s_text;  // per generation, image-bearing models only
    };

    EvalResult evaluate_model(const gen::GeneratorModel& model, const EvalOptions& opt);

    // cue labels for one eval item under a test-time cue source
    std::vector<LabelVector> cue_labels_for(int eval_index, const std::string& source,
                                            double noisy_flip,
                                            const std::vector<QuestionSetId>& sets);

    std::vector<gen::VlmItem> train_items(const std::string& cue_source,
                                          const std::vector<QuestionSetId>& sets, bool no_image);

private:
    std::uint64_t dataset_hash(bool eval_split) const;
    std::uint64_t backbone_hash() const;
    std::uint64_t features_hash(bool eval_split) const;

    ExperimentConfig cfg_;
    QuestionCatalog catalog_;
    std::map<bool, synth::Dataset> datasets_;
    std::map<bool, Features> features_;
    std::map<QuestionSetId, probe::LinearProbe> probes_;
};

// --- command-level entry points used by the CLI -----------------------------

struct EvalSummaryRow {
    std::string train_tag;
    std::string test_setting;
    double p1 = 0, r1 = 0, f1_1 = 0;
    double p2 = 0, r2 = 0, f1_2 = 0;
    double p3 = 0, r3 = 0, f1_3 = 0;
    double bleu = 0;
    std::optional<double> s_text_mean, s_text_std;
    int truncated = 0;
};

std::string summary_row_json(const ExperimentConfig& cfg, const EvalSummaryRow& row);
void write_metrics_jsonl(const std::filesystem::path& run_dir, const Pipeline::EvalResult& r,
                         const QuestionCatalog& cat);

// `ablate --mode dropout`: trains one stage-2 model per rate and evaluates
// each under the four test-time cue settings.
std::vector<EvalSummaryRow> ablate_dropout(Pipeline& pipe, const std::vector<double>& rates,
                                           const std::filesystem::path& run_dir);

// `ablate --mode cue-train`: classifier row, no-cue baseline, predicted-cue
// training and oracle-cue training, all evaluated with probe cues.
std::vector<EvalSummaryRow> ablate_cue_train(Pipeline& pipe,
                                             const std::filesystem::path& run_dir);

std::string rows_to_csv(const std::vector<EvalSummaryRow>& rows);

// Scans run records under out_dir/runs and pivots their summary rows into
// publication-shaped CSV tables inside the given run dir.
void report_tables(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);

}  // namespace dcppd::harness
