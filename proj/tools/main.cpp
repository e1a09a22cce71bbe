#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "dcppd/harness.hpp"

using namespace dcppd;

namespace {

harness::ExperimentConfig load_config(const std::string& config_path) {
    if (config_path.empty()) return harness::ExperimentConfig{};
    return harness::ExperimentConfig::from_file(config_path);
}

std::vector<QuestionSetId> cue_sets_of(const harness::ExperimentConfig& cfg) {
    return cfg.enabled_cue_sets();
}

void write_summary(const harness::ExperimentConfig& cfg, const std::filesystem::path& run_dir,
                   const std::vector<harness::EvalSummaryRow>& rows) {
    std::string lines;
    for (const auto& r : rows) lines += harness::summary_row_json(cfg, r) + "\n";
    harness::write_text_file(run_dir / "summary.jsonl", lines);
}

harness::EvalSummaryRow summarize(const std::string& train_tag, const std::string& setting,
                                  const harness::Pipeline::EvalResult& r) {
    harness::EvalSummaryRow row;
    row.train_tag = train_tag;
    row.test_setting = setting;
    row.p1 = r.qs1.macro_precision;
    row.r1 = r.qs1.macro_recall;
    row.f1_1 = r.qs1.macro_f1;
    row.p2 = r.qs2.macro_precision;
    row.r2 = r.qs2.macro_recall;
    row.f1_2 = r.qs2.macro_f1;
    row.p3 = r.qs3.macro_precision;
    row.r3 = r.qs3.macro_recall;
    row.f1_3 = r.qs3.macro_f1;
    row.bleu = r.bleu;
    row.truncated = r.truncated;
    if (r.s_text.size() >= 2) {
        const auto ms = metrics::mean_std(r.s_text);
        row.s_text_mean = ms.mean;
        row.s_text_std = ms.std;
    }
    return row;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cue-prompted report generation on synthetic phantoms"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "experiment config file (JSON, flat keys)")
        ->check(CLI::ExistingFile);

    // gen-data
    auto* gen_data = app.add_subcommand("gen-data", "generate train and eval phantom datasets");

    // train-probe
    std::string probe_set = "all";
    auto* train_probe = app.add_subcommand("train-probe", "train linear probes on frozen embeddings");
    train_probe->add_option("--set", probe_set, "qs1|qs2|qs3|all");

    // pretrain-decoder
    auto* pretrain = app.add_subcommand("pretrain-decoder", "pretrain the report decoder on text");

    // train-vlm
    double vlm_p = -1.0;
    std::string vlm_stage = "all";
    bool vlm_no_image = false;
    auto* train_vlm = app.add_subcommand("train-vlm", "two-stage cue-conditioned training");
    train_vlm->add_option("--stage", vlm_stage, "1|2|all");
    train_vlm->add_option("--dropout", vlm_p, "stage-2 prompt dropout rate (default from config)");
    train_vlm->add_flag("--no-image", vlm_no_image, "drop image tokens from prompts");

    // evaluate
    std::string eval_source;
    bool eval_no_image = false;
    double eval_dropout = -1.0;
    auto* evaluate = app.add_subcommand("evaluate", "generate on the eval split and score");
    evaluate->add_option("--cue-source", eval_source, "gt|probe|noisy|none (default from config)");
    evaluate->add_flag("--no-image", eval_no_image, "evaluate the no-image model");
    evaluate->add_option("--model-dropout", eval_dropout,
                         "dropout rate of the trained model to evaluate");

    // reliance
    std::string rel_source;
    auto* reliance_cmd = app.add_subcommand("reliance", "attention reliance scores per setting");
    reliance_cmd->add_option("--cue-source", rel_source, "test-time cue source");

    // ablate
    std::string ablate_mode = "dropout";
    std::string ablate_rates = "0,0.1,0.3,0.5,0.7";
    auto* ablate = app.add_subcommand("ablate", "dropout-rate or cue-source training grids");
    ablate->add_option("--mode", ablate_mode, "dropout|cue-train");
    ablate->add_option("--dropout", ablate_rates, "comma-separated dropout rates");

    // report-tables
    auto* tables = app.add_subcommand("report-tables", "pivot run records into table CSVs");

    CLI11_PARSE(app, argc, argv);

    try {
        harness::ExperimentConfig cfg = load_config(config_path);
        harness::Pipeline pipe(cfg);

        if (gen_data->parsed()) {
            const auto run = harness::create_run_dir(cfg, "gen-data");
            const auto train_dir = pipe.ensure_dataset(false);
            const auto eval_dir = pipe.ensure_dataset(true);
            harness::write_text_file(run / "outputs.txt",
                                     train_dir.string() + "\n" + eval_dir.string() + "\n");
            std::cout << "train: " << train_dir << "\neval:  " << eval_dir << "\n";
        } else if (train_probe->parsed()) {
            const auto run = harness::create_run_dir(cfg, "train-probe");
            std::string outputs;
            for (QuestionSetId qs :
                 {QuestionSetId::QS1, QuestionSetId::QS2, QuestionSetId::QS3}) {
                if (probe_set != "all" && probe_set != qs_name(qs)) continue;
                const auto path = pipe.ensure_probe(qs);
                // evaluation-side metrics on the eval split
                pipe.ensure_features(true);
                const auto& f = pipe.features(true);
                const auto& ds = pipe.dataset(true);
                std::vector<LabelVector> gt;
                for (const auto& s : ds.samples)
                    gt.push_back(qs == QuestionSetId::QS1   ? s.gt.qs1
                                 : qs == QuestionSetId::QS2 ? s.gt.qs2
                                                            : s.gt.qs3);
                const auto rep = probe::evaluate_probe(pipe.probe(qs), f.embeddings, gt,
                                                       pipe.catalog().get(qs));
                std::string lines;
                for (const auto& q : rep.per_question) {
                    lines += "{\"question\":\"" + q.question +
                             "\",\"precision\":" + harness::fmt(q.precision) +
                             ",\"recall\":" + harness::fmt(q.recall) +
                             ",\"f1\":" + harness::fmt(q.f1) + ",\"auroc\":" +
                             (q.auroc ? harness::fmt(*q.auroc) : std::string("null")) + "}\n";
                }
                harness::write_text_file(run / ("metrics-" + qs_name(qs) + ".jsonl"), lines);
                outputs += path.string() + "\n";
                std::cout << qs_name(qs) << " macro-F1 " << harness::fmt(rep.macro_f1) << "\n";
            }
            harness::write_text_file(run / "outputs.txt", outputs);
        } else if (pretrain->parsed()) {
            const auto run = harness::create_run_dir(cfg, "pretrain-decoder");
            const auto path = pipe.ensure_pretrained();
            harness::write_text_file(run / "outputs.txt", path.string() + "\n");
            std::cout << "decoder: " << path << "\n";
        } else if (train_vlm->parsed()) {
            const auto run = harness::create_run_dir(cfg, "train-vlm");
            std::string outputs;
            if (vlm_stage == "1" || vlm_stage == "all") {
                const auto p = pipe.ensure_stage1();
                outputs += p.string() + "\n";
                std::cout << "stage1: " << p << "\n";
            }
            if (vlm_stage == "2" || vlm_stage == "all") {
                harness::Pipeline::Stage2Spec spec;
                spec.p = vlm_p >= 0 ? vlm_p : cfg.dropout_p;
                spec.cue_source = cfg.train_cue_source;
                spec.cue_sets = cue_sets_of(cfg);
                spec.no_image = vlm_no_image || cfg.no_image;
                const auto p = pipe.ensure_stage2(spec);
                outputs += p.string() + "\n";
                std::cout << "stage2: " << p << "\n";
            }
            harness::write_text_file(run / "outputs.txt", outputs);
        } else if (evaluate->parsed() || reliance_cmd->parsed()) {
            const bool rel = reliance_cmd->parsed();
            const auto run = harness::create_run_dir(cfg, rel ? "reliance" : "evaluate");
            harness::Pipeline::Stage2Spec spec;
            spec.p = eval_dropout >= 0 ? eval_dropout : cfg.dropout_p;
            spec.cue_source = cfg.train_cue_source;
            spec.cue_sets = cue_sets_of(cfg);
            spec.no_image = eval_no_image || cfg.no_image;
            const auto model_path = pipe.stage2_path(spec);
            if (!std::filesystem::exists(model_path))
                throw harness::MissingArtifactError("missing model " + model_path.string() +
                                                    "; run `dcppd train-vlm`");
            auto model = gen::GeneratorModel::load(model_path);

            harness::Pipeline::EvalOptions opt;
            opt.cue_source = !eval_source.empty()  ? eval_source
                             : !rel_source.empty() ? rel_source
                                                   : cfg.test_cue_source;
            opt.noisy_flip = cfg.noisy_flip;
            opt.cue_sets = spec.cue_sets;
            opt.no_image = spec.no_image;
            opt.run_dir = run;
            opt.write_traces = rel;
            const auto result = pipe.evaluate_model(*model, opt);
            const auto row = summarize("gt-dcp-pd-" + pipe.stage2_tag(spec), opt.cue_source, result);
            write_summary(cfg, run, {row});
            if (rel && row.s_text_mean) {
                std::string csv = "setting,mean_S_text,std_S_text\n";
                csv += opt.cue_source + "," + harness::fmt(*row.s_text_mean) + "," +
                       harness::fmt(*row.s_text_std) + "\n";
                harness::write_text_file(run / "reliance.csv", csv);
            }
            std::cout << "qs1 macro-F1 " << harness::fmt(result.qs1.macro_f1) << ", bleu "
                      << harness::fmt(result.bleu) << "\n";
        } else if (ablate->parsed()) {
            const auto run = harness::create_run_dir(cfg, "ablate");
            std::vector<harness::EvalSummaryRow> rows;
            if (ablate_mode == "dropout") {
                std::vector<double> rates;
                std::string cur;
                for (char c : ablate_rates + ",") {
                    if (c == ',') {
                        if (!cur.empty()) rates.push_back(std::stod(cur));
                        cur.clear();
                    } else {
                        cur += c;
                    }
                }
                rows = harness::ablate_dropout(pipe, rates, run);
            } else if (ablate_mode == "cue-train") {
                rows = harness::ablate_cue_train(pipe, run);
            } else {
                throw ConfigError("ablate mode must be dropout|cue-train");
            }
            write_summary(cfg, run, rows);
            std::cout << harness::rows_to_csv(rows);
        } else if (tables->parsed()) {
            const auto run = harness::create_run_dir(cfg, "report-tables");
            harness::report_tables(cfg, run);
            std::cout << "tables under " << run << "\n";
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
