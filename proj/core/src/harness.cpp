#include "dcppd/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <thread>

#include "json.hpp"

#include "dcppd/serialize.hpp"

namespace dcppd::harness {

using json = nlohmann::ordered_json;

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    write_file(path, std::vector<unsigned char>(content.begin(), content.end()));
}

std::filesystem::path create_run_dir(const ExperimentConfig& cfg, const std::string& command) {
    char hash[24];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(cfg.hash()));
    const std::filesystem::path base = std::filesystem::path(cfg.out_dir) / "runs";
    std::filesystem::create_directories(base);
    for (int k = 1;; ++k) {
        const auto dir = base / (command + "-" + hash + "-" + std::to_string(k));
        if (std::filesystem::exists(dir)) continue;  // never reuse a prior record
        std::filesystem::create_directories(dir);
        write_text_file(dir / "config.json", cfg.to_json() + "\n");
        return dir;
    }
}

namespace {
std::string hex8(std::uint64_t h) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%08x", static_cast<unsigned>(h & 0xffffffffu));
    return buf;
}

cue::CueSource source_enum(const std::string& s) {
    if (s == "gt") return cue::CueSource::gt;
    if (s == "probe") return cue::CueSource::probe;
    if (s == "noisy") return cue::CueSource::noisy;
    return cue::CueSource::none;
}
}  // namespace

Pipeline::Pipeline(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    catalog_ = cfg_.dataset_config().catalog();
}

std::filesystem::path Pipeline::artifact_dir() const {
    return std::filesystem::path(cfg_.out_dir) / "artifacts";
}

std::uint64_t Pipeline::dataset_hash(bool eval_split) const {
    std::uint64_t h = fnv1a_bytes("data", 4);
    const std::uint64_t seed = derive_seed(cfg_.data_seed, eval_split ? 1 : 0);
    h = fnv1a_bytes(&seed, sizeof(seed), h);
    const int n = eval_split ? cfg_.n_eval : cfg_.n_train;
    h = fnv1a_bytes(&n, sizeof(n), h);
    h = fnv1a_bytes(&cfg_.grid, sizeof(cfg_.grid), h);
    h = fnv1a_bytes(&cfg_.prevalence, sizeof(cfg_.prevalence), h);
    h = fnv1a_bytes(&cfg_.unstructured_reports, sizeof(bool), h);
    return h;
}

std::uint64_t Pipeline::backbone_hash() const {
    std::uint64_t h = fnv1a_bytes("backbone", 8);
    for (int v : {cfg_.cin, cfg_.scales, cfg_.stages, cfg_.patch, cfg_.stride,
                  cfg_.backbone_heads, cfg_.backbone_ffn, cfg_.grid})
        h = fnv1a_bytes(&v, sizeof(v), h);
    h = fnv1a_bytes(&cfg_.pos_scale, sizeof(double), h);
    h = fnv1a_bytes(&cfg_.backbone_seed, sizeof(std::uint64_t), h);
    return h;
}

std::uint64_t Pipeline::features_hash(bool eval_split) const {
    std::uint64_t h = dataset_hash(eval_split);
    const std::uint64_t b = backbone_hash();
    h = fnv1a_bytes(&b, sizeof(b), h);
    for (int v : {cfg_.select_scale, cfg_.select_stage}) h = fnv1a_bytes(&v, sizeof(v), h);
    return h;
}

std::filesystem::path Pipeline::dataset_dir(bool eval_split) const {
    return artifact_dir() /
           (std::string("data-") + (eval_split ? "eval-" : "train-") + hex8(dataset_hash(eval_split)));
}

std::filesystem::path Pipeline::backbone_path() const {
    return artifact_dir() / ("backbone-" + hex8(backbone_hash()) + ".dcpt");
}

std::filesystem::path Pipeline::features_path(bool eval_split) const {
    return artifact_dir() / (std::string("features-") + (eval_split ? "eval-" : "train-") +
                             hex8(features_hash(eval_split)) + ".dcpt");
}

std::filesystem::path Pipeline::probe_path(QuestionSetId qs) const {
    std::uint64_t h = features_hash(false);
    h = fnv1a_bytes(&cfg_.probe_lr, sizeof(double), h);
    h = fnv1a_bytes(&cfg_.probe_epochs, sizeof(int), h);
    h = fnv1a_bytes(&cfg_.seed, sizeof(std::uint64_t), h);
    return artifact_dir() / ("probe-" + qs_name(qs) + "-" + hex8(h) + ".dcpt");
}

namespace {
std::uint64_t mix_ints(std::uint64_t h, std::initializer_list<double> vals) {
    for (double v : vals) h = fnv1a_bytes(&v, sizeof(v), h);
    return h;
}
}  // namespace

std::filesystem::path Pipeline::pretrained_path() const {
    std::uint64_t h = dataset_hash(false);
    h = mix_ints(h, {double(cfg_.d_model), double(cfg_.dec_blocks), double(cfg_.dec_heads),
                     double(cfg_.dec_ffn), double(cfg_.max_len), double(cfg_.pretrain_epochs),
                     cfg_.pretrain_lr, double(cfg_.batch), double(cfg_.seed)});
    return artifact_dir() / ("decoder-" + hex8(h) + ".dcpt");
}

std::filesystem::path Pipeline::stage1_path() const {
    std::uint64_t h = features_hash(false);
    const std::uint64_t d = fnv1a_bytes(pretrained_path().string().data(),
                                        pretrained_path().string().size());
    h = fnv1a_bytes(&d, sizeof(d), h);
    h = mix_ints(h, {double(cfg_.proj_queries), double(cfg_.stage1_epochs), cfg_.stage1_lr});
    return artifact_dir() / ("stage1-" + hex8(h) + ".dcpt");
}

std::string Pipeline::stage2_tag(const Stage2Spec& s) const {
    char p[16];
    std::snprintf(p, sizeof(p), "p%.2f", s.p);
    std::string sets = "q";
    for (auto q : s.cue_sets)
        sets += (q == QuestionSetId::QS1 ? "1" : q == QuestionSetId::QS2 ? "2" : "3");
    std::string tag = std::string(p) + "-" + s.cue_source + "-" + sets;
    if (s.no_image) tag += "-noimg";
    return tag;
}

std::filesystem::path Pipeline::stage2_path(const Stage2Spec& s) const {
    std::uint64_t h = fnv1a_bytes(stage1_path().string().data(), stage1_path().string().size());
    h = mix_ints(h, {s.p, double(cfg_.stage2_epochs), cfg_.stage2_lr, double(cfg_.lora_rank),
                     cfg_.lora_alpha, double(cfg_.noisy_flip)});
    return artifact_dir() / ("stage2-" + stage2_tag(s) + "-" + hex8(h) + ".dcpt");
}

std::filesystem::path Pipeline::ensure_dataset(bool eval_split) {
    const auto dir = dataset_dir(eval_split);
    if (!std::filesystem::exists(dir / "manifest.json")) {
        synth::make_dataset(eval_split ? cfg_.n_eval : cfg_.n_train,
                            derive_seed(cfg_.data_seed, eval_split ? 1 : 0),
                            cfg_.dataset_config(), dir);
    }
    return dir;
}

const synth::Dataset& Pipeline::dataset(bool eval_split) {
    auto it = datasets_.find(eval_split);
    if (it != datasets_.end()) return it->second;
    const auto dir = dataset_dir(eval_split);
    if (!std::filesystem::exists(dir / "manifest.json"))
        throw MissingArtifactError("missing dataset " + dir.string() + "; run `dcppd gen-data`");
    return datasets_.emplace(eval_split, synth::load_dataset(dir)).first->second;
}

std::filesystem::path Pipeline::ensure_backbone() {
    const auto path = backbone_path();
    if (!std::filesystem::exists(path)) {
        vision::Backbone bb(cfg_.backbone_config(), 3, {cfg_.grid, cfg_.grid, cfg_.grid});
        bb.save(path);
    }
    return path;
}

std::filesystem::path Pipeline::ensure_features(bool eval_split) {
    const auto path = features_path(eval_split);
    if (std::filesystem::exists(path)) return path;
    ensure_dataset(eval_split);
    ensure_backbone();

    const synth::Dataset& ds = dataset(eval_split);
    vision::Backbone bb = vision::Backbone::load(backbone_path());
    const int n = static_cast<int>(ds.size());
    const std::int64_t E = vision::embedding_length(bb.config());

    // selected-token geometry probed on the first item
    synth::PhantomVolume v0 = synth::read_volume(ds.dir / "volumes" / (ds.samples[0].id + ".vol"));
    const auto staged0 = bb.encode(v0);
    const auto sel0 = vision::select_tokens(staged0, cfg_.select_scale, cfg_.select_stage);
    const std::int64_t T = sel0.rows(), C = sel0.cols();

    Tensor emb({n, E});
    Tensor toks({n, T, C});

    const int workers = std::min(cfg_.resolved_threads(), n);
    auto run = [&](int w) {
        for (int i = w; i < n; i += workers) {
            synth::PhantomVolume v =
                synth::read_volume(ds.dir / "volumes" / (ds.samples[i].id + ".vol"));
            const auto staged = bb.encode(v);
            const auto e = vision::pool_embedding(staged);
            std::copy(e.vector.data.begin(), e.vector.data.end(), emb.data.begin() + i * E);
            const auto sel = vision::select_tokens(staged, cfg_.select_scale, cfg_.select_stage);
            std::copy(sel.data.begin(), sel.data.end(), toks.data.begin() + i * T * C);
        }
    };
    if (workers <= 1) {
        run(0);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(run, w);
        for (auto& t : pool) t.join();
    }

    json cfg;
    cfg["kind"] = "features";
    cfg["n"] = n;
    cfg["embed_dim"] = E;
    cfg["select_scale"] = cfg_.select_scale;
    cfg["select_stage"] = cfg_.select_stage;
    save_checkpoint(path, cfg.dump(), {{"emb", &emb}, {"tokens", &toks}});
    return path;
}

const Pipeline::Features& Pipeline::features(bool eval_split) {
    auto it = features_.find(eval_split);
    if (it != features_.end()) return it->second;
    const auto path = features_path(eval_split);
    if (!std::filesystem::exists(path))
        throw MissingArtifactError("missing features " + path.string() +
                                   "; produced implicitly by `dcppd train-probe` or `dcppd "
                                   "train-vlm`");
    Checkpoint ck = load_checkpoint(path);
    const Tensor* emb = ck.find("emb");
    const Tensor* toks = ck.find("tokens");
    if (emb == nullptr || toks == nullptr)
        throw std::runtime_error("corrupt features file " + path.string());
    Features f;
    f.embeddings = *emb;
    const std::int64_t n = toks->shape[0], T = toks->shape[1], C = toks->shape[2];
    for (std::int64_t i = 0; i < n; ++i) {
        Tensor t({T, C});
        std::copy(toks->data.begin() + i * T * C, toks->data.begin() + (i + 1) * T * C,
                  t.data.begin());
        f.tokens.push_back(std::move(t));
    }
    return features_.emplace(eval_split, std::move(f)).first->second;
}

std::filesystem::path Pipeline::ensure_probe(QuestionSetId qs) {
    const auto path = probe_path(qs);
    if (std::filesystem::exists(path)) return path;
    ensure_features(false);
    const Features& f = features(false);
    const synth::Dataset& ds = dataset(false);

    std::vector<LabelVector> labels;
    for (const auto& s : ds.samples) {
        switch (qs) {
            case QuestionSetId::QS1: labels.push_back(s.gt.qs1); break;
            case QuestionSetId::QS2: labels.push_back(s.gt.qs2); break;
            default: labels.push_back(s.gt.qs3); break;
        }
    }
    probe::OptimConfig opt;
    opt.lr = cfg_.probe_lr;
    opt.epochs = cfg_.probe_epochs;
    opt.seed = derive_seed(cfg_.seed, 0x9b0be + static_cast<int>(qs));
    probe::LinearProbe p = probe::train_probe(f.embeddings, labels, catalog_.get(qs), opt);
    p.save(path);
    return path;
}

const probe::LinearProbe& Pipeline::probe(QuestionSetId qs) {
    auto it = probes_.find(qs);
    if (it != probes_.end()) return it->second;
    const auto path = probe_path(qs);
    if (!std::filesystem::exists(path))
        throw MissingArtifactError("missing probe " + path.string() +
                                   "; run `dcppd train-probe`");
    return probes_.emplace(qs, probe::LinearProbe::load(path)).first->second;
}

namespace {
std::vector<std::vector<int>> tokenized_reports(const synth::Dataset& ds,
                                                const gen::Vocabulary& vocab) {
    std::vector<std::vector<int>> out;
    out.reserve(ds.size());
    for (const auto& s : ds.samples) out.push_back(vocab.tokenize_words(s.report.flat_text));
    return out;
}
}  // namespace

std::filesystem::path Pipeline::ensure_pretrained() {
    const auto path = pretrained_path();
    if (std::filesystem::exists(path)) return path;
    ensure_dataset(false);
    ensure_dataset(true);

    gen::GeneratorModel model(cfg_.generator_config(), gen::Vocabulary::build(catalog_));
    gen::VlmTrainConfig tc;
    tc.epochs = cfg_.pretrain_epochs;
    tc.batch = cfg_.batch;
    tc.lr = cfg_.pretrain_lr;
    tc.seed = derive_seed(cfg_.seed, 0x9e7ULL);
    tc.threads = cfg_.resolved_threads();
    gen::pretrain_decoder(model, tokenized_reports(dataset(false), model.vocab()), tc);

    const double ppl = gen::perplexity(model, tokenized_reports(dataset(true), model.vocab()));
    if (ppl > cfg_.pretrain_max_ppl)
        throw gen::DivergenceError("pretrain perplexity " + fmt(ppl) + " above threshold " +
                                   fmt(cfg_.pretrain_max_ppl));
    model.save(path);
    return path;
}

std::vector<gen::VlmItem> Pipeline::train_items(const std::string& cue_source,
                                                const std::vector<QuestionSetId>& sets,
                                                bool no_image) {
    const synth::Dataset& ds = dataset(false);
    const Features& f = features(false);
    gen::Vocabulary vocab = gen::Vocabulary::build(catalog_);

    std::vector<gen::VlmItem> items;
    items.reserve(ds.size());
    for (int i = 0; i < static_cast<int>(ds.size()); ++i) {
        gen::VlmItem it;
        it.visual = no_image ? nullptr : &f.tokens[i];
        it.report_ids = vocab.tokenize_words(ds.samples[i].report.flat_text);
        if (cue_source != "none") {
            for (QuestionSetId qs : sets) {
                const LabelVector& gt = qs == QuestionSetId::QS1   ? ds.samples[i].gt.qs1
                                        : qs == QuestionSetId::QS2 ? ds.samples[i].gt.qs2
                                                                   : ds.samples[i].gt.qs3;
                if (cue_source == "gt") {
                    it.cue_labels.push_back(gt);
                } else if (cue_source == "probe") {
                    Tensor row({f.embeddings.cols()});
                    std::copy(f.embeddings.data.begin() + i * f.embeddings.cols(),
                              f.embeddings.data.begin() + (i + 1) * f.embeddings.cols(),
                              row.data.begin());
                    it.cue_labels.push_back(probe::predict(probe(qs), row).labels);
                } else {  // noisy
                    const std::vector<double> rates(gt.values.size(), cfg_.noisy_flip);
                    it.cue_labels.push_back(probe::simulate_cue_source(
                        gt, rates,
                        derive_seed(cfg_.seed, 0x7261ULL, static_cast<std::uint64_t>(i),
                                    static_cast<std::uint64_t>(gt.qs))));
                }
            }
        }
        items.push_back(std::move(it));
    }
    return items;
}

std::filesystem::path Pipeline::ensure_stage1() {
    const auto path = stage1_path();
    if (std::filesystem::exists(path)) return path;
    ensure_pretrained();
    ensure_features(false);

    auto model = gen::GeneratorModel::load(pretrained_path());
    gen::VlmTrainConfig tc;
    tc.epochs = cfg_.stage1_epochs;
    tc.batch = cfg_.batch;
    tc.lr = cfg_.stage1_lr;
    tc.seed = derive_seed(cfg_.seed, 0x51ULL);
    tc.threads = cfg_.resolved_threads();
    const auto items = train_items("none", {}, cfg_.no_image);
    gen::train_stage1(*model, items, tc);
    model->save(path);
    return path;
}

std::filesystem::path Pipeline::ensure_stage2(const Stage2Spec& s) {
    const auto path = stage2_path(s);
    if (std::filesystem::exists(path)) return path;
    ensure_stage1();
    if (s.cue_source == "probe")
        for (auto qs : s.cue_sets) ensure_probe(qs);

    auto model = gen::GeneratorModel::load(stage1_path());
    model->attach_adapters(derive_seed(cfg_.seed, 0x52ULL));

    gen::Stage2Config sc;
    sc.train.epochs = cfg_.stage2_epochs;
    sc.train.batch = cfg_.batch;
    sc.train.lr = cfg_.stage2_lr;
    sc.train.seed = derive_seed(cfg_.seed, 0x5272ULL);
    sc.train.threads = cfg_.resolved_threads();
    sc.dropout_p = s.p;
    sc.cue_source = source_enum(s.cue_source);
    sc.catalog = &catalog_;
    const auto items = train_items(s.cue_source, s.cue_sets, s.no_image);
    gen::train_stage2(*model, items, sc);
    model->save(path);
    return path;
}

std::vector<LabelVector> Pipeline::cue_labels_for(int eval_index, const std::string& source,
                                                  double noisy_flip,
                                                  const std::vector<QuestionSetId>& sets) {
    std::vector<LabelVector> out;
    if (source == "none") return out;
    const synth::Dataset& ds = dataset(true);
    const Features& f = features(true);
    for (QuestionSetId qs : sets) {
        const LabelVector& gt = qs == QuestionSetId::QS1   ? ds.samples[eval_index].gt.qs1
                                : qs == QuestionSetId::QS2 ? ds.samples[eval_index].gt.qs2
                                                           : ds.samples[eval_index].gt.qs3;
        if (source == "gt") {
            out.push_back(gt);
        } else if (source == "probe") {
            Tensor row({f.embeddings.cols()});
            std::copy(f.embeddings.data.begin() + eval_index * f.embeddings.cols(),
                      f.embeddings.data.begin() + (eval_index + 1) * f.embeddings.cols(),
                      row.data.begin());
            out.push_back(probe::predict(probe(qs), row).labels);
        } else {
            const std::vector<double> rates(gt.values.size(), noisy_flip);
            out.push_back(probe::simulate_cue_source(
                gt, rates,
                derive_seed(cfg_.seed, 0x7e57ULL, static_cast<std::uint64_t>(eval_index),
                            static_cast<std::uint64_t>(gt.qs))));
        }
    }
    return out;
}

Pipeline::EvalResult Pipeline::evaluate_model(const gen::GeneratorModel& model,
                                              const EvalOptions& opt) {
    const synth::Dataset& ds = dataset(true);
    const Features& f = features(true);
    const int n = static_cast<int>(ds.size());

    std::vector<std::pair<std::string, std::string>> generated, reference;
    std::vector<evalproto::Extraction> extracted;
    EvalResult result;
    double bleu_sum = 0.0;

    json gen_rows = json::array();
    for (int i = 0; i < n; ++i) {
        const auto cues = cue_labels_for(i, opt.cue_source, opt.noisy_flip, opt.cue_sets);
        const auto entities = cue::labels_to_entities(cues, catalog_);
        const cue::CuePrompt prompt = cue::render_prompt(entities, source_enum(opt.cue_source));
        const Tensor* visual = opt.no_image ? nullptr : &f.tokens[i];
        gen::GenerateResult g = gen::generate(model, visual, prompt, cfg_.max_new_tokens);

        generated.emplace_back(ds.samples[i].id, g.text);
        reference.emplace_back(ds.samples[i].id, ds.samples[i].report.flat_text);
        extracted.push_back(
            evalproto::extract_all(g.text, catalog_, evalproto::ExtractMode::lenient));
        if (g.truncated) ++result.truncated;

        const auto bleu = evalproto::bleu_mean(
            model.vocab().tokenize_words(g.text),
            model.vocab().tokenize_words(ds.samples[i].report.flat_text));
        bleu_sum += bleu.value;

        if (visual != nullptr && g.trace.step_count() >= 1)
            result.s_text.push_back(rel::trace_reliance(g.trace).s_text);

        if (!opt.run_dir.empty()) {
            std::string trace_file;
            if (opt.write_traces) {
                trace_file = "traces/" + ds.samples[i].id + ".trc";
                rel::save_trace(opt.run_dir / trace_file, g.trace);
            }
            json row;
            row["id"] = ds.samples[i].id;
            row["cue_source"] = opt.cue_source;
            row["dropout_rate"] = 0.0;  // no dropout at inference
            row["report"] = g.text;
            row["truncated"] = g.truncated;
            row["trace_file"] = trace_file;
            gen_rows.push_back(row);
        }
    }
    result.bleu = bleu_sum / n;

    evalproto::AnswerCache cache(evalproto::extractor_fingerprint(catalog_));
    result.qs1 = evalproto::agreement_metrics(generated, reference, catalog_.qs1, catalog_, cache);
    result.qs2 = evalproto::agreement_metrics(generated, reference, catalog_.qs2, catalog_, cache);
    result.qs3 = evalproto::agreement_metrics(generated, reference, catalog_.qs3, catalog_, cache);
    result.hierarchy =
        evalproto::hierarchy_analysis(result.qs1, result.qs2, result.qs3, extracted, catalog_);

    if (!opt.run_dir.empty()) {
        std::string lines;
        for (const auto& row : gen_rows) lines += row.dump() + "\n";
        write_text_file(opt.run_dir / "generations.jsonl", lines);
        write_metrics_jsonl(opt.run_dir, result, catalog_);
    }
    return result;
}

void write_metrics_jsonl(const std::filesystem::path& run_dir, const Pipeline::EvalResult& r,
                         const QuestionCatalog& cat) {
    (void)cat;
    auto dump_report = [&](const metrics::MetricsReport& m, const std::string& name) {
        std::string lines;
        for (const auto& q : m.per_question) {
            json row;
            row["question"] = q.question;
            row["precision"] = q.precision;
            row["recall"] = q.recall;
            row["f1"] = q.f1;
            if (q.auroc) row["auroc"] = *q.auroc;
            else row["auroc"] = nullptr;
            row["support"] = q.support;
            lines += row.dump() + "\n";
        }
        json macro;
        macro["question"] = "__macro__";
        macro["precision"] = m.macro_precision;
        macro["recall"] = m.macro_recall;
        macro["f1"] = m.macro_f1;
        if (m.macro_auroc) macro["auroc"] = *m.macro_auroc;
        else macro["auroc"] = nullptr;
        macro["support"] = m.macro_count;
        lines += macro.dump() + "\n";
        write_text_file(run_dir / ("metrics-" + name + ".jsonl"), lines);
    };
    dump_report(r.qs1, "qs1");
    dump_report(r.qs2, "qs2");
    dump_report(r.qs3, "qs3");

    // hierarchy table: one row per finding, QS order
    std::string h = "finding,f1_presence,f1_laterality,f1_lobe,delta_presence_laterality,"
                    "delta_laterality_lobe\n";
    for (const auto& row : r.hierarchy.rows) {
        h += kind_name(row.kind) + "," + fmt(row.f1_presence) + "," + fmt(row.f1_laterality) +
             "," + (row.has_lobe_level ? fmt(row.f1_lobe) : "") + "," +
             fmt(row.delta_presence_laterality) + "," +
             (row.has_lobe_level ? fmt(row.delta_laterality_lobe) : "") + "\n";
    }
    h += "consistency_rate," + fmt(r.hierarchy.consistency_rate) + ",,,,\n";
    write_text_file(run_dir / "hierarchy.csv", h);
}

std::string summary_row_json(const ExperimentConfig& cfg, const EvalSummaryRow& row) {
    json j;
    j["config_hash"] = cfg.hash();
    j["train_tag"] = row.train_tag;
    j["test_setting"] = row.test_setting;
    j["qs1"] = {{"precision", row.p1}, {"recall", row.r1}, {"f1", row.f1_1}};
    j["qs2"] = {{"precision", row.p2}, {"recall", row.r2}, {"f1", row.f1_2}};
    j["qs3"] = {{"precision", row.p3}, {"recall", row.r3}, {"f1", row.f1_3}};
    j["bleu"] = row.bleu;
    if (row.s_text_mean) {
        j["s_text_mean"] = *row.s_text_mean;
        j["s_text_std"] = *row.s_text_std;
    } else {
        j["s_text_mean"] = nullptr;
        j["s_text_std"] = nullptr;
    }
    j["meteor"] = nullptr;  // reserved for externally computed values
    j["crg"] = nullptr;     // reserved for externally computed values
    j["truncated"] = row.truncated;
    return j.dump();
}

namespace {
EvalSummaryRow make_row(const std::string& train_tag, const std::string& setting,
                        const Pipeline::EvalResult& r) {
    EvalSummaryRow row;
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

std::string rows_to_csv(const std::vector<EvalSummaryRow>& rows) {
    std::string csv =
        "train_tag,test_setting,qs1_precision,qs1_recall,qs1_f1,qs2_f1,qs3_f1,bleu,"
        "s_text_mean,s_text_std,truncated\n";
    for (const auto& r : rows) {
        csv += r.train_tag + "," + r.test_setting + "," + fmt(r.p1) + "," + fmt(r.r1) + "," +
               fmt(r.f1_1) + "," + fmt(r.f1_2) + "," + fmt(r.f1_3) + "," + fmt(r.bleu) + "," +
               (r.s_text_mean ? fmt(*r.s_text_mean) : "") + "," +
               (r.s_text_std ? fmt(*r.s_text_std) : "") + "," + std::to_string(r.truncated) +
               "\n";
    }
    return csv;
}

std::vector<EvalSummaryRow> ablate_dropout(Pipeline& pipe, const std::vector<double>& rates,
                                           const std::filesystem::path& run_dir) {
    const auto sets = pipe.cfg().enabled_cue_sets();
    std::vector<EvalSummaryRow> rows;
    for (double p : rates) {
        Pipeline::Stage2Spec spec{p, "gt", sets, pipe.cfg().no_image};
        const auto path = pipe.ensure_stage2(spec);
        auto model = gen::GeneratorModel::load(path);
        const std::string tag = "gt-dcp-pd-" + pipe.stage2_tag(spec);
        for (const std::string& setting : {"gt", "probe", "noisy", "none"}) {
            if (setting == "probe")
                for (auto qs : sets) pipe.ensure_probe(qs);
            Pipeline::EvalOptions opt;
            opt.cue_source = setting;
            opt.noisy_flip = pipe.cfg().noisy_flip;
            opt.cue_sets = sets;
            opt.no_image = pipe.cfg().no_image;
            rows.push_back(make_row(tag, setting, pipe.evaluate_model(*model, opt)));
        }
    }
    if (!run_dir.empty()) write_text_file(run_dir / "dropout_grid.csv", rows_to_csv(rows));
    return rows;
}

std::vector<EvalSummaryRow> ablate_cue_train(Pipeline& pipe,
                                             const std::filesystem::path& run_dir) {
    const auto sets = pipe.cfg().enabled_cue_sets();
    for (auto qs : sets) pipe.ensure_probe(qs);
    std::vector<EvalSummaryRow> rows;

    // standalone classifier row (QS macro metrics of the probes themselves)
    {
        EvalSummaryRow row;
        row.train_tag = "classifier";
        row.test_setting = "probe";
        const auto& f = pipe.features(true);
        const synth::Dataset& ds = pipe.dataset(true);
        auto eval_probe = [&](QuestionSetId qs, double& p, double& r, double& f1v) {
            std::vector<LabelVector> gt;
            for (const auto& s : ds.samples)
                gt.push_back(qs == QuestionSetId::QS1   ? s.gt.qs1
                             : qs == QuestionSetId::QS2 ? s.gt.qs2
                                                        : s.gt.qs3);
            const auto rep = probe::evaluate_probe(pipe.probe(qs), f.embeddings, gt,
                                                   pipe.catalog().get(qs));
            p = rep.macro_precision;
            r = rep.macro_recall;
            f1v = rep.macro_f1;
        };
        eval_probe(QuestionSetId::QS1, row.p1, row.r1, row.f1_1);
        eval_probe(QuestionSetId::QS2, row.p2, row.r2, row.f1_2);
        eval_probe(QuestionSetId::QS3, row.p3, row.r3, row.f1_3);
        rows.push_back(row);
    }

    struct Case {
        const char* tag;
        const char* train_source;
        const char* test_setting;
    };
    // oracle vs predicted training signal, probed at test time; the no-cue
    // baseline closes the square
    const Case cases[] = {{"base-no-cue", "none", "none"},
                          {"dcp1-guided", "probe", "probe"},
                          {"gt-guided", "gt", "probe"}};
    for (const auto& c : cases) {
        Pipeline::Stage2Spec spec{0.0, c.train_source, sets, pipe.cfg().no_image};
        auto model = gen::GeneratorModel::load(pipe.ensure_stage2(spec));
        Pipeline::EvalOptions opt;
        opt.cue_source = c.test_setting;
        opt.noisy_flip = pipe.cfg().noisy_flip;
        opt.cue_sets = sets;
        opt.no_image = pipe.cfg().no_image;
        rows.push_back(make_row(c.tag, c.test_setting, pipe.evaluate_model(*model, opt)));
    }
    if (!run_dir.empty()) write_text_file(run_dir / "cue_train_grid.csv", rows_to_csv(rows));
    return rows;
}

void report_tables(const ExperimentConfig& cfg, const std::filesystem::path& run_dir) {
    const std::filesystem::path base = std::filesystem::path(cfg.out_dir) / "runs";
    // (train_tag, test_setting) -> summary json, last writer wins in sorted
    // directory order so reruns with identical outputs stay byte-identical
    std::map<std::pair<std::string, std::string>, json> rows;

    std::vector<std::filesystem::path> dirs;
    if (std::filesystem::exists(base))
        for (const auto& e : std::filesystem::directory_iterator(base))
            if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());

    for (const auto& dir : dirs) {
        const auto file = dir / "summary.jsonl";
        if (!std::filesystem::exists(file)) continue;
        const auto bytes = read_file(file);
        std::string line;
        for (char c : std::string(bytes.begin(), bytes.end())) {
            if (c == '\n') {
                if (!line.empty()) {
                    const json j = json::parse(line);
                    rows[{j.at("train_tag").get<std::string>(),
                          j.at("test_setting").get<std::string>()}] = j;
                }
                line.clear();
            } else {
                line += c;
            }
        }
    }

    // cue-setting table (training setting x test setting, macro metrics)
    std::string t2 = "train_tag,test_setting,qs1_precision,qs1_recall,qs1_f1,qs2_f1,qs3_f1,bleu\n";
    for (const auto& [key, j] : rows)
        t2 += key.first + "," + key.second + "," + fmt(j.at("qs1").at("precision").get<double>()) +
              "," + fmt(j.at("qs1").at("recall").get<double>()) + "," +
              fmt(j.at("qs1").at("f1").get<double>()) + "," +
              fmt(j.at("qs2").at("f1").get<double>()) + "," +
              fmt(j.at("qs3").at("f1").get<double>()) + "," + fmt(j.at("bleu").get<double>()) +
              "\n";
    write_text_file(run_dir / "table_cue_settings.csv", t2);

    // shortcut table: No-DCP rows only
    std::string t3 = "train_tag,qs1_precision,qs1_recall,qs1_f1,bleu\n";
    for (const auto& [key, j] : rows) {
        if (key.second != "none") continue;
        t3 += key.first + "," + fmt(j.at("qs1").at("precision").get<double>()) + "," +
              fmt(j.at("qs1").at("recall").get<double>()) + "," +
              fmt(j.at("qs1").at("f1").get<double>()) + "," + fmt(j.at("bleu").get<double>()) +
              "\n";
    }
    write_text_file(run_dir / "table_shortcut.csv", t3);

    // reliance table
    std::string t4 = "train_tag,test_setting,s_text_mean,s_text_std\n";
    for (const auto& [key, j] : rows) {
        if (j.at("s_text_mean").is_null()) continue;
        t4 += key.first + "," + key.second + "," + fmt(j.at("s_text_mean").get<double>()) + "," +
              fmt(j.at("s_text_std").get<double>()) + "\n";
    }
    write_text_file(run_dir / "table_reliance.csv", t4);

    // per-question bar data from the most recent metrics files
    std::string fig = "qs,question,train_tag,test_setting,f1\n";
    for (const auto& dir : dirs) {
        const auto sfile = dir / "summary.jsonl";
        if (!std::filesystem::exists(sfile)) continue;
        const auto bytes = read_file(sfile);
        const std::string content(bytes.begin(), bytes.end());
        const auto nl = content.find('\n');
        if (nl == std::string::npos) continue;
        const json j = json::parse(content.substr(0, nl));
        for (const char* qs : {"qs1", "qs2", "qs3"}) {
            const auto mfile = dir / (std::string("metrics-") + qs + ".jsonl");
            if (!std::filesystem::exists(mfile)) continue;
            const auto mb = read_file(mfile);
            std::string line;
            for (char c : std::string(mb.begin(), mb.end())) {
                if (c == '\n') {
                    if (!line.empty()) {
                        const json m = json::parse(line);
                        const std::string q = m.at("question").get<std::string>();
                        if (q != "__macro__")
                            fig += std::string(qs) + ",\"" + q + "\"," +
                                   j.at("train_tag").get<std::string>() + "," +
                                   j.at("test_setting").get<std::string>() + "," +
                                   fmt(m.at("f1").get<double>()) + "\n";
                    }
                    line.clear();
                } else {
                    line += c;
                }
            }
        }
    }
    write_text_file(run_dir / "fig_per_question.csv", fig);
}

}  // namespace dcppd::harness
