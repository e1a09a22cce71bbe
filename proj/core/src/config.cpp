#include "dcppd/config.hpp"

#include <cctype>
#include <set>
#include <thread>

#include "json.hpp"

#include "dcppd/serialize.hpp"

namespace dcppd::harness {

namespace {
using json = nlohmann::ordered_json;

// single point of truth for key names, defaults and serialization
template <typename Cfg, typename Fn>
void for_each_key(Cfg& c, Fn&& fn) {
    fn("n_train", c.n_train);
    fn("n_eval", c.n_eval);
    fn("data_seed", c.data_seed);
    fn("grid", c.grid);
    fn("prevalence", c.prevalence);
    fn("unstructured_reports", c.unstructured_reports);
    fn("backbone_seed", c.backbone_seed);
    fn("cin", c.cin);
    fn("scales", c.scales);
    fn("stages", c.stages);
    fn("patch", c.patch);
    fn("stride", c.stride);
    fn("backbone_heads", c.backbone_heads);
    fn("backbone_ffn", c.backbone_ffn);
    fn("pos_scale", c.pos_scale);
    fn("select_scale", c.select_scale);
    fn("select_stage", c.select_stage);
    fn("probe_lr", c.probe_lr);
    fn("probe_epochs", c.probe_epochs);
    fn("proj_queries", c.proj_queries);
    fn("d_model", c.d_model);
    fn("dec_blocks", c.dec_blocks);
    fn("dec_heads", c.dec_heads);
    fn("dec_ffn", c.dec_ffn);
    fn("max_len", c.max_len);
    fn("lora_rank", c.lora_rank);
    fn("lora_alpha", c.lora_alpha);
    fn("pretrain_epochs", c.pretrain_epochs);
    fn("pretrain_lr", c.pretrain_lr);
    fn("pretrain_max_ppl", c.pretrain_max_ppl);
    fn("stage1_epochs", c.stage1_epochs);
    fn("stage1_lr", c.stage1_lr);
    fn("stage2_epochs", c.stage2_epochs);
    fn("stage2_lr", c.stage2_lr);
    fn("batch", c.batch);
    fn("dropout_p", c.dropout_p);
    fn("train_cue_source", c.train_cue_source);
    fn("test_cue_source", c.test_cue_source);
    fn("noisy_flip", c.noisy_flip);
    fn("cue_sets", c.cue_sets);
    fn("no_image", c.no_image);
    fn("max_new_tokens", c.max_new_tokens);
    fn("seed", c.seed);
    fn("threads", c.threads);
    fn("out_dir", c.out_dir);
    fn("qa_endpoint", c.qa_endpoint);
}
}  // namespace

ExperimentConfig ExperimentConfig::from_json(const std::string& json_text) {
    const json j = json::parse(json_text);
    ExperimentConfig c;
    std::set<std::string> known;
    for_each_key(c, [&](const char* key, auto& field) {
        known.insert(key);
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    });
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ConfigError("unknown config key: " + key);
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return from_json(std::string(bytes.begin(), bytes.end()));
}

std::string ExperimentConfig::to_json() const {
    json j;
    for_each_key(const_cast<ExperimentConfig&>(*this),
                 [&](const char* key, auto& field) { j[key] = field; });
    return j.dump(2);
}

std::uint64_t ExperimentConfig::hash() const {
    const std::string s = to_json();
    return fnv1a_bytes(s.data(), s.size());
}

void ExperimentConfig::validate() const {
    if (n_train < 1 || n_eval < 1) throw ConfigError("dataset sizes must be >= 1");
    if (prevalence < 0.0 || prevalence > 1.0) throw ConfigError("prevalence outside [0,1]");
    if (dropout_p < 0.0 || dropout_p > 1.0) throw ConfigError("dropout_p outside [0,1]");
    if (noisy_flip < 0.0 || noisy_flip > 1.0) throw ConfigError("noisy_flip outside [0,1]");
    for (const std::string& s : {train_cue_source, test_cue_source})
        if (s != "gt" && s != "probe" && s != "noisy" && s != "none")
            throw ConfigError("cue source must be gt|probe|noisy|none, got " + s);
    if (enabled_cue_sets().empty()) throw ConfigError("cue_sets selects no question set");
    if (select_scale < 1 || select_scale > scales || select_stage < 0 || select_stage > stages)
        throw ConfigError("select_scale/select_stage outside the staged hierarchy");
}

synth::DatasetConfig ExperimentConfig::dataset_config() const {
    synth::DatasetConfig d;
    d.grid = grid;
    d.prevalence = {prevalence, prevalence, prevalence, prevalence};
    d.unstructured_style = unstructured_reports;
    return d;
}

vision::BackboneConfig ExperimentConfig::backbone_config() const {
    vision::BackboneConfig b;
    b.patch = {patch, patch, patch};
    b.strides.assign(static_cast<std::size_t>(std::max(0, scales - 1)),
                     {stride, stride, stride});
    b.scales = scales;
    b.stages = stages;
    b.cin = cin;
    b.heads = backbone_heads;
    b.ffn_hidden = backbone_ffn;
    b.pos_scale = pos_scale;
    b.seed = backbone_seed;
    return b;
}

gen::GeneratorConfig ExperimentConfig::generator_config() const {
    gen::GeneratorConfig g;
    g.projector.queries = proj_queries;
    g.projector.cin = cin;
    g.projector.hidden = d_model;
    g.decoder.d_model = d_model;
    g.decoder.blocks = dec_blocks;
    g.decoder.heads = dec_heads;
    g.decoder.ffn_hidden = dec_ffn;
    g.decoder.max_len = max_len;
    g.lora_rank = lora_rank;
    g.lora_alpha = lora_alpha;
    g.seed = derive_seed(seed, 0x6d6f64ULL);
    return g;
}

std::vector<QuestionSetId> ExperimentConfig::enabled_cue_sets() const {
    std::vector<QuestionSetId> out;
    std::string cur;
    auto flush = [&] {
        if (cur.empty()) return;
        if (cur == "qs1") out.push_back(QuestionSetId::QS1);
        else if (cur == "qs2") out.push_back(QuestionSetId::QS2);
        else if (cur == "qs3") out.push_back(QuestionSetId::QS3);
        else throw ConfigError("cue_sets: unknown set " + cur);
        cur.clear();
    };
    for (char ch : cue_sets) {
        if (ch == ',') flush();
        else if (ch != ' ') cur += static_cast<char>(std::tolower(ch));
    }
    flush();
    return out;
}

int ExperimentConfig::resolved_threads() const {
    if (threads > 0) return threads;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace dcppd::harness
