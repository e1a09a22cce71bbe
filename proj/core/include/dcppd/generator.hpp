#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dcppd/cueprompt.hpp"
#include "dcppd/nn.hpp"
#include "dcppd/questions.hpp"
#include "dcppd/reliance.hpp"

namespace dcppd::gen {

struct VocabularyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FreezeViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline const char* kQueryText = "Generate the findings report.";

// Closed word-level vocabulary over the report grammar, the cue phrase
// table and the query instruction, plus the special tokens.
class Vocabulary {
public:
    static Vocabulary build(const QuestionCatalog& cat);
    static Vocabulary from_words(std::vector<std::string> words);  // words after the specials

    int pad() const { return 0; }
    int bos() const { return 1; }
    int eos() const { return 2; }
    int img() const { return 3; }
    int sep() const { return 4; }

    int size() const { return static_cast<int>(words_.size()); }
    const std::string& word(int id) const { return words_.at(id); }
    bool is_special(int id) const { return id < 5; }
    int id(const std::string& word) const;  // throws VocabularyError naming the word

    // [BOS, words..., EOS]
    std::vector<int> tokenize(const std::string& text) const;
    // word ids only, no specials
    std::vector<int> tokenize_words(const std::string& text) const;
    // specials are skipped; output is canonical spacing
    std::string detokenize(const std::vector<int>& ids) const;

    const std::vector<std::string>& words() const { return words_; }
    std::uint64_t fingerprint() const;

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

struct ProjectorConfig {
    int queries = 16;  // M
    std::int64_t cin = 32;
    std::int64_t hidden = 128;
};

struct DecoderConfig {
    std::int64_t d_model = 128;
    int blocks = 4;
    int heads = 4;
    std::int64_t ffn_hidden = 256;
    std::int64_t max_len = 192;
};

struct GeneratorConfig {
    ProjectorConfig projector;
    DecoderConfig decoder;
    int lora_rank = 8;
    double lora_alpha = 16.0;
    std::uint64_t seed = 7;
};

// Prompt layout [T_img ; T_disc ; T_qry]; regions are half-open and cover
// the prompt. query_ids carries the BOS that ends the prompt.
struct PromptSequence {
    Tensor t_img;  // [M x d_model]; zero rows in the no-image setting
    std::vector<int> cue_ids;
    std::vector<int> query_ids;
    struct Region {
        int begin = 0, end = 0;
        bool operator==(const Region&) const = default;
    };
    Region image, text, query;
    cue::CuePrompt cue;

    int length() const { return query.end; }
    std::string to_json() const;
    static PromptSequence from_json(const std::string& json_text);
};

class GeneratorModel;

PromptSequence assemble_prompt(Tensor t_img, const cue::CuePrompt& cue,
                               std::vector<int> query_ids, const Vocabulary& vocab);

// Query-token cross-attention pooling into M slots, then a two-layer GELU
// MLP into decoder space. Output is invariant to permuting the input
// tokens; position information, if any, must come from the backbone.
Tensor project(const GeneratorModel& m, const Tensor& visual_tokens);

class GeneratorModel {
public:
    GeneratorModel(GeneratorConfig config, Vocabulary vocab);
    GeneratorModel(const GeneratorModel&) = delete;
    GeneratorModel& operator=(const GeneratorModel&) = delete;

    std::unique_ptr<GeneratorModel> clone() const;

    const GeneratorConfig& config() const { return config_; }
    const Vocabulary& vocab() const { return vocab_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    // zero-initialized B keeps the adapted model identical to the base
    void attach_adapters(std::uint64_t seed);
    bool adapters_attached() const { return adapters_attached_; }

    std::vector<char> mask_for_prefixes(const std::vector<std::string>& prefixes) const;
    std::uint64_t checksum(const std::string& prefix) const { return params_.checksum(prefix); }

    void save(const std::filesystem::path& path) const;
    static std::unique_ptr<GeneratorModel> load(const std::filesystem::path& path);

    // decoder
    Parameter tok_embed;  // [V x d]
    Parameter pos_embed;  // [max_len x d]
    struct Block {
        nn::LayerNorm ln1, ln2;
        nn::Attention attn;
        nn::Ffn ffn;
    };
    std::vector<Block> blocks;
    nn::LayerNorm ln_final;
    nn::Linear head;
    std::vector<nn::AttentionAdapters> adapters;  // per block when attached

    // projector
    Parameter proj_queries;  // [M x cin]
    nn::Linear proj_key, proj_value, proj_fc1, proj_fc2;

    // tape forward over an assembled sequence; returns the logits node
    int logits_node(Graph& g, const Tensor* visual, const std::vector<int>& token_ids) const;
    int projector_node(Graph& g, int visual_tokens) const;

private:
    void register_params();

    GeneratorConfig config_;
    Vocabulary vocab_;
    ParamSet params_;
    bool adapters_attached_ = false;
};

// Full-sequence logits without gradients (shared by tests and training
// diagnostics). token_ids = cue + query(+BOS) + report ids.
Tensor forward_logits(const GeneratorModel& m, const Tensor* visual,
                      const std::vector<int>& token_ids);

struct VlmItem {
    const Tensor* visual = nullptr;           // selected backbone tokens, null = no image
    std::vector<LabelVector> cue_labels;      // source labels for cue construction
    std::vector<int> report_ids;              // target report words
};

struct VlmTrainConfig {
    int epochs = 3;
    int batch = 16;
    double lr = 3e-4;
    std::uint64_t seed = 1;
    int threads = 1;
    bool record_masks = false;
};

struct Stage2Config {
    VlmTrainConfig train;
    double dropout_p = 0.3;
    cue::CueSource cue_source = cue::CueSource::gt;
    const QuestionCatalog* catalog = nullptr;
};

struct TrainReport {
    std::vector<double> batch_losses;
    double final_loss = 0.0;
    // kept-entity flags per (epoch, item) when record_masks is on
    std::vector<std::vector<std::uint8_t>> mask_log;
};

double perplexity(const GeneratorModel& m, const std::vector<std::vector<int>>& reports);

// Next-token training on report text alone (no image, no cues).
TrainReport pretrain_decoder(GeneratorModel& m, const std::vector<std::vector<int>>& reports,
                             const VlmTrainConfig& cfg);

// Stage 1: only the projector trains; the decoder is frozen (checksum
// asserted). Prompts carry no cue region.
TrainReport train_stage1(GeneratorModel& m, const std::vector<VlmItem>& items,
                         const VlmTrainConfig& cfg);

// Stage 2: projector + adapters train; base decoder weights frozen
// (checksum asserted). Cue entities pass through prompt dropout with a
// fresh mask per sample per epoch.
TrainReport train_stage2(GeneratorModel& m, const std::vector<VlmItem>& items,
                         const Stage2Config& cfg);

struct GenerateResult {
    std::string text;
    std::vector<int> token_ids;  // generated words, specials stripped
    rel::AttentionTrace trace;
    bool truncated = false;
};

// Greedy decoding with KV caching; returns the per-step attention over the
// prompt, averaged over heads and layers and renormalized over prompt
// positions.
GenerateResult generate(const GeneratorModel& m, const Tensor* visual,
                        const cue::CuePrompt& cue, int max_new_tokens);

}  // namespace dcppd::gen
