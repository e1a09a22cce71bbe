#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dcppd/backbone.hpp"
#include "dcppd/generator.hpp"
#include "dcppd/synthdata.hpp"

namespace dcppd::harness {

// Flat-key declarative experiment configuration. Every key has a default
// and unknown keys are rejected, so a config file is always a complete,
// replayable record of a run.
struct ExperimentConfig {
    // dataset
    int n_train = 2000;
    int n_eval = 500;
    std::uint64_t data_seed = 11;
    int grid = 32;
    double prevalence = 0.25;
    bool unstructured_reports = false;

    // backbone (frozen, seeded)
    std::uint64_t backbone_seed = 5;
    int cin = 32;
    int scales = 3;
    int stages = 3;
    int patch = 4;
    int stride = 2;
    int backbone_heads = 4;
    int backbone_ffn = 64;
    double pos_scale = 0.5;
    int select_scale = 2;
    int select_stage = 2;

    // probes
    double probe_lr = 1e-3;
    int probe_epochs = 400;

    // generator
    int proj_queries = 16;
    int d_model = 128;
    int dec_blocks = 4;
    int dec_heads = 4;
    int dec_ffn = 256;
    int max_len = 192;
    int lora_rank = 8;
    double lora_alpha = 16.0;

    // training
    int pretrain_epochs = 8;
    double pretrain_lr = 1e-3;
    double pretrain_max_ppl = 2.0;
    int stage1_epochs = 2;
    double stage1_lr = 1e-3;
    int stage2_epochs = 3;
    double stage2_lr = 5e-4;
    int batch = 16;
    double dropout_p = 0.3;
    std::string train_cue_source = "gt";  // gt | probe | noisy | none
    std::string test_cue_source = "gt";   // gt | probe | noisy | none
    double noisy_flip = 0.1;
    std::string cue_sets = "qs1,qs2,qs3";
    bool no_image = false;
    int max_new_tokens = 96;

    // run
    std::uint64_t seed = 1;
    int threads = 0;  // 0 = hardware concurrency
    std::string out_dir = "runs";
    std::string qa_endpoint;

    static ExperimentConfig from_json(const std::string& json_text);
    static ExperimentConfig from_file(const std::filesystem::path& path);
    std::string to_json() const;  // canonical key order
    std::uint64_t hash() const;

    synth::DatasetConfig dataset_config() const;
    vision::BackboneConfig backbone_config() const;
    gen::GeneratorConfig generator_config() const;
    std::vector<QuestionSetId> enabled_cue_sets() const;
    int resolved_threads() const;
    void validate() const;
};

}  // namespace dcppd::harness
