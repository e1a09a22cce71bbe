#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dcppd/questions.hpp"
#include "dcppd/tensor.hpp"

namespace dcppd::synth {

struct InvariantError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FindingSpec {
    FindingKind kind;
    Laterality laterality;
    std::optional<Lobe> lobe;  // never set for pleural effusion
    int extent = 1;            // voxel radius
    double intensity = 0.5;    // additive peak, in (0, 1]
};

struct WindowSpec {
    double lo = 0.0, hi = 1.0;
    std::string name;
};

struct DatasetConfig {
    int grid = 32;  // cubic H = W = D
    std::vector<WindowSpec> windows = {
        {0.0, 1.0, "full"}, {0.1, 0.6, "low"}, {0.5, 1.0, "high"}};
    // per plantable kind, in kAllKinds order (nodule, consolidation, ggo, effusion)
    std::array<double, 4> prevalence = {0.25, 0.25, 0.25, 0.25};
    std::array<int, 4> extent = {2, 5, 4, 3};
    std::array<double, 4> intensity = {0.85, 0.55, 0.40, 0.70};
    double noise = 0.05;
    bool full_question_sets = false;  // full 18-question QS1 instead of the toy subset
    bool unstructured_style = false;  // single section, shuffled sentence order

    QuestionCatalog catalog() const {
        return full_question_sets ? QuestionCatalog::full() : QuestionCatalog::toy();
    }
    void validate() const;  // throws ConfigError
};

struct PhantomVolume {
    Tensor data;  // shape [C, H, W, D]
    std::vector<std::string> channel_descriptors;

    std::int64_t channels() const { return data.shape[0]; }
    std::int64_t dim(int axis) const { return data.shape[1 + axis]; }
    double vox(std::int64_t c, std::int64_t x, std::int64_t y, std::int64_t z) const {
        const auto& s = data.shape;
        return data.data[((c * s[1] + x) * s[2] + y) * s[3] + z];
    }
};

struct GroundTruth {
    std::vector<FindingSpec> findings;
    LabelVector qs1, qs2, qs3;
};

struct StructuredReport {
    // ordered section name -> sentences
    std::vector<std::pair<std::string, std::vector<std::string>>> sections;
    std::string flat_text;
};

// Axis-aligned half-open voxel box.
struct Region {
    std::array<std::int64_t, 3> lo, hi;
};

// Laterality splits the x axis; lobes split z within a hemivolume (left
// 2-way, right 3-way). Fixed and disjoint so lobar localization is a pure
// geometry question.
Region lobe_region(Lobe l, int grid);
Region side_region(Laterality s, int grid);

LabelVector labels_qs1(const std::vector<FindingSpec>& findings, const QuestionSet& qs1);
LabelVector labels_qs2(const std::vector<FindingSpec>& findings);
LabelVector labels_qs3(const std::vector<FindingSpec>& findings);
GroundTruth ground_truth_from(std::vector<FindingSpec> findings, const QuestionCatalog& cat);
bool hierarchy_consistent(const GroundTruth& gt, const QuestionCatalog& cat);

// Findings-only sampling path; generate_phantom paints these into a volume.
std::vector<FindingSpec> sample_findings(std::uint64_t seed, const DatasetConfig& config);

std::pair<PhantomVolume, GroundTruth> generate_phantom(std::uint64_t seed,
                                                       const DatasetConfig& config);

// channel c = clamp((raw - lo_c) / (hi_c - lo_c), 0, 1)
PhantomVolume apply_windows(const Tensor& raw, const std::vector<WindowSpec>& windows);

StructuredReport render_report(const GroundTruth& gt, std::uint64_t style_seed,
                               const DatasetConfig& config);

struct Sample {
    std::string id;
    GroundTruth gt;
    StructuredReport report;
};

struct Dataset {
    DatasetConfig config;
    std::uint64_t seed = 0;
    std::vector<Sample> samples;
    std::filesystem::path dir;  // volumes stay on disk

    std::size_t size() const { return samples.size(); }
};

// Writes volumes/, labels/, reports/ and manifest.json under out_dir.
Dataset make_dataset(int n, std::uint64_t seed, const DatasetConfig& config,
                     const std::filesystem::path& out_dir);
Dataset load_dataset(const std::filesystem::path& dir);
PhantomVolume load_volume(const std::filesystem::path& dataset_dir, const std::string& id);

void save_volume(const std::filesystem::path& path, const PhantomVolume& v);
PhantomVolume read_volume(const std::filesystem::path& path);

std::string sample_id(int index);
std::uint64_t item_seed(std::uint64_t dataset_seed, int index);

}  // namespace dcppd::synth
