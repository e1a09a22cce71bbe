#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "dcppd/nn.hpp"
#include "dcppd/synthdata.hpp"
#include "dcppd/tape.hpp"

namespace dcppd::vision {

using Dim3 = std::array<std::int64_t, 3>;

struct BackboneConfig {
    std::array<int, 3> patch = {4, 4, 4};
    // strides[i] downsamples scale i+1 -> i+2; size = scales - 1
    std::vector<std::array<int, 3>> strides = {{2, 2, 2}, {2, 2, 2}};
    int scales = 3;  // L
    int stages = 3;  // U, must be >= L
    int cin = 32;
    int heads = 4;
    int ffn_hidden = 64;
    double pos_scale = 0.5;  // stddev of the per-position stem bias
    std::uint64_t seed = 5;
    bool zero_residual = false;  // zero attention/FFN output projections

    void validate() const;

    // toy default is the struct itself; the production-scale preset mirrors
    // the published architecture shapes
    static BackboneConfig paper_preset();
};

// --- shape calculus (usable without allocating any tensors) -------------

// fine grid spatial shape after the patchify stem; throws naming the axis
Dim3 patch_grid_shape(const Dim3& vol, const std::array<int, 3>& patch);
// per-scale spatial shapes; throws naming the failing scale
std::vector<Dim3> hierarchy_shapes(const Dim3& fine,
                                   const std::vector<std::array<int, 3>>& strides);
inline std::int64_t embedding_length(const BackboneConfig& c) {
    return static_cast<std::int64_t>(c.scales) * c.cin;
}

// --- data types ----------------------------------------------------------

// Token grid stored flattened: row n = (x * Y + y) * Z + z, i.e. x-major,
// then y, then z. `dims` keeps the spatial shape.
struct TokenGrid {
    Tensor tokens;  // [N x C]
    Dim3 dims{};
    int scale_index = 1;
    int stage_index = 0;

    std::int64_t n_tokens() const { return tokens.rows(); }
};

struct TokenHierarchy {
    std::vector<TokenGrid> grids;  // grids[l-1] = scale l
    std::array<int, 3> patch{};
    std::vector<std::array<int, 3>> strides;

    int scale_count() const { return static_cast<int>(grids.size()); }
};

// h^(l)_u for l = 1..L, u = 0..U
struct StagedHierarchy {
    std::vector<std::vector<TokenGrid>> by_stage;  // [u][l-1]

    int stage_count() const { return static_cast<int>(by_stage.size()) - 1; }
    int scale_count() const { return by_stage.empty() ? 0 : static_cast<int>(by_stage[0].size()); }
    const TokenGrid& grid(int scale, int stage) const;
};

struct MultiScaleEmbedding {
    Tensor vector;                                  // [1 x L*C]
    std::vector<std::pair<int, int>> provenance;    // (scale, stage) per segment
};

using TokenSequence = Tensor;  // [N x C], row order as TokenGrid

// --- model ----------------------------------------------------------------

struct StageParams {
    nn::LayerNorm ln1, ln2;
    nn::Attention attn;
    nn::Linear exch_up, exch_down;  // cross-scale mean-broadcast projections
    nn::Ffn ffn;
};

class Backbone {
public:
    Backbone(BackboneConfig config, std::int64_t vol_channels, const Dim3& vol_dims);

    const BackboneConfig& config() const { return config_; }
    const Dim3& vol_dims() const { return vol_dims_; }
    std::int64_t vol_channels() const { return vol_channels_; }
    const std::vector<Dim3>& scale_dims() const { return scale_dims_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    // tape forward: node ids for every h^(l)_u
    struct ForwardNodes {
        std::vector<std::vector<int>> by_stage;  // [u][l-1]
    };
    ForwardNodes forward(Graph& g, const Tensor& volume) const;
    int pool_embedding_node(Graph& g, const ForwardNodes& f) const;

    // materialized (no-grad) paths
    TokenGrid patchify(const synth::PhantomVolume& volume) const;
    StagedHierarchy encode(const synth::PhantomVolume& volume) const;

    void save(const std::filesystem::path& path) const;
    static Backbone load(const std::filesystem::path& path);

    Parameter stem_w, stem_b, stem_pos;
    std::vector<StageParams> stages;

    // row -> parent row map from scale l to scale l+1 (index l-1)
    const std::vector<int>& parent_map(int scale) const { return parent_maps_[scale - 1]; }

private:
    int forward_from_tokens(Graph& g, int fine_tokens, ForwardNodes& out) const;

    BackboneConfig config_;
    std::int64_t vol_channels_ = 0;
    Dim3 vol_dims_{};
    std::vector<Dim3> scale_dims_;
    std::vector<std::vector<int>> parent_maps_;
    ParamSet params_;
};

// Standalone hierarchy construction by non-overlapping mean pooling.
TokenHierarchy build_hierarchy(const TokenGrid& fine,
                               const std::vector<std::array<int, 3>>& strides, int scales);

// Row-major flattening of a stored grid; throws std::out_of_range when the
// (scale, stage) pair does not exist.
TokenSequence select_tokens(const StagedHierarchy& staged, int scale, int stage);

// Eq-style pooled embedding: mean over tokens of h^(l)_l, concatenated in
// scale order.
MultiScaleEmbedding pool_embedding(const StagedHierarchy& staged);

}  // namespace dcppd::vision
