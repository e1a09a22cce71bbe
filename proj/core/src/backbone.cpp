#include "dcppd/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

#include "dcppd/serialize.hpp"

namespace dcppd::vision {

namespace {
const char* kAxisNames[3] = {"H", "W", "D"};
}

void BackboneConfig::validate() const {
    if (scales < 1) throw ConfigError("scale count must be >= 1");
    if (static_cast<int>(strides.size()) < scales - 1)
        throw ConfigError("need one stride triple per pooling level (scales - 1)");
    if (stages < scales)
        throw ConfigError("stage count " + std::to_string(stages) +
                          " is smaller than scale count " + std::to_string(scales) +
                          "; the pooled embedding needs stage l for every scale l");
    if (cin % heads != 0) throw ConfigError("cin must be divisible by heads");
}

BackboneConfig BackboneConfig::paper_preset() {
    BackboneConfig c;
    c.patch = {8, 8, 4};
    c.strides = {{8, 8, 1}, {4, 4, 4}};
    c.scales = 3;
    c.stages = 3;
    c.cin = 384;
    c.heads = 6;
    c.ffn_hidden = 768;
    return c;
}

Dim3 patch_grid_shape(const Dim3& vol, const std::array<int, 3>& patch) {
    Dim3 out{};
    for (int a = 0; a < 3; ++a) {
        if (patch[a] < 1 || vol[a] % patch[a] != 0)
            throw ShapeError(std::string("patchify: axis ") + kAxisNames[a] + " size " +
                             std::to_string(vol[a]) + " not divisible by patch " +
                             std::to_string(patch[a]));
        out[a] = vol[a] / patch[a];
    }
    return out;
}

std::vector<Dim3> hierarchy_shapes(const Dim3& fine,
                                   const std::vector<std::array<int, 3>>& strides) {
    std::vector<Dim3> shapes{fine};
    for (std::size_t i = 0; i < strides.size(); ++i) {
        Dim3 next{};
        for (int a = 0; a < 3; ++a) {
            const auto s = strides[i][a];
            if (s < 1 || shapes.back()[a] % s != 0)
                throw ShapeError("hierarchy: scale " + std::to_string(i + 2) + " axis " +
                                 kAxisNames[a] + " size " + std::to_string(shapes.back()[a]) +
                                 " not divisible by stride " + std::to_string(s));
            next[a] = shapes.back()[a] / s;
        }
        shapes.push_back(next);
    }
    return shapes;
}

const TokenGrid& StagedHierarchy::grid(int scale, int stage) const {
    if (stage < 0 || stage >= static_cast<int>(by_stage.size()) || scale < 1 ||
        scale > static_cast<int>(by_stage[stage].size()))
        throw std::out_of_range("no grid at scale " + std::to_string(scale) + ", stage " +
                                std::to_string(stage));
    return by_stage[stage][scale - 1];
}

namespace {

std::vector<int> make_parent_map(const Dim3& fine, const std::array<int, 3>& stride) {
    const auto [X, Y, Z] = fine;
    const std::int64_t Yc = Y / stride[1], Zc = Z / stride[2];
    std::vector<int> map(static_cast<std::size_t>(X * Y * Z));
    for (std::int64_t x = 0; x < X; ++x)
        for (std::int64_t y = 0; y < Y; ++y)
            for (std::int64_t z = 0; z < Z; ++z)
                map[(x * Y + y) * Z + z] = static_cast<int>(
                    ((x / stride[0]) * Yc + y / stride[1]) * Zc + z / stride[2]);
    return map;
}

}  // namespace

Backbone::Backbone(BackboneConfig config, std::int64_t vol_channels, const Dim3& vol_dims)
    : config_(std::move(config)), vol_channels_(vol_channels), vol_dims_(vol_dims) {
    config_.validate();
    const Dim3 fine = patch_grid_shape(vol_dims_, config_.patch);
    scale_dims_ = hierarchy_shapes(
        fine, {config_.strides.begin(), config_.strides.begin() + (config_.scales - 1)});

    for (int l = 1; l < config_.scales; ++l)
        parent_maps_.push_back(make_parent_map(scale_dims_[l - 1], config_.strides[l - 1]));

    Rng rng(config_.seed);
    const std::int64_t fan_in =
        vol_channels_ * config_.patch[0] * config_.patch[1] * config_.patch[2];
    const std::int64_t n_fine = fine[0] * fine[1] * fine[2];
    stem_w = Parameter{Tensor::randn(config_.cin, fan_in, 1.0 / std::sqrt(double(fan_in)), rng)};
    stem_b = Parameter{Tensor({config_.cin})};
    stem_pos = Parameter{Tensor::randn(n_fine, config_.cin, config_.pos_scale, rng)};

    stages.resize(config_.stages);
    for (auto& st : stages) {
        nn::init_layer_norm(st.ln1, config_.cin);
        nn::init_layer_norm(st.ln2, config_.cin);
        nn::init_attention(st.attn, config_.cin, config_.heads, rng, config_.zero_residual);
        nn::init_linear(st.exch_up, config_.cin, config_.cin, rng);
        nn::init_linear(st.exch_down, config_.cin, config_.cin, rng);
        nn::init_ffn(st.ffn, config_.cin, config_.ffn_hidden, rng, config_.zero_residual);
    }

    params_.add("stem.w", stem_w);
    params_.add("stem.b", stem_b);
    params_.add("stem.pos", stem_pos);
    for (int u = 0; u < config_.stages; ++u) {
        const std::string p = "stage" + std::to_string(u + 1);
        nn::add_params(params_, p + ".ln1", stages[u].ln1);
        nn::add_params(params_, p + ".ln2", stages[u].ln2);
        nn::add_params(params_, p + ".attn", stages[u].attn);
        nn::add_params(params_, p + ".up", stages[u].exch_up);
        nn::add_params(params_, p + ".down", stages[u].exch_down);
        nn::add_params(params_, p + ".ffn", stages[u].ffn);
    }
}

namespace {

// gathers each patch's voxels (channel-major within the patch) into a row
Tensor patch_matrix(const Tensor& volume, const std::array<int, 3>& patch, const Dim3& fine) {
    const std::int64_t C = volume.shape[0], H = volume.shape[1], W = volume.shape[2],
                       D = volume.shape[3];
    const std::int64_t F = C * patch[0] * patch[1] * patch[2];
    Tensor P({fine[0] * fine[1] * fine[2], F});
    std::int64_t row = 0;
    for (std::int64_t px = 0; px < fine[0]; ++px)
        for (std::int64_t py = 0; py < fine[1]; ++py)
            for (std::int64_t pz = 0; pz < fine[2]; ++pz) {
                std::int64_t col = 0;
                for (std::int64_t c = 0; c < C; ++c)
                    for (int dx = 0; dx < patch[0]; ++dx)
                        for (int dy = 0; dy < patch[1]; ++dy)
                            for (int dz = 0; dz < patch[2]; ++dz) {
                                const std::int64_t x = px * patch[0] + dx;
                                const std::int64_t y = py * patch[1] + dy;
                                const std::int64_t z = pz * patch[2] + dz;
                                P.data[row * F + col] =
                                    volume.data[((c * H + x) * W + y) * D + z];
                                ++col;
                            }
                ++row;
            }
    return P;
}

}  // namespace

int Backbone::forward_from_tokens(Graph& g, int fine_tokens, ForwardNodes& out) const {
    const int L = config_.scales, U = config_.stages;
    out.by_stage.assign(U + 1, std::vector<int>(L));

    // stage 0: the raw hierarchy
    out.by_stage[0][0] = fine_tokens;
    for (int l = 2; l <= L; ++l) {
        const auto& d = scale_dims_[l - 1];
        out.by_stage[0][l - 1] =
            g.group_mean_rows(out.by_stage[0][l - 2], parent_maps_[l - 2],
                              static_cast<int>(d[0] * d[1] * d[2]));
    }

    for (int u = 1; u <= U; ++u) {
        const StageParams& st = stages[u - 1];
        std::vector<int> y(L), n(L);
        for (int l = 1; l <= L; ++l) {
            const int x = out.by_stage[u - 1][l - 1];
            y[l - 1] = g.add(x, nn::self_attention(g, st.attn, nullptr,
                                                   nn::apply(g, st.ln1, x), false));
            n[l - 1] = nn::apply(g, st.ln2, y[l - 1]);
        }
        for (int l = 1; l <= L; ++l) {
            int z = n[l - 1];
            if (l < L) {
                const auto& d = scale_dims_[l - 1];
                const int parent = g.expand_rows(n[l], parent_maps_[l - 1],
                                                 d[0] * d[1] * d[2]);
                z = g.add(z, nn::apply(g, st.exch_down, parent));
            }
            if (l > 1) {
                const auto& d = scale_dims_[l - 1];
                const int child = g.group_mean_rows(n[l - 2], parent_maps_[l - 2],
                                                    static_cast<int>(d[0] * d[1] * d[2]));
                z = g.add(z, nn::apply(g, st.exch_up, child));
            }
            out.by_stage[u][l - 1] = g.add(y[l - 1], nn::apply(g, st.ffn, z));
        }
    }
    return out.by_stage[U][0];
}

Backbone::ForwardNodes Backbone::forward(Graph& g, const Tensor& volume) const {
    require(volume.shape.size() == 4 && volume.shape[0] == vol_channels_ &&
                volume.shape[1] == vol_dims_[0] && volume.shape[2] == vol_dims_[1] &&
                volume.shape[3] == vol_dims_[2],
            "backbone: volume shape mismatch " + shape_str(volume));
    const Dim3 fine = scale_dims_[0];
    int P = g.input(patch_matrix(volume, config_.patch, fine));
    int tokens = g.add(g.add_bias(g.matmul(P, g.param(stem_w), false, true), g.param(stem_b)),
                       g.param(stem_pos));
    ForwardNodes out;
    forward_from_tokens(g, tokens, out);
    return out;
}

int Backbone::pool_embedding_node(Graph& g, const ForwardNodes& f) const {
    std::vector<int> segs;
    for (int l = 1; l <= config_.scales; ++l)
        segs.push_back(g.mean_rows(f.by_stage[l][l - 1]));
    return segs.size() == 1 ? segs[0] : g.cols_concat(segs);
}

TokenGrid Backbone::patchify(const synth::PhantomVolume& volume) const {
    Graph g;
    const Dim3 fine = scale_dims_[0];
    int P = g.input(patch_matrix(volume.data, config_.patch, fine));
    int tokens = g.add(g.add_bias(g.matmul(P, g.param(stem_w), false, true), g.param(stem_b)),
                       g.param(stem_pos));
    TokenGrid out;
    out.tokens = g.val(tokens);
    out.dims = fine;
    out.scale_index = 1;
    out.stage_index = 0;
    return out;
}

StagedHierarchy Backbone::encode(const synth::PhantomVolume& volume) const {
    Graph g;
    ForwardNodes f = forward(g, volume.data);
    StagedHierarchy out;
    out.by_stage.resize(f.by_stage.size());
    for (std::size_t u = 0; u < f.by_stage.size(); ++u)
        for (int l = 1; l <= config_.scales; ++l) {
            TokenGrid tg;
            tg.tokens = g.val(f.by_stage[u][l - 1]);
            tg.dims = scale_dims_[l - 1];
            tg.scale_index = l;
            tg.stage_index = static_cast<int>(u);
            out.by_stage[u].push_back(std::move(tg));
        }
    return out;
}

TokenHierarchy build_hierarchy(const TokenGrid& fine,
                               const std::vector<std::array<int, 3>>& strides, int scales) {
    if (scales < 1) throw ConfigError("scale count must be >= 1");
    if (static_cast<int>(strides.size()) < scales - 1)
        throw ConfigError("need one stride triple per pooling level");
    const auto shapes = hierarchy_shapes(
        fine.dims, {strides.begin(), strides.begin() + (scales - 1)});

    TokenHierarchy h;
    h.grids.push_back(fine);
    h.patch = {0, 0, 0};
    h.strides.assign(strides.begin(), strides.begin() + (scales - 1));
    Graph g;
    int cur = g.input_ref(&fine.tokens);
    for (int l = 2; l <= scales; ++l) {
        const auto map = make_parent_map(shapes[l - 2], strides[l - 2]);
        const auto& d = shapes[l - 1];
        cur = g.group_mean_rows(cur, map, static_cast<int>(d[0] * d[1] * d[2]));
        TokenGrid tg;
        tg.tokens = g.val(cur);
        tg.dims = d;
        tg.scale_index = l;
        tg.stage_index = fine.stage_index;
        h.grids.push_back(std::move(tg));
    }
    return h;
}

TokenSequence select_tokens(const StagedHierarchy& staged, int scale, int stage) {
    return staged.grid(scale, stage).tokens;
}

MultiScaleEmbedding pool_embedding(const StagedHierarchy& staged) {
    MultiScaleEmbedding emb;
    const int L = staged.scale_count();
    std::vector<double> acc;
    for (int l = 1; l <= L; ++l) {
        const TokenGrid& tg = staged.grid(l, l);  // stage matched to scale
        const std::int64_t N = tg.tokens.rows(), C = tg.tokens.cols();
        std::vector<double> mean(static_cast<std::size_t>(C), 0.0);
        for (std::int64_t r = 0; r < N; ++r)
            for (std::int64_t c = 0; c < C; ++c) mean[c] += tg.tokens.data[r * C + c];
        for (auto& m : mean) m /= static_cast<double>(N);
        acc.insert(acc.end(), mean.begin(), mean.end());
        emb.provenance.emplace_back(l, l);
    }
    emb.vector = Tensor({1, static_cast<std::int64_t>(acc.size())});
    emb.vector.data = std::move(acc);
    return emb;
}

void Backbone::save(const std::filesystem::path& path) const {
    nlohmann::ordered_json cfg;
    cfg["kind"] = "backbone";
    cfg["patch"] = config_.patch;
    cfg["strides"] = config_.strides;
    cfg["scales"] = config_.scales;
    cfg["stages"] = config_.stages;
    cfg["cin"] = config_.cin;
    cfg["heads"] = config_.heads;
    cfg["ffn_hidden"] = config_.ffn_hidden;
    cfg["pos_scale"] = config_.pos_scale;
    cfg["seed"] = config_.seed;
    cfg["zero_residual"] = config_.zero_residual;
    cfg["vol_channels"] = vol_channels_;
    cfg["vol_dims"] = vol_dims_;

    std::vector<std::pair<std::string, const Tensor*>> tensors;
    for (std::size_t i = 0; i < params_.size(); ++i)
        tensors.emplace_back(params_.name(i), &params_[i].value);
    save_checkpoint(path, cfg.dump(), tensors);
}

Backbone Backbone::load(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path);
    auto cfg = nlohmann::ordered_json::parse(ck.config_json);
    BackboneConfig c;
    c.patch = cfg.at("patch").get<std::array<int, 3>>();
    c.strides = cfg.at("strides").get<std::vector<std::array<int, 3>>>();
    c.scales = cfg.at("scales").get<int>();
    c.stages = cfg.at("stages").get<int>();
    c.cin = cfg.at("cin").get<int>();
    c.heads = cfg.at("heads").get<int>();
    c.ffn_hidden = cfg.at("ffn_hidden").get<int>();
    c.pos_scale = cfg.at("pos_scale").get<double>();
    c.seed = cfg.at("seed").get<std::uint64_t>();
    c.zero_residual = cfg.at("zero_residual").get<bool>();
    Backbone b(c, cfg.at("vol_channels").get<std::int64_t>(), cfg.at("vol_dims").get<Dim3>());
    for (std::size_t i = 0; i < b.params_.size(); ++i) {
        const Tensor* t = ck.find(b.params_.name(i));
        if (t == nullptr) throw std::runtime_error("checkpoint missing tensor " + b.params_.name(i));
        require(t->shape == b.params_[i].value.shape, "checkpoint tensor shape mismatch");
        b.params_[i].value = *t;
    }
    return b;
}

}  // namespace dcppd::vision
