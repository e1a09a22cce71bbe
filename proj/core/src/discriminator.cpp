#include "dcppd/discriminator.hpp"

#include <cmath>

#include "json.hpp"

#include "dcppd/nn.hpp"
#include "dcppd/serialize.hpp"

namespace dcppd::probe {

LinearProbe::LinearProbe(QuestionSetId qs_, std::int64_t classes, std::int64_t embed_dim,
                         std::uint64_t seed) {
    qs = qs_;
    Rng rng(seed);
    weights = Parameter{Tensor::randn(classes, embed_dim, 0.01, rng)};
    bias = Parameter{Tensor({classes})};
    thresholds = Tensor({classes});
    thresholds.fill(0.5);
    trained_class.assign(static_cast<std::size_t>(classes), 1);
    register_params();
}

LinearProbe& LinearProbe::operator=(const LinearProbe& o) {
    qs = o.qs;
    weights = Parameter{o.weights.value};
    bias = Parameter{o.bias.value};
    thresholds = o.thresholds;
    trained_class = o.trained_class;
    params_ = ParamSet();
    register_params();
    return *this;
}

void LinearProbe::register_params() {
    params_.add("probe.w", weights);
    params_.add("probe.b", bias);
}

PosWeights compute_pos_weights(const std::vector<LabelVector>& labels) {
    if (labels.empty()) throw ConfigError("compute_pos_weights: empty label set");
    const int C = labels[0].arity();
    std::vector<long> pos(C, 0);
    for (const auto& l : labels) {
        require(l.arity() == C, "compute_pos_weights: label arity mismatch");
        for (int c = 0; c < C; ++c) pos[c] += l.values[c] ? 1 : 0;
    }
    const long n = static_cast<long>(labels.size());
    PosWeights out;
    out.weight = Tensor({C});
    out.class_mask = Tensor({C});
    out.flagged.assign(C, 0);
    for (int c = 0; c < C; ++c) {
        const long neg = n - pos[c];
        if (pos[c] == 0) {
            // no positives: weight falls back to 1 and the class is dropped
            out.weight.data[c] = 1.0;
            out.class_mask.data[c] = 0.0;
            out.flagged[c] = 1;
        } else {
            out.weight.data[c] = static_cast<double>(neg) / static_cast<double>(pos[c]);
            out.class_mask.data[c] = 1.0;
        }
    }
    return out;
}

LinearProbe train_probe(const Tensor& embeddings, const std::vector<LabelVector>& labels,
                        const QuestionSet& qs, const OptimConfig& opt) {
    const std::int64_t N = embeddings.rows(), E = embeddings.cols();
    require(static_cast<std::int64_t>(labels.size()) == N,
            "train_probe: embeddings/labels misaligned");
    const int C = qs.arity();

    Tensor Y({N, static_cast<std::int64_t>(C)});
    for (std::int64_t i = 0; i < N; ++i) {
        require(labels[i].arity() == C, "train_probe: label arity != question count");
        for (int c = 0; c < C; ++c) Y.data[i * C + c] = labels[i].values[c] ? 1.0 : 0.0;
    }
    const PosWeights pw = compute_pos_weights(labels);

    LinearProbe probe(qs.id, C, E, derive_seed(opt.seed, 0x70726f62ULL));
    for (int c = 0; c < C; ++c) probe.trained_class[c] = pw.flagged[c] ? 0 : 1;

    nn::Adam adam(probe.params(), opt.lr);
    std::vector<Tensor> grads;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        const double loss = nn::batch_gradients(
            probe.params(), nullptr, 1, 1,
            [&](Graph& g, int) {
                int x = g.input_ref(&embeddings);
                int z = g.add_bias(g.matmul(x, g.param(probe.weights), false, true),
                                   g.param(probe.bias));
                return g.weighted_bce(z, Y, pw.weight, pw.class_mask);
            },
            grads);
        if (!std::isfinite(loss))
            throw DivergenceError("probe training diverged at step " + std::to_string(epoch));
        adam.step(grads);
    }
    return probe;
}

Prediction predict(const LinearProbe& probe, const Tensor& embedding) {
    const std::int64_t E = probe.embed_dim(), C = probe.classes();
    require(embedding.numel() == E,
            "predict: embedding length " + std::to_string(embedding.numel()) +
                " != probe dim " + std::to_string(E));
    Prediction out;
    out.labels = zero_labels(probe.qs, static_cast<int>(C));
    out.scores.resize(static_cast<std::size_t>(C));
    for (std::int64_t c = 0; c < C; ++c) {
        double z = probe.bias.value.data[c];
        for (std::int64_t e = 0; e < E; ++e)
            z += probe.weights.value.data[c * E + e] * embedding.data[e];
        const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        out.scores[c] = s;
        out.labels.values[c] = s >= probe.thresholds.data[c] ? 1 : 0;
    }
    return out;
}

metrics::MetricsReport evaluate_probe(const LinearProbe& probe, const Tensor& embeddings,
                                      const std::vector<LabelVector>& gt, const QuestionSet& qs) {
    const std::int64_t N = embeddings.rows();
    require(static_cast<std::int64_t>(gt.size()) == N, "evaluate_probe: misaligned inputs");
    std::vector<LabelVector> preds;
    std::vector<std::vector<double>> scores;
    for (std::int64_t i = 0; i < N; ++i) {
        Tensor row({embeddings.cols()});
        std::copy(embeddings.data.begin() + i * embeddings.cols(),
                  embeddings.data.begin() + (i + 1) * embeddings.cols(), row.data.begin());
        Prediction p = predict(probe, row);
        preds.push_back(std::move(p.labels));
        scores.push_back(std::move(p.scores));
    }
    return metrics::evaluate_binary(qs, preds, gt, scores);
}

LabelVector simulate_cue_source(const LabelVector& gt, const std::vector<double>& flip_rates,
                                std::uint64_t seed) {
    if (flip_rates.size() != gt.values.size())
        throw ConfigError("simulate_cue_source: rate count != label arity");
    for (double r : flip_rates)
        if (r < 0.0 || r > 1.0) throw ConfigError("simulate_cue_source: flip rate outside [0,1]");
    Rng rng(seed);
    LabelVector out = gt;
    for (std::size_t c = 0; c < out.values.size(); ++c)
        if (rng.bernoulli(flip_rates[c])) out.values[c] = out.values[c] ? 0 : 1;
    return out;
}

void LinearProbe::save(const std::filesystem::path& path) const {
    nlohmann::ordered_json cfg;
    cfg["kind"] = "linear_probe";
    cfg["question_set"] = qs_name(qs);
    cfg["thresholds"] = thresholds.data;
    cfg["trained_class"] = trained_class;
    std::vector<std::pair<std::string, const Tensor*>> tensors = {
        {"probe.w", &weights.value}, {"probe.b", &bias.value}};
    save_checkpoint(path, cfg.dump(), tensors);
}

LinearProbe LinearProbe::load(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path);
    auto cfg = nlohmann::ordered_json::parse(ck.config_json);
    const Tensor* w = ck.find("probe.w");
    const Tensor* b = ck.find("probe.b");
    if (w == nullptr || b == nullptr) throw std::runtime_error("probe checkpoint missing tensors");
    const std::string qsn = cfg.at("question_set").get<std::string>();
    LinearProbe p(qsn == "qs1"   ? QuestionSetId::QS1
                  : qsn == "qs2" ? QuestionSetId::QS2
                                 : QuestionSetId::QS3,
                  w->rows(), w->cols(), 0);
    p.weights.value = *w;
    p.bias.value = *b;
    p.thresholds.data = cfg.at("thresholds").get<std::vector<double>>();
    p.trained_class = cfg.at("trained_class").get<std::vector<std::uint8_t>>();
    return p;
}

}  // namespace dcppd::probe
