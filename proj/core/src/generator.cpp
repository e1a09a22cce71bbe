#include "dcppd/generator.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"

#include "dcppd/report_grammar.hpp"
#include "dcppd/serialize.hpp"
#include "dcppd/text.hpp"

namespace dcppd::gen {

// --- vocabulary -----------------------------------------------------------

Vocabulary Vocabulary::build(const QuestionCatalog& cat) {
    std::set<std::string> words;
    auto take = [&](const std::string& s) {
        for (auto& w : text::split_words(s)) words.insert(w);
    };
    for (const auto& [sentence, fact] : grammar::surface_table()) take(sentence);
    for (QuestionSetId id : {QuestionSetId::QS1, QuestionSetId::QS2, QuestionSetId::QS3}) {
        const QuestionSet& qs = cat.get(id);
        for (int i = 0; i < qs.arity(); ++i) take(cue::surface_phrase(cat, id, i));
    }
    take(cue::kPreamble);
    take(cue::kEmptySentinel);
    take(kQueryText);
    take(". , :");
    return from_words({words.begin(), words.end()});
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
    Vocabulary v;
    v.words_ = {"<pad>", "<bos>", "<eos>", "<img>", "<sep>"};
    v.words_.insert(v.words_.end(), words.begin(), words.end());
    for (int i = 0; i < static_cast<int>(v.words_.size()); ++i) v.index_[v.words_[i]] = i;
    return v;
}

int Vocabulary::id(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw VocabularyError("word not in vocabulary: '" + word + "'");
    return it->second;
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
    std::vector<int> ids{bos()};
    for (const auto& w : text::split_words(text)) ids.push_back(id(w));
    ids.push_back(eos());
    return ids;
}

std::vector<int> Vocabulary::tokenize_words(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& w : text::split_words(text)) ids.push_back(id(w));
    return ids;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
    std::vector<std::string> ws;
    for (int i : ids)
        if (!is_special(i)) ws.push_back(word(i));
    return text::join_words(ws);
}

std::uint64_t Vocabulary::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& w : words_) {
        h = fnv1a_bytes(w.data(), w.size(), h);
        h = fnv1a_bytes("|", 1, h);
    }
    return h;
}

// --- model ----------------------------------------------------------------

GeneratorModel::GeneratorModel(GeneratorConfig config, Vocabulary vocab)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
    const auto& dc = config_.decoder;
    require(dc.d_model % dc.heads == 0, "decoder: d_model not divisible by heads");
    Rng rng(config_.seed);

    tok_embed = Parameter{Tensor::randn(vocab_.size(), dc.d_model, 0.1, rng)};
    pos_embed = Parameter{Tensor::randn(dc.max_len, dc.d_model, 0.1, rng)};
    blocks.resize(dc.blocks);
    for (auto& b : blocks) {
        nn::init_layer_norm(b.ln1, dc.d_model);
        nn::init_layer_norm(b.ln2, dc.d_model);
        nn::init_attention(b.attn, dc.d_model, dc.heads, rng, false);
        nn::init_ffn(b.ffn, dc.d_model, dc.ffn_hidden, rng, false);
    }
    nn::init_layer_norm(ln_final, dc.d_model);
    nn::init_linear(head, dc.d_model, vocab_.size(), rng);

    const auto& pc = config_.projector;
    proj_queries = Parameter{Tensor::randn(pc.queries, pc.cin, 0.5, rng)};
    nn::init_linear(proj_key, pc.cin, pc.cin, rng);
    nn::init_linear(proj_value, pc.cin, pc.cin, rng);
    nn::init_linear(proj_fc1, pc.cin, pc.hidden, rng);
    nn::init_linear(proj_fc2, pc.hidden, dc.d_model, rng);

    register_params();
}

void GeneratorModel::register_params() {
    params_.add("dec.embed", tok_embed);
    params_.add("dec.pos", pos_embed);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = "dec.b" + std::to_string(i);
        nn::add_params(params_, p + ".ln1", blocks[i].ln1);
        nn::add_params(params_, p + ".ln2", blocks[i].ln2);
        nn::add_params(params_, p + ".attn", blocks[i].attn);
        nn::add_params(params_, p + ".ffn", blocks[i].ffn);
    }
    nn::add_params(params_, "dec.lnf", ln_final);
    nn::add_params(params_, "dec.head", head);
    params_.add("proj.queries", proj_queries);
    nn::add_params(params_, "proj.key", proj_key);
    nn::add_params(params_, "proj.value", proj_value);
    nn::add_params(params_, "proj.fc1", proj_fc1);
    nn::add_params(params_, "proj.fc2", proj_fc2);
}

void GeneratorModel::attach_adapters(std::uint64_t seed) {
    if (adapters_attached_) throw ConfigError("adapters already attached");
    Rng rng(derive_seed(config_.seed, 0x10adULL, seed));
    adapters.resize(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        nn::init_attention_adapters(adapters[i], config_.decoder.d_model, config_.lora_rank,
                                    config_.lora_alpha, rng);
        nn::add_params(params_, "lora.b" + std::to_string(i), adapters[i]);
    }
    adapters_attached_ = true;
}

std::vector<char> GeneratorModel::mask_for_prefixes(
    const std::vector<std::string>& prefixes) const {
    std::vector<char> mask(params_.size(), 0);
    for (std::size_t i = 0; i < params_.size(); ++i)
        for (const auto& p : prefixes)
            if (params_.name(i).rfind(p, 0) == 0) {
                mask[i] = 1;
                break;
            }
    return mask;
}

std::unique_ptr<GeneratorModel> GeneratorModel::clone() const {
    auto copy = std::make_unique<GeneratorModel>(config_, vocab_);
    if (adapters_attached_) copy->attach_adapters(0);
    require(copy->params_.size() == params_.size(), "clone: parameter registry mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) copy->params_[i].value = params_[i].value;
    return copy;
}

int GeneratorModel::projector_node(Graph& g, int visual_tokens) const {
    const auto& pc = config_.projector;
    require(g.val(visual_tokens).cols() == pc.cin,
            "projector: visual token dim " + std::to_string(g.val(visual_tokens).cols()) +
                " != cin " + std::to_string(pc.cin));
    int k = nn::apply(g, proj_key, visual_tokens);
    int v = nn::apply(g, proj_value, visual_tokens);
    int q = g.param(proj_queries);
    int scores = g.scale(g.matmul(q, k, false, true), 1.0 / std::sqrt(double(pc.cin)));
    int ctx = g.matmul(g.softmax_rows(scores), v);
    return nn::apply(g, proj_fc2, g.gelu(nn::apply(g, proj_fc1, ctx)));
}

int GeneratorModel::logits_node(Graph& g, const Tensor* visual,
                                const std::vector<int>& token_ids) const {
    std::vector<int> parts;
    std::int64_t total = static_cast<std::int64_t>(token_ids.size());
    if (visual != nullptr) {
        int vt = g.input_ref(visual);
        parts.push_back(projector_node(g, vt));
        total += config_.projector.queries;
    }
    require(total <= config_.decoder.max_len,
            "sequence length " + std::to_string(total) + " exceeds max_len " +
                std::to_string(config_.decoder.max_len));
    if (!token_ids.empty()) parts.push_back(g.gather_rows(g.param(tok_embed), token_ids));
    int x = parts.size() == 1 ? parts[0] : g.rows_concat(parts);
    x = g.add(x, g.rows_slice(g.param(pos_embed), 0, total));

    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        const nn::AttentionAdapters* ad = adapters_attached_ ? &adapters[i] : nullptr;
        x = g.add(x, nn::self_attention(g, b.attn, ad, nn::apply(g, b.ln1, x), true));
        x = g.add(x, nn::apply(g, b.ffn, nn::apply(g, b.ln2, x)));
    }
    return nn::apply(g, head, nn::apply(g, ln_final, x));
}

Tensor forward_logits(const GeneratorModel& m, const Tensor* visual,
                      const std::vector<int>& token_ids) {
    Graph g;
    return g.val(m.logits_node(g, visual, token_ids));
}

Tensor project(const GeneratorModel& m, const Tensor& visual_tokens) {
    Graph g;
    int vt = g.input_ref(&visual_tokens);
    return g.val(m.projector_node(g, vt));
}

// --- prompt assembly -------------------------------------------------------

PromptSequence assemble_prompt(Tensor t_img, const cue::CuePrompt& cue,
                               std::vector<int> query_ids, const Vocabulary& vocab) {
    PromptSequence p;
    p.t_img = std::move(t_img);
    p.cue = cue;
    p.cue_ids = vocab.tokenize_words(cue.text);
    p.query_ids = std::move(query_ids);
    const int m = static_cast<int>(p.t_img.rows());
    p.image = {0, m};
    p.text = {m, m + static_cast<int>(p.cue_ids.size())};
    p.query = {p.text.end, p.text.end + static_cast<int>(p.query_ids.size())};
    return p;
}

std::string PromptSequence::to_json() const {
    nlohmann::ordered_json j;
    j["image_tokens"] = t_img.rows();
    j["cue_ids"] = cue_ids;
    j["query_ids"] = query_ids;
    j["regions"] = {{"image", {image.begin, image.end}},
                    {"text", {text.begin, text.end}},
                    {"query", {query.begin, query.end}}};
    j["cue"] = nlohmann::ordered_json::parse(cue.to_json());
    return j.dump();
}

PromptSequence PromptSequence::from_json(const std::string& json_text) {
    const auto j = nlohmann::ordered_json::parse(json_text);
    PromptSequence p;
    p.t_img = Tensor({j.at("image_tokens").get<std::int64_t>(), 0});
    p.cue_ids = j.at("cue_ids").get<std::vector<int>>();
    p.query_ids = j.at("query_ids").get<std::vector<int>>();
    auto r = j.at("regions");
    p.image = {r.at("image")[0].get<int>(), r.at("image")[1].get<int>()};
    p.text = {r.at("text")[0].get<int>(), r.at("text")[1].get<int>()};
    p.query = {r.at("query")[0].get<int>(), r.at("query")[1].get<int>()};
    p.cue = cue::CuePrompt::from_json(j.at("cue").dump());
    return p;
}

// --- training ---------------------------------------------------------------

namespace {

// token_ids = cue + query(+BOS) + report; prompt_len counts image slots
int sequence_loss(Graph& g, const GeneratorModel& m, const Tensor* visual,
                  const std::vector<int>& cue_ids, const std::vector<int>& query_ids,
                  const std::vector<int>& report_ids) {
    std::vector<int> ids = cue_ids;
    ids.insert(ids.end(), query_ids.begin(), query_ids.end());
    ids.insert(ids.end(), report_ids.begin(), report_ids.end());
    const std::int64_t prompt =
        (visual ? m.config().projector.queries : 0) +
        static_cast<std::int64_t>(cue_ids.size() + query_ids.size());
    int logits = m.logits_node(g, visual, ids);
    std::vector<int> targets = report_ids;
    targets.push_back(m.vocab().eos());
    return g.cross_entropy_rows(logits, targets, prompt - 1,
                                prompt + static_cast<std::int64_t>(report_ids.size()));
}

using LossBuilder = std::function<int(Graph&, int item, int epoch)>;

void run_training(GeneratorModel& m, const std::vector<char>& mask, int n_items,
                  const VlmTrainConfig& cfg, const LossBuilder& loss, TrainReport& report) {
    nn::Adam adam(m.params(), cfg.lr);
    std::vector<Tensor> grads;
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order(n_items);
        for (int i = 0; i < n_items; ++i) order[i] = i;
        Rng shuffle(derive_seed(cfg.seed, 0xe0ULL, static_cast<std::uint64_t>(epoch)));
        for (int i = n_items - 1; i > 0; --i) std::swap(order[i], order[shuffle.uniform_int(i + 1)]);

        double epoch_loss = 0.0;
        int batches = 0;
        for (int lo = 0; lo < n_items; lo += cfg.batch) {
            const int hi = std::min(n_items, lo + cfg.batch);
            const double l = nn::batch_gradients(
                m.params(), &mask, hi - lo, cfg.threads,
                [&](Graph& g, int j) { return loss(g, order[lo + j], epoch); }, grads);
            if (!std::isfinite(l))
                throw DivergenceError("training diverged at step " + std::to_string(step));
            adam.step(grads, &mask);
            report.batch_losses.push_back(l);
            epoch_loss += l * (hi - lo);
            batches++;
            step++;
        }
        report.final_loss = epoch_loss / n_items;
    }
}

}  // namespace

double perplexity(const GeneratorModel& m, const std::vector<std::vector<int>>& reports) {
    require(!reports.empty(), "perplexity: empty report set");
    double total = 0.0;
    long tokens = 0;
    Graph g;
    for (const auto& r : reports) {
        g.clear();
        const std::vector<int> bos{m.vocab().bos()};
        int loss = sequence_loss(g, m, nullptr, {}, bos, r);
        total += g.val(loss).data[0] * static_cast<double>(r.size() + 1);
        tokens += static_cast<long>(r.size()) + 1;
    }
    return std::exp(total / static_cast<double>(tokens));
}

TrainReport pretrain_decoder(GeneratorModel& m, const std::vector<std::vector<int>>& reports,
                             const VlmTrainConfig& cfg) {
    require(!reports.empty(), "pretrain_decoder: empty corpus");
    TrainReport report;
    const auto mask = m.mask_for_prefixes({"dec."});
    const std::vector<int> bos{m.vocab().bos()};
    run_training(
        m, mask, static_cast<int>(reports.size()), cfg,
        [&](Graph& g, int item, int) { return sequence_loss(g, m, nullptr, {}, bos, reports[item]); },
        report);
    return report;
}

TrainReport train_stage1(GeneratorModel& m, const std::vector<VlmItem>& items,
                         const VlmTrainConfig& cfg) {
    require(!items.empty(), "train_stage1: no items");
    TrainReport report;
    const auto mask = m.mask_for_prefixes({"proj."});
    const std::uint64_t frozen = m.checksum("dec.");

    std::vector<int> query = m.vocab().tokenize_words(kQueryText);
    query.push_back(m.vocab().bos());
    run_training(
        m, mask, static_cast<int>(items.size()), cfg,
        [&](Graph& g, int item, int) {
            return sequence_loss(g, m, items[item].visual, {}, query, items[item].report_ids);
        },
        report);

    if (m.checksum("dec.") != frozen)
        throw FreezeViolation("stage 1 modified frozen decoder weights");
    return report;
}

TrainReport train_stage2(GeneratorModel& m, const std::vector<VlmItem>& items,
                         const Stage2Config& cfg) {
    require(!items.empty(), "train_stage2: no items");
    if (!m.adapters_attached()) throw ConfigError("attach adapters before stage 2 training");
    if (cfg.catalog == nullptr) throw ConfigError("stage 2 needs the question catalog");
    TrainReport report;
    const auto mask = m.mask_for_prefixes({"proj.", "lora."});
    const std::uint64_t frozen = m.checksum("dec.");

    std::vector<int> query = m.vocab().tokenize_words(kQueryText);
    query.push_back(m.vocab().bos());

    // entity lists are stable per item; dropout masks are fresh per epoch
    std::vector<std::vector<cue::CueEntity>> entities;
    entities.reserve(items.size());
    for (const auto& it : items)
        entities.push_back(cue::labels_to_entities(it.cue_labels, *cfg.catalog));

    if (cfg.train.record_masks)
        report.mask_log.reserve(static_cast<std::size_t>(cfg.train.epochs) * items.size());

    run_training(
        m, mask, static_cast<int>(items.size()), cfg.train,
        [&](Graph& g, int item, int epoch) {
            const auto keep = cue::dropout_keep_flags(
                entities[item].size(), cfg.dropout_p,
                derive_seed(cfg.train.seed, 0xd0ULL, static_cast<std::uint64_t>(epoch),
                            static_cast<std::uint64_t>(item)));
            std::vector<cue::CueEntity> kept;
            for (std::size_t i = 0; i < keep.size(); ++i)
                if (keep[i]) kept.push_back(entities[item][i]);
            const cue::CuePrompt prompt = cue::render_prompt(kept, cfg.cue_source);
            return sequence_loss(g, m, items[item].visual,
                                 m.vocab().tokenize_words(prompt.text), query,
                                 items[item].report_ids);
        },
        report);

    // the mask log replays the same streams the training pass consumed
    if (cfg.train.record_masks) {
        for (int epoch = 0; epoch < cfg.train.epochs; ++epoch)
            for (std::size_t item = 0; item < items.size(); ++item)
                report.mask_log.push_back(cue::dropout_keep_flags(
                    entities[item].size(), cfg.dropout_p,
                    derive_seed(cfg.train.seed, 0xd0ULL, static_cast<std::uint64_t>(epoch),
                                static_cast<std::uint64_t>(item))));
    }

    if (m.checksum("dec.") != frozen)
        throw FreezeViolation("stage 2 modified frozen base decoder weights");
    return report;
}

// --- inference --------------------------------------------------------------

namespace {

struct InferKv {
    std::vector<double> k, v;  // rows appended per step
};

void layer_norm_vec(const nn::LayerNorm& ln, const double* x, std::int64_t d, double* out) {
    double mu = 0;
    for (std::int64_t i = 0; i < d; ++i) mu += x[i];
    mu /= static_cast<double>(d);
    double var = 0;
    for (std::int64_t i = 0; i < d; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (std::int64_t i = 0; i < d; ++i)
        out[i] = (x[i] - mu) * inv * ln.gamma.value.data[i] + ln.beta.value.data[i];
}

void linear_vec(const nn::Linear& l, const nn::LoraAdapter* ad, const double* x, double* out) {
    const std::int64_t O = l.w.value.rows(), I = l.w.value.cols();
    for (std::int64_t o = 0; o < O; ++o) {
        double acc = l.b.value.data[o];
        const double* wr = l.w.value.data.data() + o * I;
        for (std::int64_t i = 0; i < I; ++i) acc += wr[i] * x[i];
        out[o] = acc;
    }
    if (ad != nullptr) {
        const std::int64_t R = ad->rank;
        std::vector<double> t(R, 0.0);
        for (std::int64_t r = 0; r < R; ++r) {
            const double* br = ad->b.value.data.data() + r * I;
            double acc = 0;
            for (std::int64_t i = 0; i < I; ++i) acc += br[i] * x[i];
            t[r] = acc;
        }
        const double s = ad->scaling();
        for (std::int64_t o = 0; o < O; ++o) {
            const double* arow = ad->a.value.data.data() + o * R;
            double acc = 0;
            for (std::int64_t r = 0; r < R; ++r) acc += arow[r] * t[r];
            out[o] += s * acc;
        }
    }
}

double gelu_scalar(double v) { return 0.5 * v * (1.0 + std::erf(v * 0.70710678118654752440)); }

// One decoder step over the KV caches. When attn_avg is non-null it
// receives the head-and-layer averaged attention over all visible
// positions (length = cache length after appending).
void decoder_step(const GeneratorModel& m, std::vector<InferKv>& kv, const double* x_in,
                  std::vector<double>& logits, std::vector<double>* attn_avg) {
    const auto& dc = m.config().decoder;
    const std::int64_t d = dc.d_model;
    const int H = dc.heads;
    const std::int64_t dh = d / H;

    std::vector<double> x(x_in, x_in + d), h(d), q(d), k(d), v(d), ctx(d), tmp;
    if (attn_avg != nullptr) attn_avg->assign(kv[0].k.size() / d + 1, 0.0);

    for (std::size_t bi = 0; bi < m.blocks.size(); ++bi) {
        const auto& b = m.blocks[bi];
        const nn::AttentionAdapters* ad = m.adapters_attached() ? &m.adapters[bi] : nullptr;
        layer_norm_vec(b.ln1, x.data(), d, h.data());
        linear_vec(b.attn.q, ad ? &ad->q : nullptr, h.data(), q.data());
        linear_vec(b.attn.k, ad ? &ad->k : nullptr, h.data(), k.data());
        linear_vec(b.attn.v, ad ? &ad->v : nullptr, h.data(), v.data());
        kv[bi].k.insert(kv[bi].k.end(), k.begin(), k.end());
        kv[bi].v.insert(kv[bi].v.end(), v.begin(), v.end());

        const std::int64_t t = static_cast<std::int64_t>(kv[bi].k.size()) / d;  // visible len
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        std::fill(ctx.begin(), ctx.end(), 0.0);
        tmp.assign(static_cast<std::size_t>(t), 0.0);
        for (int hd = 0; hd < H; ++hd) {
            double mx = -1e300;
            for (std::int64_t i = 0; i < t; ++i) {
                double s = 0;
                const double* kr = kv[bi].k.data() + i * d + hd * dh;
                const double* qr = q.data() + hd * dh;
                for (std::int64_t j = 0; j < dh; ++j) s += qr[j] * kr[j];
                tmp[i] = s * inv_sqrt;
                mx = std::max(mx, tmp[i]);
            }
            double z = 0;
            for (std::int64_t i = 0; i < t; ++i) {
                tmp[i] = std::exp(tmp[i] - mx);
                z += tmp[i];
            }
            for (std::int64_t i = 0; i < t; ++i) {
                const double p = tmp[i] / z;
                const double* vr = kv[bi].v.data() + i * d + hd * dh;
                for (std::int64_t j = 0; j < dh; ++j) ctx[hd * dh + j] += p * vr[j];
                if (attn_avg != nullptr) (*attn_avg)[i] += p;
            }
        }
        linear_vec(b.attn.o, ad ? &ad->o : nullptr, ctx.data(), h.data());
        for (std::int64_t i = 0; i < d; ++i) x[i] += h[i];

        layer_norm_vec(b.ln2, x.data(), d, h.data());
        std::vector<double> mid(b.ffn.fc1.w.value.rows());
        linear_vec(b.ffn.fc1, nullptr, h.data(), mid.data());
        for (auto& s : mid) s = gelu_scalar(s);
        linear_vec(b.ffn.fc2, nullptr, mid.data(), h.data());
        for (std::int64_t i = 0; i < d; ++i) x[i] += h[i];
    }

    if (attn_avg != nullptr) {
        const double inv = 1.0 / (static_cast<double>(m.blocks.size()) * H);
        for (auto& a : *attn_avg) a *= inv;
    }
    layer_norm_vec(m.ln_final, x.data(), d, h.data());
    logits.resize(m.vocab().size());
    linear_vec(m.head, nullptr, h.data(), logits.data());
}

}  // namespace

GenerateResult generate(const GeneratorModel& m, const Tensor* visual,
                        const cue::CuePrompt& cue, int max_new_tokens) {
    const auto& dc = m.config().decoder;
    const std::int64_t d = dc.d_model;

    Tensor t_img;
    if (visual != nullptr) t_img = project(m, *visual);
    std::vector<int> query = m.vocab().tokenize_words(kQueryText);
    query.push_back(m.vocab().bos());
    PromptSequence prompt = assemble_prompt(std::move(t_img), cue, std::move(query), m.vocab());

    const int P = prompt.length();
    require(P + 1 <= dc.max_len, "prompt length exceeds max_len");

    std::vector<InferKv> kv(m.blocks.size());
    std::vector<double> logits, row(d), attn;

    auto embed_token = [&](int id, std::int64_t pos, double* out) {
        for (std::int64_t i = 0; i < d; ++i)
            out[i] = m.tok_embed.value.data[id * d + i] + m.pos_embed.value.data[pos * d + i];
    };

    // prefill
    std::int64_t pos = 0;
    for (std::int64_t r = 0; r < prompt.t_img.rows(); ++r, ++pos) {
        for (std::int64_t i = 0; i < d; ++i)
            row[i] = prompt.t_img.data[r * d + i] + m.pos_embed.value.data[pos * d + i];
        decoder_step(m, kv, row.data(), logits, nullptr);
    }
    std::vector<int> rest = prompt.cue_ids;
    rest.insert(rest.end(), prompt.query_ids.begin(), prompt.query_ids.end());
    for (std::size_t i = 0; i + 1 < rest.size(); ++i, ++pos) {
        embed_token(rest[i], pos, row.data());
        decoder_step(m, kv, row.data(), logits, nullptr);
    }

    GenerateResult out;
    std::vector<std::vector<double>> trace_rows;
    int prev = rest.back();  // BOS
    bool ended = false;
    for (int step = 0; step < max_new_tokens; ++step) {
        if (pos >= dc.max_len) break;
        embed_token(prev, pos, row.data());
        ++pos;
        decoder_step(m, kv, row.data(), logits, &attn);

        // prompt-restricted, renormalized attention row
        std::vector<double> arow(P, 0.0);
        double z = 0.0;
        for (int i = 0; i < P && i < static_cast<int>(attn.size()); ++i) {
            arow[i] = attn[i];
            z += attn[i];
        }
        if (z > 0)
            for (auto& a : arow) a /= z;
        trace_rows.push_back(std::move(arow));

        int best = 0;
        for (int i = 1; i < static_cast<int>(logits.size()); ++i)
            if (logits[i] > logits[best]) best = i;
        if (best == m.vocab().eos()) {
            ended = true;
            break;
        }
        out.token_ids.push_back(best);
        prev = best;
    }
    out.truncated = !ended;
    out.text = m.vocab().detokenize(out.token_ids);

    const std::int64_t T = static_cast<std::int64_t>(trace_rows.size());
    out.trace.steps = Tensor({T, static_cast<std::int64_t>(P)});
    for (std::int64_t t = 0; t < T; ++t)
        for (int i = 0; i < P; ++i) out.trace.steps.data[t * P + i] = trace_rows[t][i];
    for (int i = prompt.image.begin; i < prompt.image.end; ++i) out.trace.r_image.push_back(i);
    for (int i = prompt.text.begin; i < prompt.text.end; ++i) out.trace.r_text.push_back(i);
    return out;
}

// --- serialization -----------------------------------------------------------

void GeneratorModel::save(const std::filesystem::path& path) const {
    nlohmann::ordered_json cfg;
    cfg["kind"] = "generator";
    cfg["proj_queries"] = config_.projector.queries;
    cfg["proj_cin"] = config_.projector.cin;
    cfg["proj_hidden"] = config_.projector.hidden;
    cfg["d_model"] = config_.decoder.d_model;
    cfg["blocks"] = config_.decoder.blocks;
    cfg["heads"] = config_.decoder.heads;
    cfg["ffn_hidden"] = config_.decoder.ffn_hidden;
    cfg["max_len"] = config_.decoder.max_len;
    cfg["lora_rank"] = config_.lora_rank;
    cfg["lora_alpha"] = config_.lora_alpha;
    cfg["seed"] = config_.seed;
    cfg["adapters_attached"] = adapters_attached_;
    cfg["vocab"] = std::vector<std::string>(vocab_.words().begin() + 5, vocab_.words().end());
    std::vector<std::pair<std::string, const Tensor*>> tensors;
    for (std::size_t i = 0; i < params_.size(); ++i)
        tensors.emplace_back(params_.name(i), &params_[i].value);
    save_checkpoint(path, cfg.dump(), tensors);
}

std::unique_ptr<GeneratorModel> GeneratorModel::load(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path);
    auto cfg = nlohmann::ordered_json::parse(ck.config_json);
    GeneratorConfig c;
    c.projector.queries = cfg.at("proj_queries").get<int>();
    c.projector.cin = cfg.at("proj_cin").get<std::int64_t>();
    c.projector.hidden = cfg.at("proj_hidden").get<std::int64_t>();
    c.decoder.d_model = cfg.at("d_model").get<std::int64_t>();
    c.decoder.blocks = cfg.at("blocks").get<int>();
    c.decoder.heads = cfg.at("heads").get<int>();
    c.decoder.ffn_hidden = cfg.at("ffn_hidden").get<std::int64_t>();
    c.decoder.max_len = cfg.at("max_len").get<std::int64_t>();
    c.lora_rank = cfg.at("lora_rank").get<int>();
    c.lora_alpha = cfg.at("lora_alpha").get<double>();
    c.seed = cfg.at("seed").get<std::uint64_t>();
    auto vocab = Vocabulary::from_words(cfg.at("vocab").get<std::vector<std::string>>());
    auto m = std::make_unique<GeneratorModel>(c, std::move(vocab));
    if (cfg.at("adapters_attached").get<bool>()) m->attach_adapters(0);
    for (std::size_t i = 0; i < m->params().size(); ++i) {
        const Tensor* t = ck.find(m->params().name(i));
        if (t == nullptr)
            throw std::runtime_error("checkpoint missing tensor " + m->params().name(i));
        require(t->shape == m->params()[i].value.shape, "checkpoint tensor shape mismatch");
        m->params()[i].value = *t;
    }
    return m;
}

}  // namespace dcppd::gen
