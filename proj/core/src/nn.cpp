#include "dcppd/nn.hpp"

#include <cmath>
#include <thread>

namespace dcppd::nn {

void init_linear(Linear& l, std::int64_t in, std::int64_t out, Rng& rng, double w_scale) {
    if (w_scale <= 0.0) w_scale = 1.0 / std::sqrt(static_cast<double>(in));
    l.w = Parameter{Tensor::randn(out, in, w_scale, rng)};
    l.b = Parameter{Tensor({out})};
}

void add_params(ParamSet& set, const std::string& prefix, Linear& l) {
    set.add(prefix + ".w", l.w);
    set.add(prefix + ".b", l.b);
}

int apply(Graph& g, const Linear& l, int x) {
    return g.add_bias(g.matmul(x, g.param(l.w), false, true), g.param(l.b));
}

void init_layer_norm(LayerNorm& ln, std::int64_t dim) {
    ln.gamma = Parameter{Tensor({dim})};
    ln.gamma.value.fill(1.0);
    ln.beta = Parameter{Tensor({dim})};
}

void add_params(ParamSet& set, const std::string& prefix, LayerNorm& ln) {
    set.add(prefix + ".g", ln.gamma);
    set.add(prefix + ".b", ln.beta);
}

int apply(Graph& g, const LayerNorm& ln, int x) {
    return g.layer_norm(x, g.param(ln.gamma), g.param(ln.beta));
}

void init_lora(LoraAdapter& ad, std::int64_t in, std::int64_t out, int rank, double alpha,
               Rng& rng) {
    ad.rank = rank;
    ad.alpha = alpha;
    ad.a = Parameter{Tensor::randn(out, rank, 1.0 / std::sqrt(static_cast<double>(rank)), rng)};
    ad.b = Parameter{Tensor::zeros(rank, in)};
}

void add_params(ParamSet& set, const std::string& prefix, LoraAdapter& ad) {
    set.add(prefix + ".a", ad.a);
    set.add(prefix + ".b", ad.b);
}

int apply_adapted(Graph& g, const Linear& l, const LoraAdapter* ad, int x) {
    int y = apply(g, l, x);
    if (ad == nullptr) return y;
    int t = g.matmul(x, g.param(ad->b), false, true);
    int t2 = g.matmul(t, g.param(ad->a), false, true);
    return g.add(y, g.scale(t2, ad->scaling()));
}

void init_attention(Attention& a, std::int64_t dim, int heads, Rng& rng, bool zero_out_proj) {
    a.heads = heads;
    init_linear(a.q, dim, dim, rng);
    init_linear(a.k, dim, dim, rng);
    init_linear(a.v, dim, dim, rng);
    init_linear(a.o, dim, dim, rng);
    if (zero_out_proj) a.o.w.value.zero();
}

void add_params(ParamSet& set, const std::string& prefix, Attention& a) {
    add_params(set, prefix + ".q", a.q);
    add_params(set, prefix + ".k", a.k);
    add_params(set, prefix + ".v", a.v);
    add_params(set, prefix + ".o", a.o);
}

void init_attention_adapters(AttentionAdapters& ad, std::int64_t dim, int rank, double alpha,
                             Rng& rng) {
    init_lora(ad.q, dim, dim, rank, alpha, rng);
    init_lora(ad.k, dim, dim, rank, alpha, rng);
    init_lora(ad.v, dim, dim, rank, alpha, rng);
    init_lora(ad.o, dim, dim, rank, alpha, rng);
}

void add_params(ParamSet& set, const std::string& prefix, AttentionAdapters& ad) {
    add_params(set, prefix + ".q", ad.q);
    add_params(set, prefix + ".k", ad.k);
    add_params(set, prefix + ".v", ad.v);
    add_params(set, prefix + ".o", ad.o);
}

int self_attention(Graph& g, const Attention& a, const AttentionAdapters* ad, int x, bool causal) {
    const std::int64_t dim = g.val(x).cols();
    require(dim % a.heads == 0, "self_attention: dim not divisible by heads");
    const std::int64_t dh = dim / a.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    int q = apply_adapted(g, a.q, ad ? &ad->q : nullptr, x);
    int k = apply_adapted(g, a.k, ad ? &ad->k : nullptr, x);
    int v = apply_adapted(g, a.v, ad ? &ad->v : nullptr, x);

    std::vector<int> head_out;
    head_out.reserve(a.heads);
    for (int h = 0; h < a.heads; ++h) {
        int qh = g.cols_slice(q, h * dh, (h + 1) * dh);
        int kh = g.cols_slice(k, h * dh, (h + 1) * dh);
        int vh = g.cols_slice(v, h * dh, (h + 1) * dh);
        int scores = g.scale(g.matmul(qh, kh, false, true), inv_sqrt);
        int p = causal ? g.causal_softmax_rows(scores) : g.softmax_rows(scores);
        head_out.push_back(g.matmul(p, vh));
    }
    int merged = a.heads == 1 ? head_out[0] : g.cols_concat(head_out);
    return apply_adapted(g, a.o, ad ? &ad->o : nullptr, merged);
}

void init_ffn(Ffn& f, std::int64_t dim, std::int64_t hidden, Rng& rng, bool zero_out_proj) {
    init_linear(f.fc1, dim, hidden, rng);
    init_linear(f.fc2, hidden, dim, rng);
    if (zero_out_proj) f.fc2.w.value.zero();
}

void add_params(ParamSet& set, const std::string& prefix, Ffn& f) {
    add_params(set, prefix + ".fc1", f.fc1);
    add_params(set, prefix + ".fc2", f.fc2);
}

int apply(Graph& g, const Ffn& f, int x) {
    return apply(g, f.fc2, g.gelu(apply(g, f.fc1, x)));
}

Adam::Adam(ParamSet& set, double lr, double beta1, double beta2, double eps)
    : set_(set), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_ = set.make_grad_buffer();
    v_ = set.make_grad_buffer();
}

void Adam::step(const std::vector<Tensor>& grads, const std::vector<char>* mask) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < set_.size(); ++i) {
        if (mask != nullptr && (*mask)[i] == 0) continue;
        Tensor& p = set_[i].value;
        const Tensor& gr = grads[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::int64_t j = 0; j < p.numel(); ++j) {
            m.data[j] = beta1_ * m.data[j] + (1.0 - beta1_) * gr.data[j];
            v.data[j] = beta2_ * v.data[j] + (1.0 - beta2_) * gr.data[j] * gr.data[j];
            const double mh = m.data[j] / bc1;
            const double vh = v.data[j] / bc2;
            p.data[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
        }
    }
}

double batch_gradients(const ParamSet& set, const std::vector<char>* mask, int n_items,
                       int n_threads, const std::function<int(Graph&, int)>& build_loss,
                       std::vector<Tensor>& grads_out) {
    if (n_threads < 1) n_threads = 1;
    const int workers = std::min(n_threads, n_items);

    std::vector<std::vector<Tensor>> bufs(workers);
    std::vector<double> losses(workers, 0.0);

    auto run = [&](int w) {
        bufs[w] = set.make_grad_buffer();
        Graph g(&set, &bufs[w], mask);
        const int lo = static_cast<int>(static_cast<std::int64_t>(n_items) * w / workers);
        const int hi = static_cast<int>(static_cast<std::int64_t>(n_items) * (w + 1) / workers);
        for (int i = lo; i < hi; ++i) {
            g.clear();
            const int loss = build_loss(g, i);
            losses[w] += g.val(loss).data[0];
            g.backward(loss);
        }
    };

    if (workers == 1) {
        run(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int w = 0; w < workers; ++w) pool.emplace_back(run, w);
        for (auto& t : pool) t.join();
    }

    grads_out = std::move(bufs[0]);
    for (int w = 1; w < workers; ++w)
        for (std::size_t i = 0; i < grads_out.size(); ++i)
            for (std::int64_t j = 0; j < grads_out[i].numel(); ++j)
                grads_out[i].data[j] += bufs[w][i].data[j];

    const double inv_n = 1.0 / static_cast<double>(n_items);
    for (auto& t : grads_out)
        for (auto& x : t.data) x *= inv_n;

    double total = 0.0;
    for (double l : losses) total += l;
    return total * inv_n;
}

}  // namespace dcppd::nn
