#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dcppd/tape.hpp"

namespace dcppd::nn {

// y = x * w^T + b, w is [out x in]
struct Linear {
    Parameter w, b;
};

void init_linear(Linear& l, std::int64_t in, std::int64_t out, Rng& rng, double w_scale = 0.0);
void add_params(ParamSet& set, const std::string& prefix, Linear& l);
int apply(Graph& g, const Linear& l, int x);

struct LayerNorm {
    Parameter gamma, beta;
};

void init_layer_norm(LayerNorm& ln, std::int64_t dim);
void add_params(ParamSet& set, const std::string& prefix, LayerNorm& ln);
int apply(Graph& g, const LayerNorm& ln, int x);

// Low-rank adapter on a Linear: effective weight = w + (alpha/rank) * a * b,
// a is [out x rank], b is [rank x in]. b starts at zero so an adapted layer
// is exactly the base layer until trained.
struct LoraAdapter {
    Parameter a, b;
    int rank = 0;
    double alpha = 0.0;

    double scaling() const { return alpha / static_cast<double>(rank); }
};

void init_lora(LoraAdapter& ad, std::int64_t in, std::int64_t out, int rank, double alpha,
               Rng& rng);
void add_params(ParamSet& set, const std::string& prefix, LoraAdapter& ad);
int apply_adapted(Graph& g, const Linear& l, const LoraAdapter* ad, int x);

struct Attention {
    Linear q, k, v, o;
    int heads = 1;
};

struct AttentionAdapters {
    LoraAdapter q, k, v, o;
};

void init_attention(Attention& a, std::int64_t dim, int heads, Rng& rng, bool zero_out_proj);
void add_params(ParamSet& set, const std::string& prefix, Attention& a);
void init_attention_adapters(AttentionAdapters& ad, std::int64_t dim, int rank, double alpha,
                             Rng& rng);
void add_params(ParamSet& set, const std::string& prefix, AttentionAdapters& ad);

// multi-head self-attention; adapters may be null
int self_attention(Graph& g, const Attention& a, const AttentionAdapters* ad, int x, bool causal);

// fc2(gelu(fc1(x)))
struct Ffn {
    Linear fc1, fc2;
};

void init_ffn(Ffn& f, std::int64_t dim, std::int64_t hidden, Rng& rng, bool zero_out_proj);
void add_params(ParamSet& set, const std::string& prefix, Ffn& f);
int apply(Graph& g, const Ffn& f, int x);

// Adam with bias correction. Steps only parameters enabled by the mask.
class Adam {
public:
    Adam(ParamSet& set, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(const std::vector<Tensor>& grads, const std::vector<char>* mask = nullptr);
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    ParamSet& set_;
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

// Deterministic parallel accumulation of per-item gradients: [0, n_items)
// is split into contiguous chunks, one worker each; each worker owns a
// Graph and a gradient buffer, and buffers are reduced in worker order so
// the result is independent of scheduling. build_loss must return a scalar
// loss node. Returns the mean loss; grads_out receives mean gradients.
double batch_gradients(const ParamSet& set, const std::vector<char>* mask, int n_items,
                       int n_threads, const std::function<int(Graph&, int)>& build_loss,
                       std::vector<Tensor>& grads_out);

}  // namespace dcppd::nn
