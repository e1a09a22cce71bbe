#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dcppd/tensor.hpp"

namespace dcppd {

// A trainable tensor. `id` is the slot assigned by the owning ParamSet and
// indexes gradient buffers; -1 means the parameter is not registered.
struct Parameter {
    Tensor value;
    int id = -1;
    const void* owner = nullptr;
};

// Ordered registry of a model's parameters. Registration order is the
// canonical order for gradient buffers, optimizer state, checkpoints and
// checksums, so it must be deterministic.
class ParamSet {
public:
    int add(const std::string& name, Parameter& p) {
        p.id = static_cast<int>(params_.size());
        p.owner = this;
        params_.push_back(&p);
        names_.push_back(name);
        return p.id;
    }

    std::size_t size() const { return params_.size(); }
    Parameter& operator[](std::size_t i) { return *params_[i]; }
    const Parameter& operator[](std::size_t i) const { return *params_[i]; }
    const std::string& name(std::size_t i) const { return names_[i]; }

    std::vector<Tensor> make_grad_buffer() const {
        std::vector<Tensor> g;
        g.reserve(params_.size());
        for (const auto* p : params_) g.emplace_back(p->value.shape);
        return g;
    }

    // FNV-1a over the raw bytes of every parameter, in registration order.
    // Used to assert freeze contracts.
    std::uint64_t checksum(const std::string& name_prefix = "") const;

private:
    std::vector<Parameter*> params_;
    std::vector<std::string> names_;
};

// Reverse-mode autodiff over Tensor values. A Graph is built per forward
// pass; backward() walks nodes in reverse creation order. Parameter
// gradients are accumulated into an external buffer (indexed by
// Parameter::id) so several graphs can share one accumulator. Only
// parameters belonging to `set` are ever tracked; `mask`, when given,
// further restricts tracking per parameter id (freeze contracts).
class Graph {
public:
    Graph() : set_(nullptr), grads_(nullptr), mask_(nullptr) {}
    Graph(const ParamSet* set, std::vector<Tensor>* grad_sink,
          const std::vector<char>* mask = nullptr)
        : set_(set), grads_(grad_sink), mask_(mask) {}

    void clear() { nodes_.clear(); }

    // constant leaf, takes ownership
    int input(Tensor v);
    // constant leaf aliasing caller-owned storage (must outlive the graph)
    int input_ref(const Tensor* v);
    // parameter leaf; tracked iff it belongs to this graph's param set and
    // is enabled by the mask
    int param(const Parameter& p);

    const Tensor& val(int id) const { return nodes_[id].v(); }
    std::size_t size() const { return nodes_.size(); }

    // --- ops ---------------------------------------------------------
    int matmul(int a, int b, bool ta = false, bool tb = false);
    int add(int a, int b);
    int sub(int a, int b);
    int scale(int a, double s);
    int add_bias(int x, int bias);              // bias[C] broadcast over rows
    int layer_norm(int x, int gamma, int beta, double eps = 1e-5);
    int softmax_rows(int x);
    // causal mask: row i may attend to columns <= i + col_offset
    int causal_softmax_rows(int x, int col_offset = 0);
    int gelu(int x);
    int rows_concat(const std::vector<int>& parts);
    int rows_slice(int x, std::int64_t lo, std::int64_t hi);
    int cols_slice(int x, std::int64_t lo, std::int64_t hi);
    int cols_concat(const std::vector<int>& parts);
    int gather_rows(int table, std::vector<int> idx);
    int mean_rows(int x);                       // [T x C] -> [1 x C]
    // out[g] = mean of rows r with group[r] == g (pooling-tree reduction)
    int group_mean_rows(int x, std::vector<int> group, int n_groups);
    // out[r] = x[src[r]] (pooling-tree broadcast)
    int expand_rows(int x, std::vector<int> src, std::int64_t n_rows);
    // mean over rows in [lo, hi) of -log softmax(logits[r])[target[r]]
    int cross_entropy_rows(int logits, std::vector<int> targets, std::int64_t lo, std::int64_t hi);
    // class-weighted binary cross-entropy with logits, averaged over samples
    // and active classes; class_mask[c] = 0 drops class c from the loss
    int weighted_bce(int logits, const Tensor& labels, const Tensor& pos_weight,
                     const Tensor& class_mask);

    void backward(int loss_id);

private:
    struct Node {
        Tensor owned;
        const Tensor* ref = nullptr;
        Tensor grad;                      // allocated lazily
        bool needs_grad = false;
        int param_id = -1;
        std::function<void(Graph&, Node&)> back;

        const Tensor& v() const { return ref ? *ref : owned; }
    };

    int push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }
    Tensor& grad_of(int id);
    void accumulate(int id, const Tensor& g);
    bool tracked(int id) const { return nodes_[id].needs_grad; }

    std::vector<Node> nodes_;
    const ParamSet* set_;
    std::vector<Tensor>* grads_;
    const std::vector<char>* mask_;
};

std::uint64_t fnv1a_bytes(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace dcppd
