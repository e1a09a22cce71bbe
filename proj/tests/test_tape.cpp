#include "doctest.h"

#include <cmath>

#include "dcppd/nn.hpp"
#include "dcppd/tape.hpp"

using namespace dcppd;

namespace {

// central finite differences against the tape for a scalar-valued builder
void check_gradients(ParamSet& set, const std::function<int(Graph&)>& build, double eps = 1e-5,
                     double rtol = 1e-6, double atol = 1e-9) {
    std::vector<Tensor> grads = set.make_grad_buffer();
    {
        Graph g(&set, &grads);
        int loss = build(g);
        g.backward(loss);
    }
    auto eval = [&]() {
        Graph g;
        return g.val(build(g)).data[0];
    };
    for (std::size_t pi = 0; pi < set.size(); ++pi) {
        Tensor& value = set[pi].value;
        for (std::int64_t j = 0; j < value.numel(); ++j) {
            const double keep = value.data[j];
            value.data[j] = keep + eps;
            const double up = eval();
            value.data[j] = keep - eps;
            const double dn = eval();
            value.data[j] = keep;
            const double fd = (up - dn) / (2 * eps);
            const double got = grads[pi].data[j];
            const double err = std::abs(fd - got);
            CAPTURE(set.name(pi));
            CAPTURE(j);
            CHECK(err <= atol + rtol * std::max(std::abs(fd), std::abs(got)));
        }
    }
}

Tensor randn(std::int64_t r, std::int64_t c, std::uint64_t seed) {
    Rng rng(seed);
    return Tensor::randn(r, c, 1.0, rng);
}

}  // namespace

TEST_CASE("rng determinism and ranges") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    Rng c(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = c.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}

TEST_CASE("matmul forward matches naive") {
    Graph g;
    Tensor a = randn(3, 4, 1), b = randn(4, 5, 2);
    int c = g.matmul(g.input(a), g.input(b));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 5; ++j) {
            double acc = 0;
            for (int k = 0; k < 4; ++k) acc += a.at(i, k) * b.at(k, j);
            CHECK(g.val(c).at(i, j) == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("gradients: matmul with transposes") {
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            ParamSet set;
            Parameter A{ta ? randn(4, 3, 10) : randn(3, 4, 10)};
            Parameter B{tb ? randn(5, 4, 11) : randn(4, 5, 11)};
            set.add("a", A);
            set.add("b", B);
            check_gradients(set, [&](Graph& g) {
                int c = g.matmul(g.param(A), g.param(B), ta, tb);
                int s = g.matmul(c, g.input(randn(5, 1, 12)));
                return g.mean_rows(g.matmul(s, g.input(randn(1, 1, 13)), true, false));
            });
        }
}

TEST_CASE("gradients: layer norm, softmax, gelu, bias") {
    ParamSet set;
    Parameter X{randn(4, 6, 20)};
    Parameter Gm{Tensor({6})}, Bt{Tensor({6})}, Bias{randn(1, 6, 21)};
    Gm.value.fill(1.3);
    Bt.value.fill(0.2);
    Bias.value.shape = {6};
    set.add("x", X);
    set.add("gamma", Gm);
    set.add("beta", Bt);
    set.add("bias", Bias);
    check_gradients(set, [&](Graph& g) {
        int x = g.add_bias(g.param(X), g.param(Bias));
        int ln = g.layer_norm(x, g.param(Gm), g.param(Bt));
        int sm = g.softmax_rows(ln);
        int ge = g.gelu(sm);
        int m = g.mean_rows(ge);
        return g.matmul(m, g.input(randn(6, 1, 22)));
    });
}

TEST_CASE("gradients: causal softmax and slicing") {
    ParamSet set;
    Parameter X{randn(5, 5, 30)};
    set.add("x", X);
    check_gradients(set, [&](Graph& g) {
        int p = g.causal_softmax_rows(g.param(X));
        int s = g.rows_slice(p, 1, 4);
        int cs = g.cols_slice(s, 0, 3);
        int m = g.mean_rows(cs);
        return g.matmul(m, g.input(randn(3, 1, 31)));
    });
}

TEST_CASE("causal softmax masks the strict upper triangle") {
    Graph g;
    int p = g.causal_softmax_rows(g.input(randn(4, 4, 32)));
    for (int i = 0; i < 4; ++i) {
        double row = 0;
        for (int j = 0; j < 4; ++j) {
            if (j > i) CHECK(g.val(p).at(i, j) == 0.0);
            row += g.val(p).at(i, j);
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("gradients: gather, group mean, expand, concat") {
    ParamSet set;
    Parameter Table{randn(7, 3, 40)};
    set.add("table", Table);
    check_gradients(set, [&](Graph& g) {
        int rows = g.gather_rows(g.param(Table), {0, 3, 3, 6, 1, 2});
        int pooled = g.group_mean_rows(rows, {0, 0, 1, 1, 2, 2}, 3);
        int spread = g.expand_rows(pooled, {2, 1, 0, 0}, 4);
        int cat = g.rows_concat({pooled, spread});
        int m = g.mean_rows(cat);
        return g.matmul(m, g.input(randn(3, 1, 41)));
    });
}

TEST_CASE("gradients: cross entropy rows") {
    ParamSet set;
    Parameter Z{randn(6, 9, 50)};
    set.add("z", Z);
    check_gradients(set, [&](Graph& g) {
        return g.cross_entropy_rows(g.param(Z), {1, 8, 0, 4}, 2, 6);
    });
}

TEST_CASE("gradients: weighted bce with class mask") {
    ParamSet set;
    Parameter Z{randn(5, 4, 60)};
    set.add("z", Z);
    Tensor y({5, 4});
    Rng rng(61);
    for (auto& v : y.data) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
    Tensor w = Tensor::vec({2.0, 1.0, 7.3, 1.0});
    Tensor mask = Tensor::vec({1.0, 1.0, 1.0, 0.0});
    check_gradients(set,
                    [&](Graph& g) { return g.weighted_bce(g.param(Z), y, w, mask); });
}

TEST_CASE("weighted bce closed form at z=0, y=1, w=2") {
    // d/dz [ w * softplus(-z) ] at z=0 is w * (sigma(0) - 1) = -1
    ParamSet set;
    Parameter Z{Tensor({1, 1})};
    set.add("z", Z);
    std::vector<Tensor> grads = set.make_grad_buffer();
    Graph g(&set, &grads);
    Tensor y = Tensor::full(1, 1, 1.0);
    Tensor w = Tensor::vec({2.0});
    Tensor mask = Tensor::vec({1.0});
    int loss = g.weighted_bce(g.param(Z), y, w, mask);
    g.backward(loss);
    CHECK(grads[0].data[0] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("gradients: attention + ffn + lora stack") {
    Rng rng(70);
    ParamSet set;
    nn::Attention attn;
    nn::init_attention(attn, 8, 2, rng, false);
    nn::add_params(set, "attn", attn);
    nn::Ffn ffn;
    nn::init_ffn(ffn, 8, 12, rng, false);
    nn::add_params(set, "ffn", ffn);
    nn::AttentionAdapters ad;
    nn::init_attention_adapters(ad, 8, 2, 4.0, rng);
    // give the zero-init B matrices nonzero values so their path is exercised
    for (auto* p : {&ad.q.b, &ad.k.b, &ad.v.b, &ad.o.b})
        p->value = Tensor::randn(p->value.rows(), p->value.cols(), 0.3, rng);
    nn::add_params(set, "lora", ad);

    Tensor x = randn(5, 8, 71);
    check_gradients(
        set,
        [&](Graph& g) {
            int xi = g.input_ref(&x);
            int a = nn::self_attention(g, attn, &ad, xi, true);
            int f = nn::apply(g, ffn, a);
            int m = g.mean_rows(f);
            return g.matmul(m, g.input(randn(8, 1, 72)));
        },
        1e-5, 1e-5, 1e-9);
}

TEST_CASE("param set checksum tracks prefix subsets") {
    ParamSet set;
    Parameter a{randn(2, 2, 80)}, b{randn(2, 2, 81)};
    set.add("dec.w", a);
    set.add("proj.w", b);
    const auto dec = set.checksum("dec.");
    const auto all = set.checksum();
    b.value.data[0] += 1.0;
    CHECK(set.checksum("dec.") == dec);
    CHECK(set.checksum() != all);
}

TEST_CASE("batch gradients are deterministic across thread counts when chunked identically") {
    Rng rng(90);
    ParamSet set;
    Parameter W{randn(3, 3, 91)};
    set.add("w", W);
    Tensor xs = randn(8, 3, 92);

    auto build = [&](Graph& g, int i) {
        int row = g.input(Tensor{{1, 3}, {}});
        Tensor r({1, 3});
        for (int c = 0; c < 3; ++c) r.data[c] = xs.at(i, c);
        g.clear();
        int x = g.input(r);
        int y = g.matmul(x, g.param(W), false, true);
        int m = g.mean_rows(y);
        (void)row;
        return g.matmul(m, g.input(randn(3, 1, 93)));
    };

    std::vector<Tensor> g1, g2;
    const double l1 = nn::batch_gradients(set, nullptr, 8, 1, build, g1);
    const double l2 = nn::batch_gradients(set, nullptr, 8, 1, build, g2);
    CHECK(l1 == l2);
    for (std::int64_t j = 0; j < g1[0].numel(); ++j) CHECK(g1[0].data[j] == g2[0].data[j]);
}
