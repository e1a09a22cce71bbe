#include "dcppd/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dcppd {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}
inline double softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}
}  // namespace

std::uint64_t fnv1a_bytes(const void* data, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t ParamSet::checksum(const std::string& name_prefix) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!name_prefix.empty() && names_[i].rfind(name_prefix, 0) != 0) continue;
        const auto& d = params_[i]->value.data;
        h = fnv1a_bytes(d.data(), d.size() * sizeof(double), h);
    }
    return h;
}

Tensor& Graph::grad_of(int id) {
    Node& n = nodes_[id];
    if (n.grad.shape.empty()) n.grad = Tensor(n.v().shape);
    return n.grad;
}

void Graph::accumulate(int id, const Tensor& g) {
    if (!tracked(id)) return;
    Tensor& dst = grad_of(id);
    const std::int64_t n = dst.numel();
    for (std::int64_t i = 0; i < n; ++i) dst.data[i] += g.data[i];
}

int Graph::input(Tensor v) {
    Node n;
    n.owned = std::move(v);
    return push(std::move(n));
}

int Graph::input_ref(const Tensor* v) {
    Node n;
    n.ref = v;
    return push(std::move(n));
}

int Graph::param(const Parameter& p) {
    Node n;
    n.ref = &p.value;
    const bool owned = set_ != nullptr && p.owner == set_ && p.id >= 0;
    const bool enabled = mask_ == nullptr || (p.id >= 0 && (*mask_)[p.id] != 0);
    if (grads_ != nullptr && owned && enabled) {
        n.needs_grad = true;
        n.param_id = p.id;
    }
    return push(std::move(n));
}

int Graph::matmul(int a, int b, bool ta, bool tb) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    const std::int64_t m = ta ? A.cols() : A.rows();
    const std::int64_t ka = ta ? A.rows() : A.cols();
    const std::int64_t kb = tb ? B.cols() : B.rows();
    const std::int64_t n = tb ? B.rows() : B.cols();
    require(ka == kb, "matmul: inner dims " + shape_str(A) + " vs " + shape_str(B));

    Node out;
    out.owned = Tensor::zeros(m, n);
    {
        auto C = out.owned.mat();
        auto Am = A.mat();
        auto Bm = B.mat();
        if (!ta && !tb) C.noalias() = Am * Bm;
        else if (ta && !tb) C.noalias() = Am.transpose() * Bm;
        else if (!ta && tb) C.noalias() = Am * Bm.transpose();
        else C.noalias() = Am.transpose() * Bm.transpose();
    }
    out.needs_grad = tracked(a) || tracked(b);
    if (out.needs_grad) {
        out.back = [a, b, ta, tb](Graph& g, Node& self) {
            auto G = self.grad.mat();
            const Tensor& A = g.val(a);
            const Tensor& B = g.val(b);
            if (g.tracked(a)) {
                Tensor da(A.shape);
                auto D = da.mat();
                // dA' = G * B'^T, then undo the transpose on A
                if (!ta && !tb) D.noalias() = G * B.mat().transpose();
                else if (!ta && tb) D.noalias() = G * B.mat();
                else if (ta && !tb) D.noalias() = B.mat() * G.transpose();
                else D.noalias() = B.mat().transpose() * G.transpose();
                g.accumulate(a, da);
            }
            if (g.tracked(b)) {
                Tensor db(B.shape);
                auto D = db.mat();
                if (!ta && !tb) D.noalias() = A.mat().transpose() * G;
                else if (ta && !tb) D.noalias() = A.mat() * G;
                else if (!ta && tb) D.noalias() = G.transpose() * A.mat();
                else D.noalias() = G.transpose() * A.mat().transpose();
                g.accumulate(b, db);
            }
        };
    }
    return push(std::move(out));
}

int Graph::add(int a, int b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    require(A.shape == B.shape, "add: shape mismatch " + shape_str(A) + " vs " + shape_str(B));
    Node out;
    out.owned = Tensor(A.shape);
    for (std::int64_t i = 0; i < A.numel(); ++i) out.owned.data[i] = A.data[i] + B.data[i];
    out.needs_grad = tracked(a) || tracked(b);
    if (out.needs_grad) {
        out.back = [a, b](Graph& g, Node& self) {
            g.accumulate(a, self.grad);
            g.accumulate(b, self.grad);
        };
    }
    return push(std::move(out));
}

int Graph::sub(int a, int b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    require(A.shape == B.shape, "sub: shape mismatch");
    Node out;
    out.owned = Tensor(A.shape);
    for (std::int64_t i = 0; i < A.numel(); ++i) out.owned.data[i] = A.data[i] - B.data[i];
    out.needs_grad = tracked(a) || tracked(b);
    if (out.needs_grad) {
        out.back = [a, b](Graph& g, Node& self) {
            g.accumulate(a, self.grad);
            if (!g.tracked(b)) return;
            Tensor neg(self.grad.shape);
            for (std::int64_t i = 0; i < neg.numel(); ++i) neg.data[i] = -self.grad.data[i];
            g.accumulate(b, neg);
        };
    }
    return push(std::move(out));
}

int Graph::scale(int a, double s) {
    const Tensor& A = val(a);
    Node out;
    out.owned = Tensor(A.shape);
    for (std::int64_t i = 0; i < A.numel(); ++i) out.owned.data[i] = s * A.data[i];
    out.needs_grad = tracked(a);
    if (out.needs_grad) {
        out.back = [a, s](Graph& g, Node& self) {
            Tensor da(self.grad.shape);
            for (std::int64_t i = 0; i < da.numel(); ++i) da.data[i] = s * self.grad.data[i];
            g.accumulate(a, da);
        };
    }
    return push(std::move(out));
}

int Graph::add_bias(int x, int bias) {
    const Tensor& X = val(x);
    const Tensor& B = val(bias);
    require(B.numel() == X.cols(), "add_bias: bias length != cols");
    Node out;
    out.owned = Tensor(X.shape);
    const std::int64_t T = X.rows(), C = X.cols();
    for (std::int64_t r = 0; r < T; ++r)
        for (std::int64_t c = 0; c < C; ++c) out.owned.data[r * C + c] = X.data[r * C + c] + B.data[c];
    out.needs_grad = tracked(x) || tracked(bias);
    if (out.needs_grad) {
        out.back = [x, bias, T, C](Graph& g, Node& self) {
            g.accumulate(x, self.grad);
            if (!g.tracked(bias)) return;
            Tensor db(g.val(bias).shape);
            for (std::int64_t r = 0; r < T; ++r)
                for (std::int64_t c = 0; c < C; ++c) db.data[c] += self.grad.data[r * C + c];
            g.accumulate(bias, db);
        };
    }
    return push(std::move(out));
}

int Graph::layer_norm(int x, int gamma, int beta, double eps) {
    const Tensor& X = val(x);
    const Tensor& G = val(gamma);
    const Tensor& Bt = val(beta);
    const std::int64_t T = X.rows(), C = X.cols();
    require(G.numel() == C && Bt.numel() == C, "layer_norm: affine length != cols");

    Tensor xhat({T, C});
    Tensor inv_std({T});
    Node out;
    out.owned = Tensor(X.shape);
    for (std::int64_t r = 0; r < T; ++r) {
        double mu = 0.0;
        for (std::int64_t c = 0; c < C; ++c) mu += X.data[r * C + c];
        mu /= static_cast<double>(C);
        double var = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
            const double d = X.data[r * C + c] - mu;
            var += d * d;
        }
        var /= static_cast<double>(C);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std.data[r] = is;
        for (std::int64_t c = 0; c < C; ++c) {
            const double xh = (X.data[r * C + c] - mu) * is;
            xhat.data[r * C + c] = xh;
            out.owned.data[r * C + c] = xh * G.data[c] + Bt.data[c];
        }
    }
    out.needs_grad = tracked(x) || tracked(gamma) || tracked(beta);
    if (out.needs_grad) {
        out.back = [x, gamma, beta, T, C, xh = std::move(xhat), is = std::move(inv_std)](
                       Graph& g, Node& self) {
            const Tensor& G = g.val(gamma);
            if (g.tracked(gamma) || g.tracked(beta)) {
                Tensor dg(G.shape), db(G.shape);
                for (std::int64_t r = 0; r < T; ++r)
                    for (std::int64_t c = 0; c < C; ++c) {
                        dg.data[c] += self.grad.data[r * C + c] * xh.data[r * C + c];
                        db.data[c] += self.grad.data[r * C + c];
                    }
                g.accumulate(gamma, dg);
                g.accumulate(beta, db);
            }
            if (g.tracked(x)) {
                Tensor dx({T, C});
                for (std::int64_t r = 0; r < T; ++r) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::int64_t c = 0; c < C; ++c) {
                        const double dxh = self.grad.data[r * C + c] * G.data[c];
                        m1 += dxh;
                        m2 += dxh * xh.data[r * C + c];
                    }
                    m1 /= static_cast<double>(C);
                    m2 /= static_cast<double>(C);
                    for (std::int64_t c = 0; c < C; ++c) {
                        const double dxh = self.grad.data[r * C + c] * G.data[c];
                        dx.data[r * C + c] = is.data[r] * (dxh - m1 - xh.data[r * C + c] * m2);
                    }
                }
                g.accumulate(x, dx);
            }
        };
    }
    return push(std::move(out));
}

namespace {
// shared softmax backward: dx = y * (g - sum(g*y)) per row, restricted to
// the columns that were allowed in the forward pass (y is 0 elsewhere)
void softmax_backward(const Tensor& y, const Tensor& grad, Tensor& dx) {
    const std::int64_t T = y.rows(), C = y.cols();
    for (std::int64_t r = 0; r < T; ++r) {
        double dot = 0.0;
        for (std::int64_t c = 0; c < C; ++c) dot += grad.data[r * C + c] * y.data[r * C + c];
        for (std::int64_t c = 0; c < C; ++c)
            dx.data[r * C + c] = y.data[r * C + c] * (grad.data[r * C + c] - dot);
    }
}
}  // namespace

int Graph::softmax_rows(int x) {
    const Tensor& X = val(x);
    const std::int64_t T = X.rows(), C = X.cols();
    Node out;
    out.owned = Tensor(X.shape);
    for (std::int64_t r = 0; r < T; ++r) {
        double m = X.data[r * C];
        for (std::int64_t c = 1; c < C; ++c) m = std::max(m, X.data[r * C + c]);
        double z = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
            const double e = std::exp(X.data[r * C + c] - m);
            out.owned.data[r * C + c] = e;
            z += e;
        }
        for (std::int64_t c = 0; c < C; ++c) out.owned.data[r * C + c] /= z;
    }
    out.needs_grad = tracked(x);
    if (out.needs_grad) {
        out.back = [x](Graph& g, Node& self) {
            Tensor dx(self.grad.shape);
            softmax_backward(self.v(), self.grad, dx);
            g.accumulate(x, dx);
        };
    }
    return push(std::move(out));
}

int Graph::causal_softmax_rows(int x, int col_offset) {
    const Tensor& X = val(x);
    const std::int64_t T = X.rows(), C = X.cols();
    Node out;
    out.owned = Tensor(X.shape);
    for (std::int64_t r = 0; r < T; ++r) {
        const std::int64_t hi = std::min<std::int64_t>(C, r + col_offset + 1);
        require(hi > 0, "causal_softmax_rows: row with no visible columns");
        double m = X.data[r * C];
        for (std::int64_t c = 1; c < hi; ++c) m = std::max(m, X.data[r * C + c]);
        double z = 0.0;
        for (std::int64_t c = 0; c < hi; ++c) {
            const double e = std::exp(X.data[r * C + c] - m);
            out.owned.data[r * C + c] = e;
            z += e;
        }
        for (std::int64_t c = 0; c < hi; ++c) out.owned.data[r * C + c] /= z;
    }
    out.needs_grad = tracked(x);
    if (out.needs_grad) {
        out.back = [x](Graph& g, Node& self) {
            Tensor dx(self.grad.shape);
            softmax_backward(self.v(), self.grad, dx);
            g.accumulate(x, dx);
        };
    }
    return push(std::move(out));
}

int Graph::gelu(int x) {
    const Tensor& X = val(x);
    Node out;
    out.owned = Tensor(X.shape);
    for (std::int64_t i = 0; i < X.numel(); ++i) {
        const double v = X.data[i];
        out.owned.data[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    out.needs_grad = tracked(x);
    if (out.needs_grad) {
        out.back = [x](Graph& g, Node& self) {
            const Tensor& X = g.val(x);
            Tensor dx(X.shape);
            for (std::int64_t i = 0; i < X.numel(); ++i) {
                const double v = X.data[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                dx.data[i] = self.grad.data[i] * (cdf + v * pdf);
            }
            g.accumulate(x, dx);
        };
    }
    return push(std::move(out));
}

int Graph::rows_concat(const std::vector<int>& parts) {
    require(!parts.empty(), "rows_concat: empty");
    const std::int64_t C = val(parts[0]).cols();
    std::int64_t T = 0;
    bool ng = false;
    for (int p : parts) {
        require(val(p).cols() == C, "rows_concat: col mismatch");
        T += val(p).rows();
        ng = ng || tracked(p);
    }
    Node out;
    out.owned = Tensor::zeros(T, C);
    std::int64_t r = 0;
    std::vector<std::int64_t> offsets;
    for (int p : parts) {
        const Tensor& P = val(p);
        offsets.push_back(r);
        std::memcpy(out.owned.data.data() + r * C, P.data.data(), sizeof(double) * P.numel());
        r += P.rows();
    }
    out.needs_grad = ng;
    if (ng) {
        out.back = [parts, offsets, C](Graph& g, Node& self) {
            for (std::size_t i = 0; i < parts.size(); ++i) {
                if (!g.tracked(parts[i])) continue;
                const Tensor& P = g.val(parts[i]);
                Tensor dp(P.shape);
                std::memcpy(dp.data.data(), self.grad.data.data() + offsets[i] * C,
                            sizeof(double) * P.numel());
                g.accumulate(parts[i], dp);
            }
        };
    }
    return push(std::move(out));
}

int Graph::rows_slice(int x, std::int64_t lo, std::int64_t hi) {
    const Tensor& X = val(x);
    require(0 <= lo && lo <= hi && hi <= X.rows(), "rows_slice: bad range");
    const std::int64_t C = X.cols();
    Node out;
    out.owned = Tensor::zeros(hi - lo, C);
    std::memcpy(out.owned.data.data(), X.data.data() + lo * C, sizeof(double) * (hi - lo) * C);
    out.needs_grad = tracked(x);
    if (out.needs_grad) {
        out.back = [x, lo, hi, C](Graph& g, Node& self) {
            Tensor dx(g.val(x).shape);
            std::memcpy(dx.data.data() + lo * C, self.grad.data.data(),
                        sizeof(double) * (hi - lo) * C);
            g.accumulate(x, dx);
        };
    }
    return push(std::move(out));
}

int Graph::cols_slice(int x, std::int64_t lo, std::int64_t hi) {
    const Tensor& X = val(x);
    require(0 <= lo && lo <= hi && hi <= X.cols(), "cols_slice: bad range");
    const std::int64_t T = X.rows(), C = X.cols(), W = hi - lo;
    Node out;
    out.owned = Tensor::zeros(T, W);
    for (std::int64_t r = 0; r < T; ++r)
        std::memcpy(out.owned.data.data() + r * W, X.data.data() + r * C + lo, sizeof(double) * W);
    out.needs_grad = tracked(x);
    if (out.needs_grad) {
        out.back = [x, lo, T, C, W](Graph& g, Node& self) {
            Tensor dx(g.val(x).shape);
            for (std::int64_t r = 0; r < T; ++r)
                std::memcpy(dx.data.data() + r * C + lo, self.grad.data.data() + r * W,
                            sizeof(double) * W);
            g.accumulate(x, dx);
        };
    }
    return push(std::move(out));
}

int Graph::cols_concat(const std::vector<int>& parts) {
    require(!parts.empty(), "cols_concat: empty");
    const std::int64_t T = val(parts[0]).rows();
    std::int64_t C = 0;
    bool ng = false;
    for (int p : parts) {
        require(val(p).rows() == T, "cols_concat: row mismatch");
        C += val(p).cols();
        ng = ng || tracked(p);
    }
    Node out;
    out.owned = Tensor::zeros(T, C);
    std::vector<std::int64_t> offsets;
    std::int64_t at = 0;
    for (int p : parts) {
        const Tensor& P = val(p);
        offsets.push_back(at);
        const std::int64_t W = P.cols();
        for (std::int64_t r = 0; r < T; ++r)
            std::memcpy(out.owned.data.data() + r * C + at, P.data.data() + r * W,
                        sizeof(double) * W);
        at += W;
    }
    out.needs_grad = ng;
    if (ng) {
        out.back = [parts, offsets, T, C](Graph& g, Node& self) {
            for (std::size_t i = 0; i < parts.size(); ++i) {
                if (!g.tracked(parts[i])) continue;
                const Tensor& P = g.val(parts[i]);
                const std::int64_t W = P.cols();
                Tensor dp(P.shape);
                for (std::int64_t r = 0; r < T; ++r)
                    std::memcpy(dp.data.data() + r * W,
                                self.grad.data.data() + r * C + offsets[i], sizeof(double) * W);
                g.accumulate(parts[i], dp);
            }
        };
    }
    return push(std::move(out));
}

int Graph::gather_rows(int table, std::vector<int> idx) {
    const Tensor& Tb = val(table);
    const std::int64_t C = Tb.cols();
    Node out;
    out.owned = Tensor::zeros(static_cast<std::int64_t>(idx.size()), C);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        require(idx[r] >= 0 && idx[r] < Tb.rows(), "gather_rows: index out of range");
        std::memcpy(out.owned.data.data() + r * C, Tb.data.data() + idx[r] * C, sizeof(double) * C);
    }
    out.needs_grad = tracked(table);
    if (out.needs_grad) {
        out.back = [table, idx = std::move(idx), C](Graph& g, Node& self) {
            Tensor dt(g.val(table).shape);
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::int64_t c = 0; c < C; ++c)
                    dt.data[idx[r] * C + c] += self.grad.data[r * C + c];
            g.accumulate(table, dt);
        };
    }
    return push(std::move(out));
}

int Graph::mean_rows(int x) {
    const Tensor& X = val(x);
    const std::int64_t T = X.rows(), C = X.cols();
    require(T > 0, "mean_rows: empty");
    Node out;
    out.owned = Tensor::zeros(1, C);
    for (std::int64_t r = 0; r < T; ++r)
        for (std::int64_t c = 0; c < C; ++c) out.owned.data[c] += X.data[r * C + c];
    for (std::int64_t c = 0; c < C; ++c) out.owned.data[c] /= static_cast<double>(T);
    out.needs_grad = tracked(x);
    if (out.needs_grad) {
        out.back = [x, T, C](Graph& g, Node& self) {
            Tensor dx({T, C});
            for (std::int64_t r = 0; r < T; ++r)
                for (std::int64_t c = 0; c < C; ++c)
                    dx.data[r * C + c] = self.grad.data[c] / static_cast<double>(T);
            g.accumulate(x, dx);
        };
    }
    return push(std::move(out));
}

int Graph::group_mean_rows(int x, std::vector<int> group, int n_groups) {
    const Tensor& X = val(x);
    const std::int64_t T = X.rows(), C = X.cols();
    require(static_cast<std::int64_t>(group.size()) == T, "group_mean_rows: group size != rows");
    std::vector<double> count(n_groups, 0.0);
    for (int gi : group) {
        require(gi >= 0 && gi < n_groups, "group_mean_rows: group index out of range");
        count[gi] += 1.0;
    }
    Node out;
    out.owned = Tensor::zeros(n_groups, C);
    for (std::int64_t r = 0; r < T; ++r)
        for (std::int64_t c = 0; c < C; ++c) out.owned.data[group[r] * C + c] += X.data[r * C + c];
    for (int gi = 0; gi < n_groups; ++gi) {
        require(count[gi] > 0.0, "group_mean_rows: empty group");
        for (std::int64_t c = 0; c < C; ++c) out.owned.data[gi * C + c] /= count[gi];
    }
    out.needs_grad = tracked(x);
    if (out.needs_grad) {
        out.back = [x, group = std::move(group), count = std::move(count), T, C](Graph& g,
                                                                                 Node& self) {
            Tensor dx({T, C});
            for (std::int64_t r = 0; r < T; ++r)
                for (std::int64_t c = 0; c < C; ++c)
                    dx.data[r * C + c] = self.grad.data[group[r] * C + c] / count[group[r]];
            g.accumulate(x, dx);
        };
    }
    return push(std::move(out));
}

int Graph::expand_rows(int x, std::vector<int> src, std::int64_t n_rows) {
    const Tensor& X = val(x);
    const std::int64_t C = X.cols();
    require(static_cast<std::int64_t>(src.size()) == n_rows, "expand_rows: src size != n_rows");
    Node out;
    out.owned = Tensor::zeros(n_rows, C);
    for (std::int64_t r = 0; r < n_rows; ++r) {
        require(src[r] >= 0 && src[r] < X.rows(), "expand_rows: src index out of range");
        std::memcpy(out.owned.data.data() + r * C, X.data.data() + src[r] * C, sizeof(double) * C);
    }
    out.needs_grad = tracked(x);
    if (out.needs_grad) {
        out.back = [x, src = std::move(src), C, n_rows](Graph& g, Node& self) {
            Tensor dx(g.val(x).shape);
            for (std::int64_t r = 0; r < n_rows; ++r)
                for (std::int64_t c = 0; c < C; ++c)
                    dx.data[src[r] * C + c] += self.grad.data[r * C + c];
            g.accumulate(x, dx);
        };
    }
    return push(std::move(out));
}

int Graph::cross_entropy_rows(int logits, std::vector<int> targets, std::int64_t lo,
                              std::int64_t hi) {
    const Tensor& Z = val(logits);
    const std::int64_t V = Z.cols();
    require(0 <= lo && lo < hi && hi <= Z.rows(), "cross_entropy_rows: bad range");
    require(static_cast<std::int64_t>(targets.size()) == hi - lo,
            "cross_entropy_rows: target count != range");

    const std::int64_t N = hi - lo;
    Tensor probs({N, V});
    double loss = 0.0;
    for (std::int64_t i = 0; i < N; ++i) {
        const std::int64_t r = lo + i;
        double m = Z.data[r * V];
        for (std::int64_t c = 1; c < V; ++c) m = std::max(m, Z.data[r * V + c]);
        double z = 0.0;
        for (std::int64_t c = 0; c < V; ++c) {
            const double e = std::exp(Z.data[r * V + c] - m);
            probs.data[i * V + c] = e;
            z += e;
        }
        for (std::int64_t c = 0; c < V; ++c) probs.data[i * V + c] /= z;
        const int t = targets[i];
        require(t >= 0 && t < V, "cross_entropy_rows: target out of range");
        loss -= std::log(probs.data[i * V + t]);
    }
    loss /= static_cast<double>(N);

    Node out;
    out.owned = Tensor::vec({loss});
    out.needs_grad = tracked(logits);
    if (out.needs_grad) {
        out.back = [logits, targets = std::move(targets), lo, N, V,
                    probs = std::move(probs)](Graph& g, Node& self) {
            const double gs = self.grad.data[0] / static_cast<double>(N);
            Tensor dz(g.val(logits).shape);
            for (std::int64_t i = 0; i < N; ++i) {
                const std::int64_t r = lo + i;
                for (std::int64_t c = 0; c < V; ++c)
                    dz.data[r * V + c] = gs * probs.data[i * V + c];
                dz.data[r * V + targets[i]] -= gs;
            }
            g.accumulate(logits, dz);
        };
    }
    return push(std::move(out));
}

int Graph::weighted_bce(int logits, const Tensor& labels, const Tensor& pos_weight,
                        const Tensor& class_mask) {
    const Tensor& Z = val(logits);
    const std::int64_t N = Z.rows(), C = Z.cols();
    require(labels.rows() == N && labels.cols() == C, "weighted_bce: label shape mismatch");
    require(pos_weight.numel() == C && class_mask.numel() == C,
            "weighted_bce: weight/mask length != classes");

    double active = 0.0;
    for (std::int64_t c = 0; c < C; ++c) active += (class_mask.data[c] != 0.0) ? 1.0 : 0.0;
    require(active > 0.0, "weighted_bce: no active classes");
    const double denom = static_cast<double>(N) * active;

    double loss = 0.0;
    for (std::int64_t r = 0; r < N; ++r)
        for (std::int64_t c = 0; c < C; ++c) {
            if (class_mask.data[c] == 0.0) continue;
            const double z = Z.data[r * C + c];
            const double y = labels.data[r * C + c];
            loss += pos_weight.data[c] * y * softplus(-z) + (1.0 - y) * softplus(z);
        }
    loss /= denom;

    Node out;
    out.owned = Tensor::vec({loss});
    out.needs_grad = tracked(logits);
    if (out.needs_grad) {
        out.back = [logits, labels, pos_weight, class_mask, N, C, denom](Graph& g, Node& self) {
            const Tensor& Z = g.val(logits);
            const double gs = self.grad.data[0] / denom;
            Tensor dz(Z.shape);
            for (std::int64_t r = 0; r < N; ++r)
                for (std::int64_t c = 0; c < C; ++c) {
                    if (class_mask.data[c] == 0.0) continue;
                    const double s = sigmoid(Z.data[r * C + c]);
                    const double y = labels.data[r * C + c];
                    dz.data[r * C + c] = gs * (pos_weight.data[c] * y * (s - 1.0) + (1.0 - y) * s);
                }
            g.accumulate(logits, dz);
        };
    }
    return push(std::move(out));
}

void Graph::backward(int loss_id) {
    require(val(loss_id).numel() == 1, "backward: loss must be a scalar");
    if (!nodes_[loss_id].needs_grad) return;
    grad_of(loss_id).fill(1.0);
    for (int i = loss_id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.needs_grad || n.grad.shape.empty()) continue;
        if (n.back) n.back(*this, n);
        if (n.param_id >= 0 && grads_ != nullptr) {
            Tensor& sink = (*grads_)[n.param_id];
            for (std::int64_t j = 0; j < n.grad.numel(); ++j) sink.data[j] += n.grad.data[j];
        }
    }
}

}  // namespace dcppd
