#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcppd/rng.hpp"

namespace dcppd {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;

// Dense row-major tensor. Most of the pipeline works on 2-D [rows x cols]
// matrices (token sequences, weight matrices); 1-D vectors are [n].
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::initializer_list<std::int64_t> s) : shape(s) { data.assign(numel(), 0.0); }
    explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) { data.assign(numel(), 0.0); }

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (auto d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }
    std::int64_t rows() const { return shape.size() == 2 ? shape[0] : (shape.size() == 1 ? 1 : 0); }
    std::int64_t cols() const { return shape.size() == 2 ? shape[1] : (shape.size() == 1 ? shape[0] : 0); }

    double& at(std::int64_t r, std::int64_t c) { return data[r * cols() + c]; }
    double at(std::int64_t r, std::int64_t c) const { return data[r * cols() + c]; }
    double& operator[](std::int64_t i) { return data[i]; }
    double operator[](std::int64_t i) const { return data[i]; }

    MatMap mat() { return MatMap(data.data(), rows(), cols()); }
    ConstMatMap mat() const { return ConstMatMap(data.data(), rows(), cols()); }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(0.0); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    static Tensor zeros(std::int64_t r, std::int64_t c) { return Tensor({r, c}); }
    static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape); }
    static Tensor full(std::int64_t r, std::int64_t c, double v) {
        Tensor t({r, c});
        t.fill(v);
        return t;
    }
    static Tensor vec(std::vector<double> v) {
        Tensor t;
        t.shape = {static_cast<std::int64_t>(v.size())};
        t.data = std::move(v);
        return t;
    }
    static Tensor randn(std::int64_t r, std::int64_t c, double stddev, Rng& rng) {
        Tensor t({r, c});
        for (auto& x : t.data) x = stddev * rng.normal();
        return t;
    }
};

inline std::string shape_str(const Tensor& t) {
    std::string s = "[";
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(t.shape[i]);
    }
    return s + "]";
}

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

}  // namespace dcppd
