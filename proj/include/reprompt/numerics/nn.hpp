#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "reprompt/numerics/ops.hpp"
#include "reprompt/numerics/tensor.hpp"

namespace reprompt::numerics {

/// Seeded generator for parameter initialization and data generation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    bool bernoulli(double p) { return uniform() < p; }
    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }
    int poisson(double mean) {
        if (mean <= 0) return 0;
        return std::poisson_distribution<int>(mean)(engine_);
    }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

inline Tensor normal_tensor(Shape shape, double stddev, Rng& rng, bool requires_grad) {
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = rng.normal(0.0, stddev);
    return Tensor(std::move(shape), std::move(values), requires_grad);
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual recurrent-layer default.
inline Tensor fan_in_tensor(Shape shape, std::size_t fan_in, Rng& rng, bool requires_grad) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = rng.uniform(-bound, bound);
    return Tensor(std::move(shape), std::move(values), requires_grad);
}

/// Named parameter list used for enumeration, optimizer wiring and checkpoints.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// GRU with the standard gate ordering (reset, update, candidate):
//   r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//   z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//   n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//   h' = (1 - z) * n + z * h
// Weight matrices are [hidden x input] / [hidden x hidden].
struct GRUParams {
    Tensor w_ir, w_iz, w_in;
    Tensor w_hr, w_hz, w_hn;
    Tensor b_ir, b_iz, b_in;
    Tensor b_hr, b_hz, b_hn;

    std::size_t input_size() const { return w_ir.dim(1); }
    std::size_t hidden_size() const { return w_ir.dim(0); }

    static GRUParams init(std::size_t input, std::size_t hidden, Rng& rng, bool requires_grad = true) {
        GRUParams p;
        for (Tensor* w : {&p.w_ir, &p.w_iz, &p.w_in}) *w = fan_in_tensor({hidden, input}, hidden, rng, requires_grad);
        for (Tensor* w : {&p.w_hr, &p.w_hz, &p.w_hn}) *w = fan_in_tensor({hidden, hidden}, hidden, rng, requires_grad);
        for (Tensor* b : {&p.b_ir, &p.b_iz, &p.b_in, &p.b_hr, &p.b_hz, &p.b_hn})
            *b = fan_in_tensor({hidden}, hidden, rng, requires_grad);
        return p;
    }

    static GRUParams zeros(std::size_t input, std::size_t hidden, bool requires_grad = true) {
        GRUParams p;
        for (Tensor* w : {&p.w_ir, &p.w_iz, &p.w_in}) *w = Tensor::zeros({hidden, input}, requires_grad);
        for (Tensor* w : {&p.w_hr, &p.w_hz, &p.w_hn}) *w = Tensor::zeros({hidden, hidden}, requires_grad);
        for (Tensor* b : {&p.b_ir, &p.b_iz, &p.b_in, &p.b_hr, &p.b_hz, &p.b_hn})
            *b = Tensor::zeros({hidden}, requires_grad);
        return p;
    }

    void append_to(NamedTensors& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".w_ir", w_ir);
        out.emplace_back(prefix + ".w_iz", w_iz);
        out.emplace_back(prefix + ".w_in", w_in);
        out.emplace_back(prefix + ".w_hr", w_hr);
        out.emplace_back(prefix + ".w_hz", w_hz);
        out.emplace_back(prefix + ".w_hn", w_hn);
        out.emplace_back(prefix + ".b_ir", b_ir);
        out.emplace_back(prefix + ".b_iz", b_iz);
        out.emplace_back(prefix + ".b_in", b_in);
        out.emplace_back(prefix + ".b_hr", b_hr);
        out.emplace_back(prefix + ".b_hz", b_hz);
        out.emplace_back(prefix + ".b_hn", b_hn);
    }
};

inline Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GRUParams& p) {
    if (x.ndim() != 1 || x.size() != p.input_size() || h_prev.ndim() != 1 || h_prev.size() != p.hidden_size()) {
        throw DimensionError("gru_cell: x " + shape_string(x.shape()) + " / h " + shape_string(h_prev.shape()) +
                             " do not match GRU(" + std::to_string(p.input_size()) + "->" +
                             std::to_string(p.hidden_size()) + ")");
    }
    const Tensor r = sigmoid(add(add(matvec(p.w_ir, x), p.b_ir), add(matvec(p.w_hr, h_prev), p.b_hr)));
    const Tensor z = sigmoid(add(add(matvec(p.w_iz, x), p.b_iz), add(matvec(p.w_hz, h_prev), p.b_hz)));
    const Tensor n = tanh(add(add(matvec(p.w_in, x), p.b_in), mul(r, add(matvec(p.w_hn, h_prev), p.b_hn))));
    return add(mul(one_minus(z), n), mul(z, h_prev));
}

/// Runs a GRU over a sequence from a zero state; returns one hidden state per step, as rows.
inline Tensor gru_sequence(const std::vector<Tensor>& inputs, const GRUParams& p) {
    Tensor h = Tensor::zeros({p.hidden_size()});
    std::vector<Tensor> states;
    states.reserve(inputs.size());
    for (const auto& x : inputs) {
        h = gru_cell(x, h, p);
        states.push_back(h);
    }
    return concat_rows(states);
}

// LSTM with gate order (input, forget, cell, output); [hidden x input] weights, one bias per gate.
struct LSTMParams {
    Tensor w_ii, w_if, w_ig, w_io;
    Tensor w_hi, w_hf, w_hg, w_ho;
    Tensor b_i, b_f, b_g, b_o;

    std::size_t input_size() const { return w_ii.dim(1); }
    std::size_t hidden_size() const { return w_ii.dim(0); }

    static LSTMParams init(std::size_t input, std::size_t hidden, Rng& rng, bool requires_grad = true) {
        LSTMParams p;
        for (Tensor* w : {&p.w_ii, &p.w_if, &p.w_ig, &p.w_io}) *w = fan_in_tensor({hidden, input}, hidden, rng, requires_grad);
        for (Tensor* w : {&p.w_hi, &p.w_hf, &p.w_hg, &p.w_ho}) *w = fan_in_tensor({hidden, hidden}, hidden, rng, requires_grad);
        for (Tensor* b : {&p.b_i, &p.b_f, &p.b_g, &p.b_o}) *b = fan_in_tensor({hidden}, hidden, rng, requires_grad);
        return p;
    }

    void append_to(NamedTensors& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".w_ii", w_ii);
        out.emplace_back(prefix + ".w_if", w_if);
        out.emplace_back(prefix + ".w_ig", w_ig);
        out.emplace_back(prefix + ".w_io", w_io);
        out.emplace_back(prefix + ".w_hi", w_hi);
        out.emplace_back(prefix + ".w_hf", w_hf);
        out.emplace_back(prefix + ".w_hg", w_hg);
        out.emplace_back(prefix + ".w_ho", w_ho);
        out.emplace_back(prefix + ".b_i", b_i);
        out.emplace_back(prefix + ".b_f", b_f);
        out.emplace_back(prefix + ".b_g", b_g);
        out.emplace_back(prefix + ".b_o", b_o);
    }
};

struct LSTMState {
    Tensor h;
    Tensor c;
};

inline LSTMState lstm_cell(const Tensor& x, const LSTMState& prev, const LSTMParams& p) {
    if (x.ndim() != 1 || x.size() != p.input_size() || prev.h.size() != p.hidden_size()) {
        throw DimensionError("lstm_cell: x " + shape_string(x.shape()) + " does not match LSTM(" +
                             std::to_string(p.input_size()) + "->" + std::to_string(p.hidden_size()) + ")");
    }
    auto gate = [&](const Tensor& wi, const Tensor& wh, const Tensor& b) {
        return add(add(matvec(wi, x), matvec(wh, prev.h)), b);
    };
    const Tensor i = sigmoid(gate(p.w_ii, p.w_hi, p.b_i));
    const Tensor f = sigmoid(gate(p.w_if, p.w_hf, p.b_f));
    const Tensor g = tanh(gate(p.w_ig, p.w_hg, p.b_g));
    const Tensor o = sigmoid(gate(p.w_io, p.w_ho, p.b_o));
    const Tensor c = add(mul(f, prev.c), mul(i, g));
    return {mul(o, tanh(c)), c};
}

/// Projection weights of a multi-head attention block. Matrices are [in x out] (x * W).
struct AttentionWeights {
    Tensor wq, wk, wv, wo;
    Tensor bq, bk, bv, bo;

    static AttentionWeights init(std::size_t d, double stddev, double out_stddev, Rng& rng, bool requires_grad) {
        AttentionWeights a;
        a.wq = normal_tensor({d, d}, stddev, rng, requires_grad);
        a.wk = normal_tensor({d, d}, stddev, rng, requires_grad);
        a.wv = normal_tensor({d, d}, stddev, rng, requires_grad);
        a.wo = normal_tensor({d, d}, out_stddev, rng, requires_grad);
        for (Tensor* b : {&a.bq, &a.bk, &a.bv, &a.bo}) *b = Tensor::zeros({d}, requires_grad);
        return a;
    }

    void append_to(NamedTensors& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".wq", wq);
        out.emplace_back(prefix + ".wk", wk);
        out.emplace_back(prefix + ".wv", wv);
        out.emplace_back(prefix + ".wo", wo);
        out.emplace_back(prefix + ".bq", bq);
        out.emplace_back(prefix + ".bk", bk);
        out.emplace_back(prefix + ".bv", bv);
        out.emplace_back(prefix + ".bo", bo);
    }
};

/// Multi-head scaled dot-product self-attention over the rows of x [S x D].
inline Tensor multi_head_attention(const Tensor& x, const AttentionWeights& w, std::size_t heads, bool causal) {
    const std::size_t d = x.cols();
    if (heads == 0 || d % heads != 0) {
        throw DimensionError("attention: width " + std::to_string(d) + " not divisible into " +
                             std::to_string(heads) + " heads");
    }
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const Tensor q = add_bias(matmul(x, w.wq), w.bq);
    const Tensor k = add_bias(matmul(x, w.wk), w.bk);
    const Tensor v = add_bias(matmul(x, w.wv), w.bv);
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        const Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        const Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        const Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
        outs.push_back(matmul(softmax(scores, causal), vh));
    }
    const Tensor merged = heads == 1 ? outs.front() : concat_cols(outs);
    return add_bias(matmul(merged, w.wo), w.bo);
}

struct FeedForwardWeights {
    Tensor w1, b1, w2, b2;

    static FeedForwardWeights init(std::size_t d, std::size_t hidden, double stddev, double out_stddev, Rng& rng,
                                   bool requires_grad) {
        return {normal_tensor({d, hidden}, stddev, rng, requires_grad), Tensor::zeros({hidden}, requires_grad),
                normal_tensor({hidden, d}, out_stddev, rng, requires_grad), Tensor::zeros({d}, requires_grad)};
    }

    void append_to(NamedTensors& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".w1", w1);
        out.emplace_back(prefix + ".b1", b1);
        out.emplace_back(prefix + ".w2", w2);
        out.emplace_back(prefix + ".b2", b2);
    }
};

inline Tensor feed_forward(const Tensor& x, const FeedForwardWeights& w) {
    return add_bias(matmul(gelu(add_bias(matmul(x, w.w1), w.b1)), w.w2), w.b2);
}

/// Sinusoidal position encodings [length x d].
inline Tensor sinusoidal_positions(std::size_t length, std::size_t d) {
    std::vector<double> values(length * d);
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t i = 0; i < d; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
            const double angle = static_cast<double>(pos) * rate;
            values[pos * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return Tensor({length, d}, std::move(values));
}

}  // namespace reprompt::numerics
