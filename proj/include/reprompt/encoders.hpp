#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "reprompt/cohort.hpp"
#include "reprompt/errors.hpp"
#include "reprompt/numerics/nn.hpp"
#include "reprompt/numerics/ops.hpp"

namespace reprompt::encoders {

using numerics::NamedTensors;
using numerics::Rng;
using numerics::Tensor;

enum class EncoderKind { retain, lstm, transformer };

inline EncoderKind parse_encoder(std::string_view s) {
    if (s == "retain") return EncoderKind::retain;
    if (s == "lstm") return EncoderKind::lstm;
    if (s == "transformer") return EncoderKind::transformer;
    throw ConfigError("unknown encoder '" + std::string(s) + "' (valid: retain, lstm, transformer)");
}

inline std::string to_string(EncoderKind k) {
    switch (k) {
        case EncoderKind::retain: return "retain";
        case EncoderKind::lstm: return "lstm";
        case EncoderKind::transformer: return "transformer";
    }
    return "?";
}

struct EncoderConfig {
    EncoderKind kind = EncoderKind::retain;
    std::size_t d_enc = 32;
    std::size_t prompt_len = 10;  // P
    std::size_t d_model = 64;     // D
    bool reverse_time = false;    // RETAIN only: run both GRUs over reversed visits
    bool exclude_medications = false;
    std::size_t transformer_heads = 2;
    double embedding_std = 0.1;

    void validate() const {
        if (d_enc == 0 || prompt_len == 0 || d_model == 0) throw ConfigError("encoder: dimensions must be >= 1");
        if (kind == EncoderKind::transformer && (transformer_heads == 0 || d_enc % transformer_heads != 0)) {
            throw ConfigError("encoder: d_enc " + std::to_string(d_enc) + " not divisible by transformer_heads " +
                              std::to_string(transformer_heads));
        }
    }
};

/// Trainable per-modality code embedding tables [n_codes x d_enc].
struct CodeEmbeddings {
    Tensor dx, rx, px;

    static CodeEmbeddings init(const cohort::CodeVocabulary& vocab, std::size_t d, double stddev, Rng& rng) {
        return {numerics::normal_tensor({vocab.diagnoses.size(), d}, stddev, rng, true),
                numerics::normal_tensor({vocab.medications.size(), d}, stddev, rng, true),
                numerics::normal_tensor({vocab.procedures.size(), d}, stddev, rng, true)};
    }

    std::size_t dim() const { return dx.cols(); }

    void append_to(NamedTensors& out, bool with_medications) const {
        out.emplace_back("embed.dx", dx);
        if (with_medications) out.emplace_back("embed.rx", rx);
        out.emplace_back("embed.px", px);
    }
};

/// Visit embeddings V_1..V_t: each the sum of the visit's code embeddings across modalities.
inline std::vector<Tensor> embed_visits(const cohort::Patient& patient, std::size_t t, const CodeEmbeddings& tables,
                                        bool exclude_medications) {
    if (t > patient.visits.size()) {
        throw DataError("embed_visits: t=" + std::to_string(t) + " exceeds " + std::to_string(patient.visits.size()) +
                        " visits of patient " + patient.id);
    }
    std::vector<Tensor> out;
    out.reserve(t);
    for (std::size_t j = 0; j < t; ++j) {
        const auto& v = patient.visits[j];
        std::vector<Tensor> parts;
        auto take = [&](const Tensor& table, const std::vector<int>& ids) {
            if (!ids.empty()) parts.push_back(numerics::sum_rows(numerics::embedding(table, ids)));
        };
        take(tables.dx, v.dx);
        if (!exclude_medications) take(tables.rx, v.rx);
        take(tables.px, v.px);
        if (parts.empty()) {
            out.push_back(Tensor::zeros({tables.dim()}));
            continue;
        }
        Tensor acc = parts.front();
        for (std::size_t k = 1; k < parts.size(); ++k) acc = numerics::add(acc, parts[k]);
        out.push_back(acc);
    }
    return out;
}

/// Struct prompt plus inspection data.
struct EncoderOutput {
    Tensor prompt;                // [P x D]
    std::vector<double> alphas;   // visit attention (RETAIN only)
    std::vector<double> beta_max; // max |beta| per visit (RETAIN only)
};

class StructEncoder {
public:
    virtual ~StructEncoder() = default;
    virtual EncoderKind kind() const = 0;
    /// Prompt S from visits 1..t of the patient.
    virtual EncoderOutput encode(const cohort::Patient& patient, std::size_t t) const = 0;
    virtual NamedTensors named_parameters() const = 0;
    const EncoderConfig& config() const { return config_; }

protected:
    explicit StructEncoder(EncoderConfig config) : config_(config) { config_.validate(); }

    std::vector<Tensor> visits(const cohort::Patient& patient, std::size_t t) const {
        if (t == 0) throw DataError("encoder: need at least one visit");
        return embed_visits(patient, t, embeddings_, config_.exclude_medications);
    }

    Tensor project(const Tensor& k, const Tensor& w, const Tensor& b) const {
        return numerics::reshape(numerics::add(numerics::matvec(w, k), b), {config_.prompt_len, config_.d_model});
    }

    void append_embeddings(NamedTensors& out) const { embeddings_.append_to(out, !config_.exclude_medications); }

    EncoderConfig config_;
    CodeEmbeddings embeddings_;
};

// ---------------------------------------------------------------------------
// RETAIN
// ---------------------------------------------------------------------------

/// Trainable RETAIN parameters. w_alpha is [d_enc x 1], w_beta [d_enc x d_enc] (row-vector convention),
/// w_enc [(P*D) x d_enc].
struct RetainParams {
    numerics::GRUParams gru_alpha, gru_beta;
    Tensor w_alpha, b_alpha, w_beta, b_beta, w_enc, b_enc;
};

struct RetainAttention {
    Tensor alphas;  // [t]
    Tensor betas;   // [t x d_enc]
};

namespace detail {

inline Tensor reverse_rows(const Tensor& x) {
    std::vector<Tensor> rows;
    for (std::size_t i = x.rows(); i-- > 0;) rows.push_back(numerics::row(x, i));
    return numerics::concat_rows(rows);
}

}  // namespace detail

/// Visit-level (softmax) and variable-level (tanh) attention over visit embeddings.
inline RetainAttention retain_attention(const std::vector<Tensor>& visit_embs, const RetainParams& p,
                                        bool reverse_time = false) {
    using namespace numerics;
    if (visit_embs.empty()) throw DataError("retain_attention: need at least one visit");
    std::vector<Tensor> seq = visit_embs;
    if (reverse_time) std::reverse(seq.begin(), seq.end());
    Tensor g = gru_sequence(seq, p.gru_alpha);
    Tensor h = gru_sequence(seq, p.gru_beta);
    if (reverse_time) {
        g = detail::reverse_rows(g);
        h = detail::reverse_rows(h);
    }
    const std::size_t t = visit_embs.size();
    const Tensor e = reshape(add_bias(matmul(g, p.w_alpha), p.b_alpha), {t});
    return {softmax(e), tanh(add_bias(matmul(h, p.w_beta), p.b_beta))};
}

/// k = sum_j alpha_j * (beta_j (.) V_j), then S = reshape(w_enc k + b_enc).
inline Tensor retain_context(const std::vector<Tensor>& visit_embs, const RetainAttention& att) {
    using namespace numerics;
    const std::size_t t = visit_embs.size();
    const Tensor weighted = mul(att.betas, concat_rows(visit_embs));
    return reshape(matmul(reshape(att.alphas, {1, t}), weighted), {weighted.cols()});
}

class RetainEncoder : public StructEncoder {
public:
    RetainEncoder(EncoderConfig config, const cohort::CodeVocabulary& vocab, Rng& rng) : StructEncoder(config) {
        const std::size_t d = config_.d_enc;
        embeddings_ = CodeEmbeddings::init(vocab, d, config_.embedding_std, rng);
        p_.gru_alpha = numerics::GRUParams::init(d, d, rng);
        p_.gru_beta = numerics::GRUParams::init(d, d, rng);
        p_.w_alpha = numerics::fan_in_tensor({d, 1}, d, rng, true);
        p_.b_alpha = Tensor::zeros({1}, true);
        p_.w_beta = numerics::fan_in_tensor({d, d}, d, rng, true);
        p_.b_beta = Tensor::zeros({d}, true);
        p_.w_enc = numerics::fan_in_tensor({config_.prompt_len * config_.d_model, d}, d, rng, true);
        p_.b_enc = Tensor::zeros({config_.prompt_len * config_.d_model}, true);
    }

    EncoderKind kind() const override { return EncoderKind::retain; }

    EncoderOutput encode(const cohort::Patient& patient, std::size_t t) const override {
        const auto embs = visits(patient, t);
        const auto att = retain_attention(embs, p_, config_.reverse_time);
        EncoderOutput out{project(retain_context(embs, att), p_.w_enc, p_.b_enc), att.alphas.to_vector(), {}};
        const std::size_t d = att.betas.cols();
        for (std::size_t j = 0; j < t; ++j) {
            double m = 0;
            for (std::size_t c = 0; c < d; ++c) m = std::max(m, std::abs(att.betas.at(j, c)));
            out.beta_max.push_back(m);
        }
        return out;
    }

    RetainAttention attention(const cohort::Patient& patient, std::size_t t) const {
        return retain_attention(visits(patient, t), p_, config_.reverse_time);
    }

    NamedTensors named_parameters() const override {
        NamedTensors out;
        append_embeddings(out);
        p_.gru_alpha.append_to(out, "retain.gru_alpha");
        p_.gru_beta.append_to(out, "retain.gru_beta");
        out.emplace_back("retain.w_alpha", p_.w_alpha);
        out.emplace_back("retain.b_alpha", p_.b_alpha);
        out.emplace_back("retain.w_beta", p_.w_beta);
        out.emplace_back("retain.b_beta", p_.b_beta);
        out.emplace_back("retain.w_enc", p_.w_enc);
        out.emplace_back("retain.b_enc", p_.b_enc);
        return out;
    }

    RetainParams& params() { return p_; }
    CodeEmbeddings& embeddings() { return embeddings_; }

private:
    RetainParams p_;
};

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

class LstmEncoder : public StructEncoder {
public:
    LstmEncoder(EncoderConfig config, const cohort::CodeVocabulary& vocab, Rng& rng) : StructEncoder(config) {
        const std::size_t d = config_.d_enc;
        embeddings_ = CodeEmbeddings::init(vocab, d, config_.embedding_std, rng);
        lstm_ = numerics::LSTMParams::init(d, d, rng);
        w_out_ = numerics::fan_in_tensor({config_.prompt_len * config_.d_model, d}, d, rng, true);
        b_out_ = Tensor::zeros({config_.prompt_len * config_.d_model}, true);
    }

    EncoderKind kind() const override { return EncoderKind::lstm; }

    EncoderOutput encode(const cohort::Patient& patient, std::size_t t) const override {
        numerics::LSTMState state{Tensor::zeros({config_.d_enc}), Tensor::zeros({config_.d_enc})};
        for (const auto& v : visits(patient, t)) state = numerics::lstm_cell(v, state, lstm_);
        return {project(state.h, w_out_, b_out_), {}, {}};
    }

    NamedTensors named_parameters() const override {
        NamedTensors out;
        append_embeddings(out);
        lstm_.append_to(out, "lstm.cell");
        out.emplace_back("lstm.w_out", w_out_);
        out.emplace_back("lstm.b_out", b_out_);
        return out;
    }

    Tensor& w_out() { return w_out_; }
    Tensor& b_out() { return b_out_; }

private:
    numerics::LSTMParams lstm_;
    Tensor w_out_, b_out_;
};

// ---------------------------------------------------------------------------
// Transformer
// ---------------------------------------------------------------------------

// One pre-LN encoder layer without masking over the visit sequence, then mean pooling.
class TransformerEncoder : public StructEncoder {
public:
    TransformerEncoder(EncoderConfig config, const cohort::CodeVocabulary& vocab, Rng& rng) : StructEncoder(config) {
        const std::size_t d = config_.d_enc;
        const double std = 1.0 / std::sqrt(static_cast<double>(d));
        embeddings_ = CodeEmbeddings::init(vocab, d, config_.embedding_std, rng);
        ln1_g_ = Tensor::full({d}, 1.0, true);
        ln1_b_ = Tensor::zeros({d}, true);
        ln2_g_ = Tensor::full({d}, 1.0, true);
        ln2_b_ = Tensor::zeros({d}, true);
        attn_ = numerics::AttentionWeights::init(d, std, std, rng, true);
        ffn_ = numerics::FeedForwardWeights::init(d, 2 * d, std, std, rng, true);
        w_out_ = numerics::fan_in_tensor({config_.prompt_len * config_.d_model, d}, d, rng, true);
        b_out_ = Tensor::zeros({config_.prompt_len * config_.d_model}, true);
    }

    EncoderKind kind() const override { return EncoderKind::transformer; }

    EncoderOutput encode(const cohort::Patient& patient, std::size_t t) const override {
        using namespace numerics;
        Tensor x = add(concat_rows(visits(patient, t)), sinusoidal_positions(t, config_.d_enc));
        x = add(x, multi_head_attention(layer_norm(x, ln1_g_, ln1_b_), attn_, config_.transformer_heads, false));
        x = add(x, feed_forward(layer_norm(x, ln2_g_, ln2_b_), ffn_));
        return {project(mean_rows(x), w_out_, b_out_), {}, {}};
    }

    NamedTensors named_parameters() const override {
        NamedTensors out;
        append_embeddings(out);
        out.emplace_back("transformer.ln1_g", ln1_g_);
        out.emplace_back("transformer.ln1_b", ln1_b_);
        attn_.append_to(out, "transformer.attn");
        out.emplace_back("transformer.ln2_g", ln2_g_);
        out.emplace_back("transformer.ln2_b", ln2_b_);
        ffn_.append_to(out, "transformer.ffn");
        out.emplace_back("transformer.w_out", w_out_);
        out.emplace_back("transformer.b_out", b_out_);
        return out;
    }

    Tensor& w_out() { return w_out_; }
    Tensor& b_out() { return b_out_; }

private:
    Tensor ln1_g_, ln1_b_, ln2_g_, ln2_b_;
    numerics::AttentionWeights attn_;
    numerics::FeedForwardWeights ffn_;
    Tensor w_out_, b_out_;
};

inline std::unique_ptr<StructEncoder> make_encoder(const EncoderConfig& config, const cohort::CodeVocabulary& vocab,
                                                   Rng& rng) {
    switch (config.kind) {
        case EncoderKind::retain: return std::make_unique<RetainEncoder>(config, vocab, rng);
        case EncoderKind::lstm: return std::make_unique<LstmEncoder>(config, vocab, rng);
        case EncoderKind::transformer: return std::make_unique<TransformerEncoder>(config, vocab, rng);
    }
    throw ConfigError("unknown encoder kind");
}

}  // namespace reprompt::encoders
