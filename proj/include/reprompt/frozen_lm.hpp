#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "reprompt/errors.hpp"
#include "reprompt/numerics/nn.hpp"
#include "reprompt/numerics/ops.hpp"
#include "reprompt/numerics/serialize.hpp"

namespace reprompt::lm {

using numerics::NamedTensors;
using numerics::Tensor;

struct FrozenLMConfig {
    std::size_t d_model = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn_mult = 4;
    std::size_t vocab_size = 2;
    std::size_t max_len = 512;
    bool bidirectional = false;
    double init_std = 0.02;

    void validate() const {
        if (d_model == 0 || heads == 0 || d_model % heads != 0) {
            throw ConfigError("frozen lm: d_model " + std::to_string(d_model) + " must be divisible by heads " +
                              std::to_string(heads));
        }
        if (layers == 0 || ffn_mult == 0) throw ConfigError("frozen lm: layers and ffn_mult must be >= 1");
        if (vocab_size < 2) throw ConfigError("frozen lm: vocabulary needs at least the two reserved tokens");
        if (max_len == 0) throw ConfigError("frozen lm: max_len must be >= 1");
    }

    nlohmann::ordered_json to_json() const {
        return {{"d_model", d_model}, {"layers", layers},   {"heads", heads},
                {"ffn_mult", ffn_mult}, {"vocab_size", vocab_size}, {"max_len", max_len},
                {"bidirectional", bidirectional}, {"init_std", init_std}};
    }

    static FrozenLMConfig from_json(const nlohmann::json& j) {
        FrozenLMConfig c;
        c.d_model = j.at("d_model").get<std::size_t>();
        c.layers = j.at("layers").get<std::size_t>();
        c.heads = j.at("heads").get<std::size_t>();
        c.ffn_mult = j.at("ffn_mult").get<std::size_t>();
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.max_len = j.at("max_len").get<std::size_t>();
        c.bidirectional = j.at("bidirectional").get<bool>();
        c.init_std = j.at("init_std").get<double>();
        return c;
    }
};

struct LMLayer {
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    numerics::AttentionWeights attn;
    numerics::FeedForwardWeights ffn;
};

/// Pre-LN causal transformer whose weights never require gradients.
/// Gradients still pass through it to upstream trainable inputs (the prompt rows).
class FrozenLM {
public:
    FrozenLM(const FrozenLMConfig& config, std::uint64_t seed) : config_(config) {
        config_.validate();
        numerics::Rng rng(seed);
        const std::size_t d = config_.d_model;
        const double std = config_.init_std;
        // Residual output projections are scaled down with depth (GPT-2 style).
        const double out_std = std / std::sqrt(2.0 * static_cast<double>(config_.layers));
        token_embedding_ = numerics::normal_tensor({config_.vocab_size, d}, std, rng, false);
        positions_ = numerics::normal_tensor({config_.max_len, d}, std, rng, false);
        for (std::size_t l = 0; l < config_.layers; ++l) {
            LMLayer layer;
            layer.ln1_g = Tensor::full({d}, 1.0);
            layer.ln1_b = Tensor::zeros({d});
            layer.ln2_g = Tensor::full({d}, 1.0);
            layer.ln2_b = Tensor::zeros({d});
            layer.attn = numerics::AttentionWeights::init(d, std, out_std, rng, false);
            layer.ffn = numerics::FeedForwardWeights::init(d, config_.ffn_mult * d, std, out_std, rng, false);
            layers_.push_back(std::move(layer));
        }
        final_g_ = Tensor::full({d}, 1.0);
        final_b_ = Tensor::zeros({d});
        hash_ = compute_hash();
    }

    const FrozenLMConfig& config() const { return config_; }

    /// Hidden states [(R + N) x D] for prompt rows [R x D] followed by N embedded tokens.
    Tensor forward(const Tensor& prompt_rows, std::span<const int> token_ids) const {
        using namespace numerics;
        const std::size_t d = config_.d_model;
        if (prompt_rows.defined() && (prompt_rows.ndim() != 2 || prompt_rows.cols() != d)) {
            throw DimensionError("frozen lm: prompt rows " + shape_string(prompt_rows.shape()) + " must have width " +
                                 std::to_string(d));
        }
        const std::size_t n_prompt = prompt_rows.defined() ? prompt_rows.rows() : 0;
        const std::size_t total = n_prompt + token_ids.size();
        if (total > config_.max_len) {
            throw DimensionError("frozen lm: sequence length 2P+N = " + std::to_string(total) + " exceeds max_len " +
                                 std::to_string(config_.max_len));
        }
        if (total == 0) throw DimensionError("frozen lm: empty input sequence");
        Tensor x = add(embed_input(prompt_rows, token_ids), position_rows(total));
        const bool causal = !config_.bidirectional;
        for (const auto& layer : layers_) {
            x = add(x, multi_head_attention(layer_norm(x, layer.ln1_g, layer.ln1_b), layer.attn, config_.heads, causal));
            x = add(x, feed_forward(layer_norm(x, layer.ln2_g, layer.ln2_b), layer.ffn));
        }
        return layer_norm(x, final_g_, final_b_);
    }

    /// Input sequence before position embeddings: prompt rows, then token embeddings.
    Tensor embed_input(const Tensor& prompt_rows, std::span<const int> token_ids) const {
        std::vector<Tensor> parts;
        if (prompt_rows.defined() && prompt_rows.size() > 0) parts.push_back(prompt_rows);
        if (!token_ids.empty()) parts.push_back(numerics::embedding(token_embedding_, token_ids));
        if (parts.empty()) throw numerics::DimensionError("frozen lm: empty input sequence");
        return parts.size() == 1 ? parts.front() : numerics::concat_rows(parts);
    }

    NamedTensors named_parameters() const {
        NamedTensors out;
        out.emplace_back("lm.token_embedding", token_embedding_);
        out.emplace_back("lm.positions", positions_);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const std::string p = "lm.layer" + std::to_string(l);
            out.emplace_back(p + ".ln1_g", layers_[l].ln1_g);
            out.emplace_back(p + ".ln1_b", layers_[l].ln1_b);
            layers_[l].attn.append_to(out, p + ".attn");
            out.emplace_back(p + ".ln2_g", layers_[l].ln2_g);
            out.emplace_back(p + ".ln2_b", layers_[l].ln2_b);
            layers_[l].ffn.append_to(out, p + ".ffn");
        }
        out.emplace_back("lm.final_g", final_g_);
        out.emplace_back("lm.final_b", final_b_);
        return out;
    }

    /// Hash recorded at construction (or load).
    std::uint64_t recorded_hash() const { return hash_; }
    /// Hash of the current weight contents.
    std::uint64_t compute_hash() const { return numerics::hash_tensors(named_parameters()); }
    bool verify() const { return compute_hash() == hash_; }

    void save(std::ostream& os) const {
        os.write(kMagic, sizeof(kMagic));
        numerics::io::write_string(os, config_.to_json().dump());
        const auto params = named_parameters();
        numerics::io::write_pod(os, static_cast<std::uint64_t>(params.size()));
        for (const auto& [name, t] : params) numerics::io::write_tensor(os, name, t);
        numerics::io::write_pod(os, hash_);
    }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw DataError("cannot write frozen lm checkpoint " + path);
        save(os);
    }

    /// Loads a checkpoint and checks the stored hash against the loaded weights.
    static FrozenLM load(std::istream& is) {
        char magic[sizeof(kMagic)];
        is.read(magic, sizeof(magic));
        if (!is || std::string(magic, sizeof(magic)) != std::string(kMagic, sizeof(kMagic))) {
            throw numerics::FormatError("not a frozen lm checkpoint");
        }
        const auto config = FrozenLMConfig::from_json(nlohmann::json::parse(numerics::io::read_string(is)));
        FrozenLM lm(config, 0);
        auto params = lm.named_parameters();
        const auto count = numerics::io::read_pod<std::uint64_t>(is);
        if (count != params.size()) throw numerics::FormatError("frozen lm checkpoint has wrong tensor count");
        for (auto& [name, t] : params) {
            auto [stored_name, stored] = numerics::io::read_tensor(is, false);
            if (stored_name != name || stored.shape() != t.shape()) {
                throw numerics::FormatError("frozen lm checkpoint tensor '" + stored_name + "' does not match '" + name + "'");
            }
            std::copy(stored.data().begin(), stored.data().end(), t.mutable_data().begin());
        }
        lm.hash_ = numerics::io::read_pod<std::uint64_t>(is);
        if (!lm.verify()) throw numerics::FormatError("frozen lm checkpoint hash does not match its weights");
        return lm;
    }

    static FrozenLM load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw DataError("cannot open frozen lm checkpoint " + path);
        return load(is);
    }

private:
    static constexpr char kMagic[8] = {'R', 'P', 'F', 'L', 'M', '0', '0', '1'};

    Tensor position_rows(std::size_t n) const {
        const auto* begin = positions_.data().data();
        return Tensor({n, config_.d_model}, std::vector<double>(begin, begin + n * config_.d_model));
    }

    FrozenLMConfig config_;
    Tensor token_embedding_, positions_;
    std::vector<LMLayer> layers_;
    Tensor final_g_, final_b_;
    std::uint64_t hash_ = 0;
};

/// Mean over rows [skip, end) of hidden states.
inline Tensor mean_pool(const Tensor& hidden, std::size_t skip_rows = 0) {
    if (hidden.ndim() != 2 || hidden.rows() <= skip_rows) {
        throw numerics::DimensionError("mean_pool: need more than " + std::to_string(skip_rows) + " rows, got " +
                             numerics::shape_string(hidden.shape()));
    }
    if (skip_rows == 0) return numerics::mean_rows(hidden);
    return numerics::mean_rows(numerics::slice_rows(hidden, skip_rows, hidden.rows()));
}

}  // namespace reprompt::lm
