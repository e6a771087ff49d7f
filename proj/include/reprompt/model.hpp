#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "reprompt/cohort.hpp"
#include "reprompt/encoders.hpp"
#include "reprompt/errors.hpp"
#include "reprompt/frozen_lm.hpp"
#include "reprompt/numerics/nn.hpp"
#include "reprompt/numerics/ops.hpp"
#include "reprompt/numerics/optim.hpp"
#include "reprompt/numerics/serialize.hpp"
#include "reprompt/synthesis.hpp"

namespace reprompt::model {

using numerics::NamedTensors;
using numerics::Tensor;

/// Architecture and module toggles. Everything here is part of the checkpoint.
struct ModelConfig {
    cohort::Task task = cohort::Task::readmission;
    std::size_t prompt_len = 10;  // P
    std::size_t d_model = 64;     // D
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn_mult = 2;
    std::size_t max_len = 512;
    bool bidirectional = false;
    bool pool_tokens_only = true;  // average the summary-token rows only, not the 2P prompt rows
    std::uint64_t lm_seed = 20240601;
    bool state_recurrent = true;
    bool struct_encoded = true;
    encoders::EncoderKind encoder = encoders::EncoderKind::retain;
    std::size_t d_enc = 32;
    bool reverse_time = false;
    std::size_t transformer_heads = 2;
    synthesis::SynthesisConfig synthesis;
    double threshold = 0.5;
    // Scale of the trainable constant prompts that replace ablated modules.
    double constant_prompt_std = 0.5;

    void validate() const {
        if (prompt_len == 0) throw ConfigError("model: prompt_len (P) must be >= 1");
        if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("model: threshold must lie in (0,1)");
        synthesis.validate();
        if (2 * prompt_len + synthesis.n_max > max_len) {
            throw ConfigError("model: 2P + n_max = " + std::to_string(2 * prompt_len + synthesis.n_max) +
                              " exceeds max_len " + std::to_string(max_len));
        }
        encoder_config().validate();
    }

    encoders::EncoderConfig encoder_config() const {
        encoders::EncoderConfig c;
        c.kind = encoder;
        c.d_enc = d_enc;
        c.prompt_len = prompt_len;
        c.d_model = d_model;
        c.reverse_time = reverse_time;
        c.transformer_heads = transformer_heads;
        c.exclude_medications = task == cohort::Task::medication;
        return c;
    }

    lm::FrozenLMConfig lm_config(std::size_t vocab_size) const {
        lm::FrozenLMConfig c;
        c.d_model = d_model;
        c.layers = layers;
        c.heads = heads;
        c.ffn_mult = ffn_mult;
        c.vocab_size = vocab_size;
        c.max_len = max_len;
        c.bidirectional = bidirectional;
        return c;
    }

    /// Synthesis settings with the task-dependent masking applied.
    synthesis::SynthesisConfig effective_synthesis() const {
        auto s = synthesis;
        s.mask_final_medications = task == cohort::Task::medication;
        return s;
    }

    nlohmann::ordered_json to_json() const {
        return {{"task", cohort::to_string(task)},
                {"prompt_len", prompt_len},
                {"d_model", d_model},
                {"layers", layers},
                {"heads", heads},
                {"ffn_mult", ffn_mult},
                {"max_len", max_len},
                {"bidirectional", bidirectional},
                {"pool_tokens_only", pool_tokens_only},
                {"lm_seed", lm_seed},
                {"state_recurrent", state_recurrent},
                {"struct_encoded", struct_encoded},
                {"encoder", encoders::to_string(encoder)},
                {"d_enc", d_enc},
                {"reverse_time", reverse_time},
                {"transformer_heads", transformer_heads},
                {"synthesis",
                 {{"mode", synthesis::to_string(synthesis.mode)},
                  {"n_max", synthesis.n_max},
                  {"visit_template", synthesis.visit_template},
                  {"trailer_template", synthesis.trailer_template},
                  {"note_stopwords", synthesis.note_stopwords}}},
                {"threshold", threshold},
                {"constant_prompt_std", constant_prompt_std}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.task = cohort::parse_task(j.at("task").get<std::string>());
        c.prompt_len = j.at("prompt_len").get<std::size_t>();
        c.d_model = j.at("d_model").get<std::size_t>();
        c.layers = j.at("layers").get<std::size_t>();
        c.heads = j.at("heads").get<std::size_t>();
        c.ffn_mult = j.at("ffn_mult").get<std::size_t>();
        c.max_len = j.at("max_len").get<std::size_t>();
        c.bidirectional = j.at("bidirectional").get<bool>();
        c.pool_tokens_only = j.at("pool_tokens_only").get<bool>();
        c.lm_seed = j.at("lm_seed").get<std::uint64_t>();
        c.state_recurrent = j.at("state_recurrent").get<bool>();
        c.struct_encoded = j.at("struct_encoded").get<bool>();
        c.encoder = encoders::parse_encoder(j.at("encoder").get<std::string>());
        c.d_enc = j.at("d_enc").get<std::size_t>();
        c.reverse_time = j.at("reverse_time").get<bool>();
        c.transformer_heads = j.at("transformer_heads").get<std::size_t>();
        const auto& s = j.at("synthesis");
        c.synthesis.mode = synthesis::parse_mode(s.at("mode").get<std::string>());
        c.synthesis.n_max = s.at("n_max").get<std::size_t>();
        c.synthesis.visit_template = s.at("visit_template").get<std::string>();
        c.synthesis.trailer_template = s.at("trailer_template").get<std::string>();
        c.synthesis.note_stopwords = s.at("note_stopwords").get<std::vector<std::string>>();
        c.threshold = j.at("threshold").get<double>();
        c.constant_prompt_std = j.at("constant_prompt_std").get<double>();
        return c;
    }
};

/// Per-visit inspection record.
struct VisitTrace {
    std::size_t visit = 0;  // 1-based
    std::size_t tokens = 0;
    std::vector<double> alphas;
    double state_prompt_norm = 0;
    double struct_prompt_norm = 0;
    double pooled_norm = 0;
};

struct PatientTrace {
    std::string patient_id;
    std::vector<VisitTrace> visits;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json v = nlohmann::ordered_json::array();
        for (const auto& t : visits) {
            v.push_back({{"visit", t.visit},
                         {"tokens", t.tokens},
                         {"alphas", t.alphas},
                         {"state_prompt_norm", t.state_prompt_norm},
                         {"struct_prompt_norm", t.struct_prompt_norm},
                         {"pooled_norm", t.pooled_norm}});
        }
        return {{"patient", patient_id}, {"visits", v}};
    }
};

struct PatientOutput {
    Tensor logits;  // [n_labels]
    PatientTrace trace;
};

struct Prediction {
    std::vector<double> scores;
    std::vector<int> labels;
};

namespace detail {

inline double norm(const Tensor& t) {
    double s = 0;
    for (double v : t.data()) s += v * v;
    return std::sqrt(s);
}

}  // namespace detail

/// Mean binary cross-entropy over labels, from logits.
inline Tensor bce_loss(const Tensor& logits, const std::vector<double>& targets) {
    for (double y : targets) {
        if (y != 0.0 && y != 1.0) throw DataError("bce_loss: targets must be 0 or 1, got " + std::to_string(y));
    }
    return numerics::bce_with_logits(logits, targets);
}

/// Targets of a patient for the configured task (one entry per output label).
inline std::vector<double> targets_for(const cohort::Patient& p, cohort::Task task, std::size_t n_labels) {
    if (task != cohort::Task::medication) return {cohort::binary_target(p, task)};
    if (!p.labels.medication) throw DataError("patient " + p.id + " has no medication label");
    std::vector<double> y(n_labels, 0.0);
    for (int m : *p.labels.medication) {
        if (m < 0 || static_cast<std::size_t>(m) >= n_labels) {
            throw DataError("patient " + p.id + ": medication label " + std::to_string(m) + " out of range");
        }
        y[static_cast<std::size_t>(m)] = 1.0;
    }
    return y;
}

/// Frozen LM + trainable prompt modules + linear head.
///
/// Per visit t: G_t = reshape(w_t * H_{t-1} + b_t) with H_0 = 0, S_t from the struct encoder over visits 1..t,
/// tokens from the synthesized summary; the LM runs on [G_t; S_t; tokens] and H_t is the mean of its outputs.
/// logits = w_out * H_T + b_out. A disabled module is replaced by a trainable constant P x D prompt.
class RePrompT {
public:
    RePrompT(ModelConfig config, cohort::CodeVocabulary codes, synthesis::TokenVocabulary tokens, std::uint64_t seed)
        : config_(std::move(config)),
          codes_(std::move(codes)),
          tokens_(std::move(tokens)),
          lm_(std::make_shared<lm::FrozenLM>(config_.lm_config(tokens_.size()), config_.lm_seed)) {
        config_.validate();
        numerics::Rng rng(seed);
        const std::size_t p = config_.prompt_len, d = config_.d_model;
        if (config_.struct_encoded) {
            encoder_ = encoders::make_encoder(config_.encoder_config(), codes_, rng);
        } else {
            const_struct_ = numerics::normal_tensor({p, d}, config_.constant_prompt_std, rng, true);
        }
        if (config_.state_recurrent) {
            w_t_ = numerics::fan_in_tensor({p * d, d}, d, rng, true);
            b_t_ = numerics::normal_tensor({p * d}, config_.constant_prompt_std, rng, true);
        } else {
            const_state_ = numerics::normal_tensor({p, d}, config_.constant_prompt_std, rng, true);
        }
        w_out_ = numerics::fan_in_tensor({n_labels(), d}, d, rng, true);
        b_out_ = Tensor::zeros({n_labels()}, true);
    }

    const ModelConfig& config() const { return config_; }
    const cohort::CodeVocabulary& codes() const { return codes_; }
    const synthesis::TokenVocabulary& tokens() const { return tokens_; }
    const lm::FrozenLM& frozen() const { return *lm_; }
    const encoders::StructEncoder* encoder() const { return encoder_.get(); }

    std::size_t n_labels() const {
        return config_.task == cohort::Task::medication ? codes_.medications.size() : 1;
    }

    /// Trainable set: encoder (or its constant stand-in), recurrence map (or its stand-in), head.
    NamedTensors trainable_parameters() const {
        NamedTensors out;
        if (encoder_) {
            out = encoder_->named_parameters();
        } else {
            out.emplace_back("const.struct_prompt", const_struct_);
        }
        if (config_.state_recurrent) {
            out.emplace_back("recur.w_t", w_t_);
            out.emplace_back("recur.b_t", b_t_);
        } else {
            out.emplace_back("const.state_prompt", const_state_);
        }
        out.emplace_back("head.w_out", w_out_);
        out.emplace_back("head.b_out", b_out_);
        return out;
    }

    NamedTensors frozen_parameters() const { return lm_->named_parameters(); }

    /// G from the previous pooled state.
    Tensor recur(const Tensor& pooled) const {
        if (!config_.state_recurrent) return const_state_;
        if (pooled.ndim() != 1 || pooled.size() != config_.d_model) {
            throw numerics::DimensionError("recur: pooled state " + numerics::shape_string(pooled.shape()) +
                                           " must have dimension " + std::to_string(config_.d_model));
        }
        return numerics::reshape(numerics::add(numerics::matvec(w_t_, pooled), b_t_),
                                 {config_.prompt_len, config_.d_model});
    }

    /// Prompt rows [G; S] (2P x D).
    Tensor assemble_prompt(const Tensor& g, const Tensor& s) const {
        const numerics::Shape want{config_.prompt_len, config_.d_model};
        if (g.shape() != want || s.shape() != want) {
            throw numerics::DimensionError("assemble_prompt: G " + numerics::shape_string(g.shape()) + " and S " +
                                           numerics::shape_string(s.shape()) + " must both be " +
                                           numerics::shape_string(want));
        }
        return numerics::concat_rows({g, s});
    }

    /// Token ids of the summary for visit t (1-based).
    std::vector<int> summary_ids(const cohort::Patient& patient, std::size_t t) const {
        return tokens_.encode(synthesis::synthesize(patient, t, codes_, config_.effective_synthesis()));
    }

    /// Unrolled forward pass over all visits of the patient.
    /// Without the recurrent module the earlier visits cannot influence the output, so only the
    /// final visit is evaluated unless `full_trace` is requested.
    PatientOutput forward_patient(const cohort::Patient& patient, bool full_trace = false) const {
        const std::size_t T = patient.visits.size();
        if (T == 0) throw DataError("forward_patient: patient " + patient.id + " has no visits");
        PatientOutput out;
        out.trace.patient_id = patient.id;
        Tensor pooled = Tensor::zeros({config_.d_model});
        const std::size_t first = (config_.state_recurrent || full_trace) ? 1 : T;
        for (std::size_t t = first; t <= T; ++t) {
            const Tensor g = recur(pooled);
            VisitTrace vt;
            vt.visit = t;
            Tensor s;
            if (encoder_) {
                auto enc = encoder_->encode(patient, t);
                s = enc.prompt;
                vt.alphas = std::move(enc.alphas);
            } else {
                s = const_struct_;
            }
            const auto ids = summary_ids(patient, t);
            const Tensor h = lm_->forward(assemble_prompt(g, s), ids);
            pooled = lm::mean_pool(h, config_.pool_tokens_only ? 2 * config_.prompt_len : 0);
            vt.tokens = ids.size();
            vt.state_prompt_norm = detail::norm(g);
            vt.struct_prompt_norm = detail::norm(s);
            vt.pooled_norm = detail::norm(pooled);
            if (!numerics::all_finite(pooled) || !numerics::all_finite(g) || !numerics::all_finite(s)) {
                throw NumericError("non-finite values at visit " + std::to_string(t) + " of patient " + patient.id);
            }
            out.trace.visits.push_back(std::move(vt));
        }
        out.logits = numerics::add(numerics::matvec(w_out_, pooled), b_out_);
        if (!numerics::all_finite(out.logits)) {
            throw NumericError("non-finite logits for patient " + patient.id + " at visit " + std::to_string(T));
        }
        return out;
    }

    Tensor loss(const cohort::Patient& patient) const {
        return bce_loss(forward_patient(patient).logits, targets_for(patient, config_.task, n_labels()));
    }

    /// Scores sigma(logits); labels are scores >= threshold.
    Prediction predict(const cohort::Patient& patient) const {
        numerics::NoGradGuard no_grad;
        return from_logits(forward_patient(patient).logits.to_vector());
    }

    Prediction from_logits(const std::vector<double>& logits) const {
        Prediction p;
        for (double z : logits) {
            const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            p.scores.push_back(s);
            p.labels.push_back(s >= config_.threshold ? 1 : 0);
        }
        return p;
    }

    // Checkpoint: magic, model config + vocabularies as JSON, trainable tensors, optimizer state, LM hash.
    void save(std::ostream& os, const numerics::Adam* optimizer = nullptr) const {
        namespace io = numerics::io;
        os.write(kMagic, sizeof(kMagic));
        nlohmann::ordered_json meta = {{"model", config_.to_json()},
                                       {"codes",
                                        {{"diagnoses", codes_.diagnoses},
                                         {"medications", codes_.medications},
                                         {"procedures", codes_.procedures}}},
                                       {"tokens", tokens_.to_json()}};
        io::write_string(os, meta.dump());
        const auto params = trainable_parameters();
        io::write_pod(os, static_cast<std::uint64_t>(params.size()));
        for (const auto& [name, t] : params) io::write_tensor(os, name, t);
        io::write_pod(os, static_cast<std::uint8_t>(optimizer ? 1 : 0));
        if (optimizer) {
            const auto& c = optimizer->config();
            for (double v : {c.lr, c.beta1, c.beta2, c.eps, c.weight_decay}) io::write_pod(os, v);
            io::write_pod(os, static_cast<std::uint64_t>(optimizer->steps()));
            for (std::size_t k = 0; k < params.size(); ++k) {
                io::write_doubles(os, optimizer->first_moments()[k]);
                io::write_doubles(os, optimizer->second_moments()[k]);
            }
        }
        io::write_pod(os, lm_->recorded_hash());
    }

    void save(const std::string& path, const numerics::Adam* optimizer = nullptr) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw DataError("cannot write checkpoint " + path);
        save(os, optimizer);
    }

    struct Loaded {
        std::unique_ptr<RePrompT> model;
        std::optional<numerics::Adam> optimizer;
    };

    /// Restores a checkpoint. The frozen LM is rebuilt from its seed and must hash to the stored value.
    static Loaded load(std::istream& is) {
        namespace io = numerics::io;
        char magic[sizeof(kMagic)];
        is.read(magic, sizeof(magic));
        if (!is || std::string(magic, sizeof(magic)) != std::string(kMagic, sizeof(kMagic))) {
            throw numerics::FormatError("not a model checkpoint");
        }
        const auto meta = nlohmann::json::parse(io::read_string(is));
        cohort::CodeVocabulary codes;
        codes.diagnoses = meta.at("codes").at("diagnoses").get<std::vector<std::string>>();
        codes.medications = meta.at("codes").at("medications").get<std::vector<std::string>>();
        codes.procedures = meta.at("codes").at("procedures").get<std::vector<std::string>>();
        Loaded out;
        out.model = std::make_unique<RePrompT>(ModelConfig::from_json(meta.at("model")), std::move(codes),
                                               synthesis::TokenVocabulary::from_json(meta.at("tokens")), 0);
        auto params = out.model->trainable_parameters();
        if (io::read_pod<std::uint64_t>(is) != params.size()) {
            throw numerics::FormatError("checkpoint parameter count does not match the model");
        }
        for (auto& [name, t] : params) {
            auto [stored_name, stored] = io::read_tensor(is, true);
            if (stored_name != name || stored.shape() != t.shape()) {
                throw numerics::FormatError("checkpoint tensor '" + stored_name + "' does not match '" + name + "'");
            }
            std::copy(stored.data().begin(), stored.data().end(), t.mutable_data().begin());
        }
        if (io::read_pod<std::uint8_t>(is)) {
            numerics::AdamConfig c;
            for (double* v : {&c.lr, &c.beta1, &c.beta2, &c.eps, &c.weight_decay}) *v = io::read_pod<double>(is);
            const auto steps = io::read_pod<std::uint64_t>(is);
            std::vector<std::vector<double>> first, second;
            for (std::size_t k = 0; k < params.size(); ++k) {
                first.push_back(io::read_doubles(is));
                second.push_back(io::read_doubles(is));
                if (first.back().size() != params[k].second.size() || second.back().size() != params[k].second.size()) {
                    throw numerics::FormatError("checkpoint optimizer moments do not match '" + params[k].first + "'");
                }
            }
            out.optimizer.emplace(out.model->trainable_parameters(), c);
            out.optimizer->restore(steps, std::move(first), std::move(second));
        }
        const auto hash = io::read_pod<std::uint64_t>(is);
        if (hash != out.model->frozen().recorded_hash()) {
            throw numerics::FormatError("checkpoint frozen-lm hash " + numerics::hex64(hash) +
                                        " does not match the rebuilt model " +
                                        numerics::hex64(out.model->frozen().recorded_hash()));
        }
        return out;
    }

    static Loaded load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw DataError("cannot open checkpoint " + path);
        return load(is);
    }

    // Mutable access for tests and hand-set experiments.
    Tensor& w_t() { return w_t_; }
    Tensor& b_t() { return b_t_; }
    Tensor& w_out() { return w_out_; }
    Tensor& b_out() { return b_out_; }
    Tensor& constant_state_prompt() { return const_state_; }
    Tensor& constant_struct_prompt() { return const_struct_; }

private:
    static constexpr char kMagic[8] = {'R', 'P', 'M', 'O', 'D', '0', '0', '1'};

    ModelConfig config_;
    cohort::CodeVocabulary codes_;
    synthesis::TokenVocabulary tokens_;
    std::shared_ptr<const lm::FrozenLM> lm_;
    std::unique_ptr<encoders::StructEncoder> encoder_;
    Tensor const_struct_, const_state_;
    Tensor w_t_, b_t_;
    Tensor w_out_, b_out_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    numerics::AdamConfig adam;
    std::size_t batch_size = 8;
    std::size_t epochs = 5;
    std::uint64_t seed = 0;
    // Stop after this many optimizer steps (0 = run all epochs).
    std::size_t max_steps = 0;

    void validate() const {
        if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
        if (!(adam.lr > 0.0)) throw ConfigError("train: learning rate must be > 0");
    }
};

struct TrainResult {
    std::size_t steps = 0;
    std::vector<double> epoch_losses;
    std::uint64_t frozen_hash_before = 0;
    std::uint64_t frozen_hash_after = 0;
};

/// Minibatch Adam over the training cohort. Per batch, each patient's loss is back-propagated with
/// weight 1/B so the accumulated gradient is that of the batch-mean loss.
inline TrainResult train(RePrompT& model, numerics::Adam& optimizer, const cohort::Cohort& train_set,
                         const TrainConfig& config,
                         const std::function<void(std::size_t step, double loss)>& on_step = {}) {
    config.validate();
    if (train_set.patients.empty()) throw DataError("train: empty training cohort");
    TrainResult result;
    result.frozen_hash_before = model.frozen().compute_hash();
    numerics::Rng rng(config.seed);
    std::vector<std::size_t> order(train_set.patients.size());
    std::iota(order.begin(), order.end(), 0);
    bool done = false;
    for (std::size_t epoch = 0; epoch < config.epochs && !done; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        double epoch_loss = 0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size() && !done; start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const double weight = 1.0 / static_cast<double>(end - start);
            optimizer.zero_grad();
            double batch_loss = 0;
            for (std::size_t k = start; k < end; ++k) {
                const Tensor loss = model.loss(train_set.patients[order[k]]);
                numerics::backward(loss, weight);
                batch_loss += loss.item() * weight;
            }
            if (!std::isfinite(batch_loss)) {
                throw NumericError("training diverged: non-finite loss at step " + std::to_string(optimizer.steps()));
            }
            optimizer.step();
            ++result.steps;
            epoch_loss += batch_loss * static_cast<double>(end - start);
            seen += end - start;
            if (on_step) on_step(optimizer.steps(), batch_loss);
            if (config.max_steps && result.steps >= config.max_steps) done = true;
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(seen));
    }
    result.frozen_hash_after = model.frozen().compute_hash();
    return result;
}

inline numerics::Adam make_optimizer(const RePrompT& model, const numerics::AdamConfig& config) {
    return numerics::Adam(model.trainable_parameters(), config);
}

}  // namespace reprompt::model
