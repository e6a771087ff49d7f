#pragma once

// Experiment harness: configuration files, multi-seed runs, ablation and encoder sweeps,
// timing, and report emission.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "reprompt/cohort.hpp"
#include "reprompt/errors.hpp"
#include "reprompt/logistic_oracle.hpp"
#include "reprompt/metrics.hpp"
#include "reprompt/model.hpp"

namespace reprompt::experiment {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct DataConfig {
    std::string source = "generate";  // generate | jsonl
    std::string path;
    cohort::GeneratorConfig generator;
};

struct TrainSettings {
    double lr = 1e-3;
    // Strong decoupled decay keeps the small cohort from being memorized over five epochs.
    double weight_decay = 5.0;
    std::size_t batch_size = 8;
    std::size_t epochs = 5;
};

/// One named arm of the ablation matrix.
struct Arm {
    std::string name;
    bool state_recurrent = true;
    bool struct_encoded = true;
    synthesis::Mode synthesis = synthesis::Mode::templated;
};

inline const std::vector<Arm>& known_arms() {
    static const std::vector<Arm> arms = {
        {"full", true, true, synthesis::Mode::templated},
        {"no_state", false, true, synthesis::Mode::templated},
        {"no_struct", true, false, synthesis::Mode::templated},
        {"no_both", false, false, synthesis::Mode::templated},
        {"no_synthesis", true, true, synthesis::Mode::raw},
    };
    return arms;
}

inline Arm find_arm(const std::string& name) {
    for (const auto& a : known_arms()) {
        if (a.name == name) return a;
    }
    std::string valid;
    for (const auto& a : known_arms()) valid += (valid.empty() ? "" : ", ") + a.name;
    throw ConfigError("unknown ablation arm '" + name + "' (valid: " + valid + ")");
}

struct ExperimentConfig {
    std::string name = "experiment";
    DataConfig data;
    model::ModelConfig model;
    TrainSettings train;
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    double split = 0.7;
    std::string output;  // output root; empty means REPROMPT_OUT or ./runs
    std::vector<std::string> arms = {"full", "no_state", "no_struct", "no_both", "no_synthesis"};
    std::vector<encoders::EncoderKind> encoders = {encoders::EncoderKind::retain, encoders::EncoderKind::lstm,
                                                   encoders::EncoderKind::transformer};
    std::size_t timing_batches = 10;
    std::size_t timing_batch_size = 8;

    void validate() const {
        if (seeds.empty()) throw ConfigError("experiment.seeds must list at least one seed");
        if (!(split > 0.0 && split < 1.0)) throw ConfigError("experiment.split must lie in (0,1)");
        if (data.source != "generate" && data.source != "jsonl") {
            throw ConfigError("data.source must be 'generate' or 'jsonl', got '" + data.source + "'");
        }
        if (data.source == "jsonl" && data.path.empty()) throw ConfigError("data.source = jsonl needs data.path");
        if (data.source == "generate") data.generator.validate();
        model.validate();
        if (!(train.lr > 0.0)) throw ConfigError("train.lr must be > 0");
        if (train.weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
        if (train.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
        if (arms.empty()) throw ConfigError("ablation.arms is empty");
        for (const auto& a : arms) find_arm(a);
        if (encoders.empty()) throw ConfigError("sweep.encoders is empty");
        if (timing_batches < 10) throw ConfigError("timing.batches must be >= 10");
        if (timing_batch_size == 0) throw ConfigError("timing.batch_size must be >= 1");
    }

    /// Everything that can change a result. The output location is excluded.
    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json data_json = {{"source", data.source}};
        if (data.source == "jsonl") {
            data_json["path"] = data.path;
        } else {
            data_json["generator"] = data.generator.to_json();
        }
        nlohmann::ordered_json enc = nlohmann::ordered_json::array();
        for (auto e : encoders) enc.push_back(encoders::to_string(e));
        return {{"name", name},
                {"data", data_json},
                {"model", model.to_json()},
                {"train",
                 {{"lr", train.lr},
                  {"weight_decay", train.weight_decay},
                  {"batch_size", train.batch_size},
                  {"epochs", train.epochs}}},
                {"seeds", seeds},
                {"split", split},
                {"arms", arms},
                {"encoders", enc},
                {"timing", {{"batches", timing_batches}, {"batch_size", timing_batch_size}}}};
    }

    std::string fingerprint() const {
        numerics::Fnv1a h;
        h.update(to_json().dump());
        return numerics::hex64(h.digest());
    }
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end || v.empty()) {
        throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

inline std::size_t to_size(const std::string& key, const std::string& v) {
    return static_cast<std::size_t>(to_u64(key, v));
}

inline double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty() || !std::isfinite(out)) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
    return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

inline const std::map<std::string, Setter>& setters() {
    using C = ExperimentConfig;
    using S = std::string;
    static const std::map<std::string, Setter> table = {
        {"experiment.name", [](C& c, const S&, const S& v) { c.name = v; }},
        {"experiment.task", [](C& c, const S&, const S& v) { c.model.task = cohort::parse_task(v); }},
        {"experiment.seeds",
         [](C& c, const S& k, const S& v) {
             c.seeds.clear();
             for (const auto& s : split_list(v)) c.seeds.push_back(to_u64(k, s));
         }},
        {"experiment.split", [](C& c, const S& k, const S& v) { c.split = to_double(k, v); }},
        {"experiment.output", [](C& c, const S&, const S& v) { c.output = v; }},

        {"data.source", [](C& c, const S&, const S& v) { c.data.source = v; }},
        {"data.path", [](C& c, const S&, const S& v) { c.data.path = v; }},
        {"data.seed", [](C& c, const S& k, const S& v) { c.data.generator.seed = to_u64(k, v); }},
        {"data.n", [](C& c, const S& k, const S& v) { c.data.generator.n_patients = to_size(k, v); }},
        {"data.profile", [](C& c, const S&, const S& v) { c.data.generator.profile = cohort::parse_profile(v); }},
        {"data.n_diagnoses", [](C& c, const S& k, const S& v) { c.data.generator.n_diagnoses = to_size(k, v); }},
        {"data.n_medications", [](C& c, const S& k, const S& v) { c.data.generator.n_medications = to_size(k, v); }},
        {"data.n_procedures", [](C& c, const S& k, const S& v) { c.data.generator.n_procedures = to_size(k, v); }},
        {"data.visit_count_weights",
         [](C& c, const S& k, const S& v) {
             c.data.generator.visit_count_weights.clear();
             for (const auto& s : split_list(v)) c.data.generator.visit_count_weights.push_back(to_double(k, s));
         }},
        {"data.mean_dx", [](C& c, const S& k, const S& v) { c.data.generator.mean_dx = to_double(k, v); }},
        {"data.mean_extra_rx", [](C& c, const S& k, const S& v) { c.data.generator.mean_extra_rx = to_double(k, v); }},
        {"data.mean_px", [](C& c, const S& k, const S& v) { c.data.generator.mean_px = to_double(k, v); }},
        {"data.chronic_prevalence",
         [](C& c, const S& k, const S& v) { c.data.generator.chronic_prevalence = to_double(k, v); }},
        {"data.risk_note_rate", [](C& c, const S& k, const S& v) { c.data.generator.risk_note_rate = to_double(k, v); }},
        {"data.late_risk_note_rate",
         [](C& c, const S& k, const S& v) { c.data.generator.late_risk_note_rate = to_double(k, v); }},
        {"data.signal_scale", [](C& c, const S& k, const S& v) { c.data.generator.signal_scale = to_double(k, v); }},
        {"data.history_marker_rate",
         [](C& c, const S& k, const S& v) { c.data.generator.history_marker_rate = to_double(k, v); }},
        {"data.noise_tokens", [](C& c, const S& k, const S& v) { c.data.generator.noise_tokens = to_size(k, v); }},
        {"data.readmission_rate",
         [](C& c, const S& k, const S& v) { c.data.generator.readmission_rate = to_double(k, v); }},
        {"data.mortality_rate", [](C& c, const S& k, const S& v) { c.data.generator.mortality_rate = to_double(k, v); }},

        {"model.prompt_len", [](C& c, const S& k, const S& v) { c.model.prompt_len = to_size(k, v); }},
        {"model.d_model", [](C& c, const S& k, const S& v) { c.model.d_model = to_size(k, v); }},
        {"model.layers", [](C& c, const S& k, const S& v) { c.model.layers = to_size(k, v); }},
        {"model.heads", [](C& c, const S& k, const S& v) { c.model.heads = to_size(k, v); }},
        {"model.ffn_mult", [](C& c, const S& k, const S& v) { c.model.ffn_mult = to_size(k, v); }},
        {"model.max_len", [](C& c, const S& k, const S& v) { c.model.max_len = to_size(k, v); }},
        {"model.bidirectional", [](C& c, const S& k, const S& v) { c.model.bidirectional = to_bool(k, v); }},
        {"model.pool_tokens_only", [](C& c, const S& k, const S& v) { c.model.pool_tokens_only = to_bool(k, v); }},
        {"model.lm_seed", [](C& c, const S& k, const S& v) { c.model.lm_seed = to_u64(k, v); }},
        {"model.state_recurrent", [](C& c, const S& k, const S& v) { c.model.state_recurrent = to_bool(k, v); }},
        {"model.struct_encoded", [](C& c, const S& k, const S& v) { c.model.struct_encoded = to_bool(k, v); }},
        {"model.encoder", [](C& c, const S&, const S& v) { c.model.encoder = encoders::parse_encoder(v); }},
        {"model.d_enc", [](C& c, const S& k, const S& v) { c.model.d_enc = to_size(k, v); }},
        {"model.reverse_time", [](C& c, const S& k, const S& v) { c.model.reverse_time = to_bool(k, v); }},
        {"model.transformer_heads", [](C& c, const S& k, const S& v) { c.model.transformer_heads = to_size(k, v); }},
        {"model.threshold", [](C& c, const S& k, const S& v) { c.model.threshold = to_double(k, v); }},

        {"synthesis.mode", [](C& c, const S&, const S& v) { c.model.synthesis.mode = synthesis::parse_mode(v); }},
        {"synthesis.n_max", [](C& c, const S& k, const S& v) { c.model.synthesis.n_max = to_size(k, v); }},
        {"synthesis.visit_template", [](C& c, const S&, const S& v) { c.model.synthesis.visit_template = v; }},
        {"synthesis.trailer_template", [](C& c, const S&, const S& v) { c.model.synthesis.trailer_template = v; }},
        {"synthesis.stopwords",
         [](C& c, const S&, const S& v) { c.model.synthesis.note_stopwords = split_list(v); }},

        {"train.lr", [](C& c, const S& k, const S& v) { c.train.lr = to_double(k, v); }},
        {"train.weight_decay", [](C& c, const S& k, const S& v) { c.train.weight_decay = to_double(k, v); }},
        {"train.batch_size", [](C& c, const S& k, const S& v) { c.train.batch_size = to_size(k, v); }},
        {"train.epochs", [](C& c, const S& k, const S& v) { c.train.epochs = to_size(k, v); }},

        {"ablation.arms", [](C& c, const S&, const S& v) { c.arms = split_list(v); }},
        {"sweep.encoders",
         [](C& c, const S&, const S& v) {
             c.encoders.clear();
             for (const auto& e : split_list(v)) c.encoders.push_back(encoders::parse_encoder(e));
         }},
        {"timing.batches", [](C& c, const S& k, const S& v) { c.timing_batches = to_size(k, v); }},
        {"timing.batch_size", [](C& c, const S& k, const S& v) { c.timing_batch_size = to_size(k, v); }},
    };
    return table;
}

// A bare key (no section) resolves to the unique section that defines it.
inline std::string resolve_key(const std::string& key) {
    const auto& table = setters();
    if (table.count(key)) return key;
    if (key.find('.') == std::string::npos) {
        std::vector<std::string> hits;
        for (const auto& [full, setter] : table) {
            if (full.substr(full.find('.') + 1) == key) hits.push_back(full);
        }
        if (hits.size() == 1) return hits.front();
        if (hits.size() > 1) {
            std::string list;
            for (const auto& h : hits) list += (list.empty() ? "" : ", ") + h;
            throw ConfigError("config key '" + key + "' is ambiguous (" + list + ")");
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace detail

/// Sets one key (`section.key` or an unambiguous bare key).
inline void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value) {
    const std::string full = detail::resolve_key(detail::trim(key));
    detail::setters().at(full)(config, full, detail::trim(value));
}

/// Applies a `key=value` override as given on the command line.
inline void apply_override(ExperimentConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' must look like key=value");
    apply_setting(config, assignment.substr(0, eq), assignment.substr(eq + 1));
}

/// Parses the `key = value` file format with optional `[section]` headers and `#` comments.
inline void apply_config_text(ExperimentConfig& config, std::istream& is, const std::string& origin = "config") {
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        std::string text = detail::trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (text.empty()) continue;
        const std::string where = origin + ":" + std::to_string(line_no);
        if (text.front() == '[') {
            if (text.back() != ']') throw ConfigError(where + ": malformed section header '" + text + "'");
            section = detail::trim(text.substr(1, text.size() - 2));
            continue;
        }
        const auto eq = text.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + text + "'");
        std::string key = detail::trim(text.substr(0, eq));
        std::string value = detail::trim(text.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
        try {
            apply_setting(config, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }
}

inline ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    ExperimentConfig config;
    apply_config_text(config, is, path);
    return config;
}

/// Output root: explicit setting, then the REPROMPT_OUT environment variable, then ./runs.
inline fs::path output_root(const ExperimentConfig& config) {
    if (!config.output.empty()) return config.output;
    if (const char* env = std::getenv("REPROMPT_OUT"); env && *env) return env;
    return "runs";
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

inline cohort::Cohort load_cohort(const ExperimentConfig& config) {
    if (config.data.source == "jsonl") return cohort::load_jsonl(config.data.path);
    return cohort::generate_cohort(config.data.generator);
}

inline std::string data_fingerprint(const cohort::Cohort& c) { return numerics::hex64(cohort::fingerprint(c)); }

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

using Metrics = std::map<std::string, double>;

namespace detail {

inline std::vector<std::vector<int>> top_k_sets(const cohort::Cohort& train, const cohort::Cohort& test) {
    std::map<int, std::size_t> freq;
    double total = 0;
    for (const auto& p : train.patients) {
        for (int m : *p.labels.medication) ++freq[m];
        total += static_cast<double>(p.labels.medication->size());
    }
    const auto k = static_cast<std::size_t>(std::lround(total / static_cast<double>(train.patients.size())));
    std::vector<std::pair<std::size_t, int>> ranked;
    for (const auto& [m, n] : freq) ranked.emplace_back(n, m);
    // Most frequent first; ties broken by the smaller id.
    std::sort(ranked.begin(), ranked.end(),
              [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    std::vector<int> top;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) top.push_back(ranked[i].second);
    std::sort(top.begin(), top.end());
    return std::vector<std::vector<int>>(test.patients.size(), top);
}

}  // namespace detail

struct Evaluation {
    Metrics metrics;
    std::vector<model::PatientTrace> traces;
};

/// Scores the test split. Binary tasks report AUROC/PRAUC plus the planted-feature oracle;
/// the medication task reports micro-F1/Jaccard plus the two reference baselines.
inline Evaluation evaluate(const model::RePrompT& m, const cohort::Cohort& train, const cohort::Cohort& test) {
    Evaluation out;
    const auto task = m.config().task;
    numerics::NoGradGuard no_grad;
    std::vector<model::Prediction> preds;
    for (const auto& p : test.patients) {
        auto fp = m.forward_patient(p);
        preds.push_back(m.from_logits(fp.logits.to_vector()));
        out.traces.push_back(std::move(fp.trace));
    }
    if (task == cohort::Task::medication) {
        std::vector<std::vector<int>> predicted, truth;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            std::vector<int> set;
            for (std::size_t j = 0; j < preds[i].labels.size(); ++j) {
                if (preds[i].labels[j]) set.push_back(static_cast<int>(j));
            }
            predicted.push_back(std::move(set));
            truth.push_back(*test.patients[i].labels.medication);
        }
        const auto model_m = metrics::f1_jaccard(predicted, truth);
        const auto empty_m = metrics::f1_jaccard(std::vector<std::vector<int>>(truth.size()), truth);
        const auto topk_m = metrics::f1_jaccard(detail::top_k_sets(train, test), truth);
        out.metrics = {{"micro_f1", model_m.micro_f1},       {"jaccard", model_m.jaccard},
                       {"empty_micro_f1", empty_m.micro_f1}, {"empty_jaccard", empty_m.jaccard},
                       {"topk_micro_f1", topk_m.micro_f1},   {"topk_jaccard", topk_m.jaccard}};
        return out;
    }
    metrics::ScoredLabels s, oracle;
    s.task = oracle.task = cohort::to_string(task);
    LogisticOracle fit;
    fit.fit(train, task);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int y = static_cast<int>(cohort::binary_target(test.patients[i], task));
        s.scores.push_back(preds[i].scores[0]);
        s.targets.push_back(y);
        oracle.scores.push_back(fit.predict(test.patients[i]));
        oracle.targets.push_back(y);
    }
    try {
        out.metrics = {{"auroc", metrics::auroc(s)}, {"prauc", metrics::prauc(s)}, {"oracle_auroc", metrics::auroc(oracle)}};
    } catch (const metrics::UndefinedMetricError& e) {
        throw DataError(std::string("test split cannot be scored: ") + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

namespace detail {

inline void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path.string());
    os << content;
    if (!os) throw DataError("failed writing " + path.string());
}

inline std::string exact(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace detail

/// Per-seed metrics file: the single source every aggregated table cell is computed from.
inline std::string metrics_csv(const Metrics& m, std::uint64_t seed, const std::string& config_fp,
                               const std::string& data_fp) {
    std::ostringstream os;
    os << "# config " << config_fp << " data " << data_fp << " seed " << seed << "\n";
    os << "metric,value\n";
    for (const auto& [name, v] : m) os << name << ',' << detail::exact(v) << '\n';
    return os.str();
}

inline Metrics read_metrics_csv(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open metrics file " + path.string());
    Metrics out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#' || line == "metric,value") continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw DataError("malformed metrics line '" + line + "' in " + path.string());
        out[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

struct Timing {
    std::size_t batch_size = 0;
    std::size_t batches = 0;
    double median = 0, mean = 0, std = 0, min = 0, max = 0;  // seconds per batch

    std::string to_csv() const {
        std::ostringstream os;
        os << "batch_size,batches,median_s,mean_s,std_s,min_s,max_s\n"
           << batch_size << ',' << batches << ',' << detail::exact(median) << ',' << detail::exact(mean) << ','
           << detail::exact(std) << ',' << detail::exact(min) << ',' << detail::exact(max) << '\n';
        return os.str();
    }
};

/// Wall-clock seconds per forward batch, over `batches` timed batches after one warm-up.
inline Timing time_batches(const model::RePrompT& m, const cohort::Cohort& patients, std::size_t batch_size,
                           std::size_t batches) {
    if (patients.patients.empty()) throw DataError("timing: no patients to time");
    numerics::NoGradGuard no_grad;
    auto run_batch = [&](std::size_t b) {
        for (std::size_t k = 0; k < batch_size; ++k) {
            m.forward_patient(patients.patients[(b * batch_size + k) % patients.patients.size()]);
        }
    };
    run_batch(0);
    std::vector<double> seconds;
    for (std::size_t b = 0; b < batches; ++b) {
        const auto t0 = std::chrono::steady_clock::now();
        run_batch(b);
        seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    Timing t;
    t.batch_size = batch_size;
    t.batches = batches;
    std::vector<double> sorted = seconds;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    t.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    t.min = sorted.front();
    t.max = sorted.back();
    for (double s : seconds) t.mean += s;
    t.mean /= static_cast<double>(n);
    for (double s : seconds) t.std += (s - t.mean) * (s - t.mean);
    t.std = std::sqrt(t.std / static_cast<double>(n));
    return t;
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

struct SeedResult {
    std::uint64_t seed = 0;
    Metrics metrics;
    std::vector<double> epoch_losses;
};

struct RunOutcome {
    fs::path dir;
    std::string config_fingerprint;
    std::string data_fingerprint;
    std::vector<SeedResult> seeds;
    metrics::RunReport report;
};

namespace detail {

inline std::vector<std::string> metric_names(const metrics::RunReport& r) {
    std::vector<std::string> names;
    for (const auto& [name, s] : r.metrics) names.push_back(name);
    return names;
}

inline void write_run_report(const RunOutcome& out, cohort::Task task) {
    const auto names = metric_names(out.report);
    metrics::Table table;
    table.title = "RePrompT " + cohort::to_string(task);
    table.header_notes = {"config " + out.config_fingerprint, "data " + out.data_fingerprint};
    table.row_label = "seed";
    table.columns = names;
    for (const auto& s : out.seeds) {
        std::vector<double> row;
        for (const auto& n : names) row.push_back(s.metrics.at(n));
        table.rows.emplace_back(std::to_string(s.seed), row);
    }
    std::vector<double> mean, sd;
    for (const auto& n : names) {
        mean.push_back(out.report.metrics.at(n).mean);
        sd.push_back(out.report.metrics.at(n).std);
    }
    table.rows.emplace_back("mean", mean);
    table.rows.emplace_back("std", sd);
    std::ostringstream csv, md;
    csv << "# config " << out.config_fingerprint << " data " << out.data_fingerprint << '\n';
    table.write_csv(csv);
    table.write_markdown(md);
    md << "\nTiming is reported separately in timing.csv.\n";
    write_file(out.dir / "report.csv", csv.str());
    write_file(out.dir / "report.md", md.str());
}

}  // namespace detail

/// Trains and evaluates one configuration for every seed under `dir`.
///
/// The cohort is fixed by the data settings; the seed drives the split, initialization and
/// shuffling. Each seed directory receives metrics.csv, model.ckpt and trace.jsonl.
inline RunOutcome run(const ExperimentConfig& config, const fs::path& dir, std::ostream* log = nullptr,
                      const cohort::Cohort* preloaded = nullptr) {
    config.validate();
    RunOutcome out;
    out.dir = dir;
    out.config_fingerprint = config.fingerprint();
    const cohort::Cohort cohort = preloaded ? *preloaded : load_cohort(config);
    out.data_fingerprint = data_fingerprint(cohort);
    std::vector<Metrics> per_seed;
    for (std::uint64_t seed : config.seeds) {
        const auto [train_set, test_set] = cohort::split(cohort, config.split, seed);
        auto tokens = synthesis::TokenVocabulary::build(train_set, config.model.effective_synthesis());
        model::RePrompT m(config.model, cohort.vocabulary, std::move(tokens), seed);
        model::TrainConfig tc;
        tc.adam.lr = config.train.lr;
        tc.adam.weight_decay = config.train.weight_decay;
        tc.batch_size = config.train.batch_size;
        tc.epochs = config.train.epochs;
        tc.seed = seed;
        auto optimizer = model::make_optimizer(m, tc.adam);
        const auto trained = model::train(m, optimizer, train_set, tc);
        if (trained.frozen_hash_before != trained.frozen_hash_after) {
            throw NumericError("frozen language model changed during training");
        }
        auto eval = evaluate(m, train_set, test_set);

        const fs::path seed_dir = dir / ("seed_" + std::to_string(seed));
        detail::write_file(seed_dir / "metrics.csv",
                           metrics_csv(eval.metrics, seed, out.config_fingerprint, out.data_fingerprint));
        fs::create_directories(seed_dir);
        m.save((seed_dir / "model.ckpt").string(), &optimizer);
        std::ostringstream traces;
        for (const auto& t : eval.traces) traces << t.to_json().dump() << '\n';
        detail::write_file(seed_dir / "trace.jsonl", traces.str());

        if (log) {
            *log << "[" << config.name << "] seed " << seed << " losses";
            for (double l : trained.epoch_losses) *log << ' ' << metrics::format_value(l);
            for (const auto& [k, v] : eval.metrics) *log << ' ' << k << '=' << metrics::format_value(v);
            *log << std::endl;
        }
        // Aggregation reads back the persisted file so tables never drift from it.
        per_seed.push_back(read_metrics_csv(seed_dir / "metrics.csv"));
        out.seeds.push_back({seed, per_seed.back(), trained.epoch_losses});
    }
    out.report = metrics::aggregate(per_seed, config.seeds, out.config_fingerprint);
    detail::write_run_report(out, config.model.task);
    return out;
}

/// Times forward batches of a fresh model on the test split of the first seed.
inline Timing time_config(const ExperimentConfig& config) {
    config.validate();
    const auto cohort = load_cohort(config);
    const auto [train_set, test_set] = cohort::split(cohort, config.split, config.seeds.front());
    auto tokens = synthesis::TokenVocabulary::build(train_set, config.model.effective_synthesis());
    model::RePrompT m(config.model, cohort.vocabulary, std::move(tokens), config.seeds.front());
    return time_batches(m, test_set, config.timing_batch_size, config.timing_batches);
}

// ---------------------------------------------------------------------------
// Comparisons
// ---------------------------------------------------------------------------

struct ComparisonRow {
    std::string name;
    RunOutcome outcome;
};

struct Comparison {
    std::string data_fingerprint;
    std::vector<ComparisonRow> rows;

    double mean(const std::string& row, const std::string& metric) const {
        for (const auto& r : rows) {
            if (r.name == row) return r.outcome.report.metrics.at(metric).mean;
        }
        throw std::out_of_range("comparison has no row '" + row + "'");
    }
};

namespace detail {

inline Comparison run_variants(const std::vector<std::pair<std::string, ExperimentConfig>>& variants,
                               const fs::path& dir, std::ostream* log) {
    Comparison cmp;
    const cohort::Cohort cohort = load_cohort(variants.front().second);
    for (const auto& [name, cfg] : variants) {
        auto outcome = run(cfg, dir / name, log, &cohort);
        if (cmp.rows.empty()) {
            cmp.data_fingerprint = outcome.data_fingerprint;
        } else if (outcome.data_fingerprint != cmp.data_fingerprint) {
            throw DataError("variant '" + name + "' saw different data (" + outcome.data_fingerprint + " vs " +
                            cmp.data_fingerprint + ")");
        }
        cmp.rows.push_back({name, std::move(outcome)});
    }
    return cmp;
}

inline void write_comparison(const Comparison& cmp, const fs::path& dir, const std::string& stem,
                             const std::string& row_label, const std::string& title) {
    const auto names = metric_names(cmp.rows.front().outcome.report);
    std::ostringstream csv;
    csv << "# data " << cmp.data_fingerprint << " shared by all rows\n";
    csv << row_label << ",data_fingerprint,config_fingerprint,seeds";
    for (const auto& n : names) csv << ',' << n << "_mean," << n << "_std";
    csv << '\n';
    metrics::Table md;
    md.title = title;
    md.header_notes = {"data " + cmp.data_fingerprint + " shared by all rows"};
    md.row_label = row_label;
    md.columns = names;
    for (const auto& r : cmp.rows) {
        csv << r.name << ',' << r.outcome.data_fingerprint << ',' << r.outcome.config_fingerprint << ','
            << r.outcome.seeds.size();
        std::vector<double> means;
        for (const auto& n : names) {
            const auto& s = r.outcome.report.metrics.at(n);
            csv << ',' << exact(s.mean) << ',' << exact(s.std);
            means.push_back(s.mean);
        }
        csv << '\n';
        md.rows.emplace_back(r.name, means);
    }
    std::ostringstream mds;
    md.write_markdown(mds);
    write_file(dir / (stem + ".csv"), csv.str());
    write_file(dir / (stem + ".md"), mds.str());
}

}  // namespace detail

/// Ablation matrix: each arm differs from the base config only in its module toggles.
inline Comparison run_ablation(const ExperimentConfig& config, const fs::path& dir, std::ostream* log = nullptr) {
    config.validate();
    std::vector<std::pair<std::string, ExperimentConfig>> variants;
    for (const auto& name : config.arms) {
        const Arm arm = find_arm(name);
        ExperimentConfig c = config;
        c.model.state_recurrent = arm.state_recurrent;
        c.model.struct_encoded = arm.struct_encoded;
        c.model.synthesis.mode = arm.synthesis;
        variants.emplace_back(name, c);
    }
    auto cmp = detail::run_variants(variants, dir, log);
    detail::write_comparison(cmp, dir, "ablation", "arm", "Ablation (" + cohort::to_string(config.model.task) + ")");
    return cmp;
}

/// Encoder sweep: the struct encoder is the only varied setting.
inline Comparison run_encoder_sweep(const ExperimentConfig& config, const fs::path& dir, std::ostream* log = nullptr) {
    config.validate();
    std::vector<std::pair<std::string, ExperimentConfig>> variants;
    for (auto kind : config.encoders) {
        ExperimentConfig c = config;
        c.model.encoder = kind;
        c.model.struct_encoded = true;
        variants.emplace_back(encoders::to_string(kind), c);
    }
    auto cmp = detail::run_variants(variants, dir, log);
    detail::write_comparison(cmp, dir, "encoders", "encoder",
                             "Encoder sweep (" + cohort::to_string(config.model.task) + ")");
    return cmp;
}

}  // namespace reprompt::experiment
