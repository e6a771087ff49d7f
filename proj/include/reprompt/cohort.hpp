#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "reprompt/errors.hpp"
#include "reprompt/numerics/nn.hpp"
#include "reprompt/numerics/serialize.hpp"

namespace reprompt::cohort {

enum class Modality { diagnosis, medication, procedure };
enum class Task { readmission, mortality, medication };

inline constexpr Modality kModalities[] = {Modality::diagnosis, Modality::medication, Modality::procedure};

inline std::string to_string(Modality m) {
    switch (m) {
        case Modality::diagnosis: return "diagnosis";
        case Modality::medication: return "medication";
        case Modality::procedure: return "procedure";
    }
    return "?";
}

inline std::string to_string(Task t) {
    switch (t) {
        case Task::readmission: return "readmission";
        case Task::mortality: return "mortality";
        case Task::medication: return "medication";
    }
    return "?";
}

inline Task parse_task(std::string_view s) {
    if (s == "readmission") return Task::readmission;
    if (s == "mortality") return Task::mortality;
    if (s == "medication") return Task::medication;
    throw ConfigError("unknown task '" + std::string(s) + "' (valid: readmission, mortality, medication)");
}

/// Per-modality code universe with dense ids.
struct CodeVocabulary {
    std::vector<std::string> diagnoses;
    std::vector<std::string> medications;
    std::vector<std::string> procedures;

    const std::vector<std::string>& codes(Modality m) const {
        switch (m) {
            case Modality::diagnosis: return diagnoses;
            case Modality::medication: return medications;
            case Modality::procedure: return procedures;
        }
        return diagnoses;
    }
    std::size_t size(Modality m) const { return codes(m).size(); }

    std::optional<int> find(Modality m, std::string_view code) const {
        const auto& list = codes(m);
        const auto it = std::find(list.begin(), list.end(), code);
        if (it == list.end()) return std::nullopt;
        return static_cast<int>(it - list.begin());
    }

    void validate() const {
        for (Modality m : kModalities) {
            std::set<std::string> seen;
            for (const auto& c : codes(m)) {
                if (!seen.insert(c).second) throw VocabularyError("duplicate " + to_string(m) + " code '" + c + "'");
            }
        }
    }

    bool operator==(const CodeVocabulary&) const = default;
};

struct Visit {
    std::vector<int> dx;
    std::vector<int> rx;
    std::vector<int> px;
    std::vector<std::string> note_tokens;

    const std::vector<int>& codes(Modality m) const {
        switch (m) {
            case Modality::diagnosis: return dx;
            case Modality::medication: return rx;
            case Modality::procedure: return px;
        }
        return dx;
    }
    bool has(Modality m, int id) const { return std::binary_search(codes(m).begin(), codes(m).end(), id); }

    bool operator==(const Visit&) const = default;
};

struct Labels {
    std::optional<int> readmission;
    std::optional<int> mortality;
    std::optional<std::vector<int>> medication;

    bool operator==(const Labels&) const = default;
};

struct Patient {
    std::string id;
    std::vector<Visit> visits;
    Labels labels;

    std::size_t num_visits() const { return visits.size(); }
    bool operator==(const Patient&) const = default;
};

struct Cohort {
    CodeVocabulary vocabulary;
    std::vector<Patient> patients;
    nlohmann::ordered_json generator = nlohmann::ordered_json::object();

    bool operator==(const Cohort& other) const {
        return vocabulary == other.vocabulary && patients == other.patients && generator == other.generator;
    }
};

/// Binary target of a patient for a binary task.
inline double binary_target(const Patient& p, Task task) {
    const auto& v = task == Task::readmission ? p.labels.readmission : p.labels.mortality;
    if (task == Task::medication || !v) {
        throw DataError("patient " + p.id + " has no " + to_string(task) + " label");
    }
    return static_cast<double>(*v);
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

/// Diagnosis ids reserved for planted signal; never drawn as background codes.
namespace planted {
inline constexpr int kChronic = 0;      // chronic condition (kidney-disease-like)
inline constexpr int kComorbidity = 1;  // spawned later by an earlier chronic code
inline constexpr int kOrderFirst = 2;
inline constexpr int kOrderSecond = 3;
inline constexpr int kHistoryMarker = 4;  // only ever recorded at the first visit
inline constexpr int kCount = 5;
inline constexpr std::size_t kChronicCluster = 20;
inline constexpr const char* kRiskWord = "deteriorating";
}  // namespace planted

/// Hand-extractable features that drive the label model.
struct PlantedFeatures {
    double motif = 0;       // chronic code at some visit, comorbidity at a later one
    double chronic = 0;     // chronic code anywhere
    double early_note = 0;  // risk word in the first visit's note
    double history = 0;     // history marker at the first visit
    double order = 0;       // +1 first-marker precedes second-marker, -1 the reverse, 0 otherwise

    std::vector<double> as_vector() const { return {motif, chronic, early_note, history, order}; }
};

inline PlantedFeatures extract_planted_features(const Patient& p) {
    PlantedFeatures f;
    std::optional<std::size_t> first_chronic, first_a, first_b;
    for (std::size_t t = 0; t < p.visits.size(); ++t) {
        const Visit& v = p.visits[t];
        if (v.has(Modality::diagnosis, planted::kChronic) && !first_chronic) first_chronic = t;
        if (v.has(Modality::diagnosis, planted::kComorbidity) && first_chronic && *first_chronic < t) f.motif = 1;
        if (v.has(Modality::diagnosis, planted::kOrderFirst) && !first_a) first_a = t;
        if (v.has(Modality::diagnosis, planted::kOrderSecond) && !first_b) first_b = t;
    }
    f.chronic = first_chronic ? 1 : 0;
    if (!p.visits.empty()) {
        const auto& note = p.visits.front().note_tokens;
        f.early_note = std::find(note.begin(), note.end(), planted::kRiskWord) != note.end() ? 1 : 0;
        f.history = p.visits.front().has(Modality::diagnosis, planted::kHistoryMarker) ? 1 : 0;
    }
    if (first_a && first_b && *first_a != *first_b) f.order = *first_a < *first_b ? 1 : -1;
    return f;
}

/// Logistic weights over PlantedFeatures.
struct SignalWeights {
    double motif = 0;
    double chronic = 0;
    double early_note = 0;
    double history = 0;
    double order = 0;

    double dot(const PlantedFeatures& f) const {
        return motif * f.motif + chronic * f.chronic + early_note * f.early_note + history * f.history +
               order * f.order;
    }

    SignalWeights scaled(double k) const { return {motif * k, chronic * k, early_note * k, history * k, order * k}; }
};

enum class SignalProfile { standard, history, order, ablation };

inline SignalProfile parse_profile(std::string_view s) {
    if (s == "standard") return SignalProfile::standard;
    if (s == "history") return SignalProfile::history;
    if (s == "order") return SignalProfile::order;
    if (s == "ablation") return SignalProfile::ablation;
    throw ConfigError("unknown cohort profile '" + std::string(s) + "' (valid: standard, history, order, ablation)");
}

inline std::string to_string(SignalProfile p) {
    switch (p) {
        case SignalProfile::standard: return "standard";
        case SignalProfile::history: return "history";
        case SignalProfile::order: return "order";
        case SignalProfile::ablation: return "ablation";
    }
    return "?";
}

/// Readmission weights for a profile. Mortality always uses the standard weights.
inline SignalWeights readmission_weights(SignalProfile profile) {
    switch (profile) {
        case SignalProfile::standard: return {.motif = 3.0, .chronic = 1.5, .early_note = 2.0};
        case SignalProfile::history: return {.history = 4.0};
        case SignalProfile::order: return {.order = 2.5};
        case SignalProfile::ablation: return {.motif = 2.5, .early_note = 2.5, .history = 2.5};
    }
    return {};
}

inline SignalWeights mortality_weights() { return {.motif = 2.5, .chronic = 1.5, .early_note = 1.5}; }

struct GeneratorConfig {
    std::uint64_t seed = 0;
    std::size_t n_patients = 2000;
    std::size_t n_diagnoses = 200;
    std::size_t n_medications = 150;
    std::size_t n_procedures = 80;
    // Probability of T = 2, 3, 4, ... visits.
    std::vector<double> visit_count_weights = {0.45, 0.35, 0.2};
    double mean_dx = 3.0;
    double mean_extra_rx = 1.5;
    double mean_px = 1.0;
    double treatment_rate = 0.7;
    double chronic_prevalence = 0.35;
    double chronic_onset = 0.1;
    double chronic_code_rate = 0.8;
    double comorbidity_spawn = 0.6;
    double comorbidity_background = 0.05;
    double history_marker_rate = 0.5;
    double risk_note_rate = 0.3;        // first visit
    double late_risk_note_rate = 0.15;  // every later visit
    double signal_scale = 1.5;          // multiplies the planted label weights
    std::size_t noise_tokens = 4;
    double readmission_rate = 0.537;
    double mortality_rate = 0.066;
    SignalProfile profile = SignalProfile::standard;

    nlohmann::ordered_json to_json() const {
        return {{"seed", seed},
                {"n_patients", n_patients},
                {"n_diagnoses", n_diagnoses},
                {"n_medications", n_medications},
                {"n_procedures", n_procedures},
                {"visit_count_weights", visit_count_weights},
                {"mean_dx", mean_dx},
                {"mean_extra_rx", mean_extra_rx},
                {"mean_px", mean_px},
                {"treatment_rate", treatment_rate},
                {"chronic_prevalence", chronic_prevalence},
                {"chronic_onset", chronic_onset},
                {"chronic_code_rate", chronic_code_rate},
                {"comorbidity_spawn", comorbidity_spawn},
                {"comorbidity_background", comorbidity_background},
                {"history_marker_rate", history_marker_rate},
                {"risk_note_rate", risk_note_rate},
                {"late_risk_note_rate", late_risk_note_rate},
                {"noise_tokens", noise_tokens},
                {"signal_scale", signal_scale},
                {"readmission_rate", readmission_rate},
                {"mortality_rate", mortality_rate},
                {"profile", to_string(profile)}};
    }

    void validate() const {
        if (n_patients < 2) throw ConfigError("generator: n_patients must be >= 2");
        if (n_diagnoses < static_cast<std::size_t>(planted::kCount) + 1) {
            throw ConfigError("generator: n_diagnoses must be >= " + std::to_string(planted::kCount + 1) +
                              " (planted codes plus background)");
        }
        if (n_medications < 4 || n_procedures < 4) {
            throw ConfigError("generator: medication and procedure vocabularies need >= 4 codes");
        }
        for (double r : {readmission_rate, mortality_rate}) {
            if (!(r > 0.0 && r < 1.0)) throw ConfigError("generator: target positive rates must lie in (0,1)");
        }
        if (visit_count_weights.empty()) throw ConfigError("generator: visit_count_weights is empty");
        double total = 0;
        for (double w : visit_count_weights) {
            if (w < 0) throw ConfigError("generator: negative visit-count weight");
            total += w;
        }
        if (total <= 0) throw ConfigError("generator: visit_count_weights sum to zero");
        if (mean_dx < 1.0) throw ConfigError("generator: mean_dx must be >= 1");
        for (double r : {treatment_rate, chronic_prevalence, chronic_onset, chronic_code_rate, comorbidity_spawn,
                         comorbidity_background, history_marker_rate, risk_note_rate, late_risk_note_rate}) {
            if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("generator: probabilities must lie in [0,1]");
        }
        if (!(signal_scale >= 0.0)) throw ConfigError("generator: signal_scale must be >= 0");
    }
};

namespace detail {

inline std::string code_name(const char* prefix, std::size_t id) {
    std::ostringstream os;
    os << prefix << std::setw(3) << std::setfill('0') << id;
    return os.str();
}

inline std::vector<int> to_sorted_ids(const std::set<int>& s) { return {s.begin(), s.end()}; }

inline double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// Intercept b with mean_i sigmoid(b + s_i) == rate, by bisection.
inline double solve_intercept(const std::vector<double>& scores, double rate, const std::string& task) {
    auto mean_rate = [&](double b) {
        double total = 0;
        for (double s : scores) total += sigmoid(b + s);
        return total / static_cast<double>(scores.size());
    };
    double lo = -30.0, hi = 30.0;
    if (mean_rate(lo) > rate || mean_rate(hi) < rate) {
        throw ConfigError("generator: " + task + " rate " + std::to_string(rate) +
                          " is not reachable by the label model");
    }
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (mean_rate(mid) < rate ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

inline const std::vector<std::string>& note_noise_words() {
    static const std::vector<std::string> words = [] {
        std::vector<std::string> w;
        for (int i = 0; i < 60; ++i) w.push_back(code_name("w", static_cast<std::size_t>(i)));
        return w;
    }();
    return words;
}

}  // namespace detail

/// Deterministic synthetic cohort with planted, recoverable label signal.
inline Cohort generate_cohort(const GeneratorConfig& config) {
    config.validate();
    numerics::Rng rng(config.seed);
    Cohort cohort;
    for (std::size_t i = 0; i < config.n_diagnoses; ++i) cohort.vocabulary.diagnoses.push_back(detail::code_name("DX", i));
    for (std::size_t i = 0; i < config.n_medications; ++i) cohort.vocabulary.medications.push_back(detail::code_name("RX", i));
    for (std::size_t i = 0; i < config.n_procedures; ++i) cohort.vocabulary.procedures.push_back(detail::code_name("PX", i));
    cohort.generator = config.to_json();

    const std::size_t background_lo = planted::kCount;
    const std::size_t background_n = config.n_diagnoses - background_lo;
    const std::size_t cluster_n = std::min(planted::kChronicCluster, background_n);
    std::discrete_distribution<std::size_t> visit_count(config.visit_count_weights.begin(),
                                                        config.visit_count_weights.end());

    std::vector<double> readmit_scores, mortality_scores;
    const SignalWeights w_readmit = readmission_weights(config.profile).scaled(config.signal_scale);
    const SignalWeights w_mortality = mortality_weights().scaled(config.signal_scale);

    for (std::size_t pi = 0; pi < config.n_patients; ++pi) {
        Patient patient;
        patient.id = detail::code_name("P", pi);
        const std::size_t n_visits = 2 + visit_count(rng.engine());
        bool chronic = rng.bernoulli(config.chronic_prevalence);
        bool chronic_seen = false;

        std::size_t order_a = n_visits, order_b = n_visits;
        if (config.profile == SignalProfile::order) {
            order_a = rng.index(n_visits);
            do {
                order_b = rng.index(n_visits);
            } while (order_b == order_a);
        }

        for (std::size_t t = 0; t < n_visits; ++t) {
            if (!chronic && t > 0 && rng.bernoulli(config.chronic_onset)) chronic = true;
            std::set<int> dx, rx, px;
            const int n_dx = 1 + rng.poisson(config.mean_dx - 1.0);
            for (int k = 0; k < n_dx; ++k) {
                std::size_t id;
                if (chronic && rng.bernoulli(0.6)) {
                    id = background_lo + rng.index(cluster_n);
                } else {
                    id = background_lo + rng.index(background_n);
                }
                dx.insert(static_cast<int>(id));
            }
            if (chronic && rng.bernoulli(config.chronic_code_rate)) dx.insert(planted::kChronic);
            const double spawn = chronic_seen ? config.comorbidity_spawn : config.comorbidity_background;
            if (t > 0 && rng.bernoulli(spawn)) dx.insert(planted::kComorbidity);
            if (dx.count(planted::kChronic)) chronic_seen = true;
            if (t == 0 && rng.bernoulli(config.history_marker_rate)) dx.insert(planted::kHistoryMarker);
            if (t == order_a) dx.insert(planted::kOrderFirst);
            if (t == order_b) dx.insert(planted::kOrderSecond);

            for (int d : dx) {
                if (rng.bernoulli(config.treatment_rate)) {
                    rx.insert(static_cast<int>((static_cast<std::size_t>(d) * 7 + 3) % config.n_medications));
                }
            }
            const int extra_rx = rng.poisson(config.mean_extra_rx);
            for (int k = 0; k < extra_rx; ++k) rx.insert(static_cast<int>(rng.index(config.n_medications)));
            const int n_px = rng.poisson(config.mean_px);
            for (int k = 0; k < n_px; ++k) px.insert(static_cast<int>(rng.index(config.n_procedures)));
            if (chronic && rng.bernoulli(0.5)) px.insert(0);

            Visit visit;
            visit.dx = detail::to_sorted_ids(dx);
            visit.rx = detail::to_sorted_ids(rx);
            visit.px = detail::to_sorted_ids(px);
            const bool risk = rng.bernoulli(t == 0 ? config.risk_note_rate : config.late_risk_note_rate);
            visit.note_tokens = {"admitted", "for", "evaluation", "condition", risk ? planted::kRiskWord
                                                                               : (rng.bernoulli(0.5) ? "stable" : "improving")};
            for (std::size_t k = 0; k < config.noise_tokens; ++k) {
                visit.note_tokens.push_back(detail::note_noise_words()[rng.index(detail::note_noise_words().size())]);
            }
            visit.note_tokens.push_back("discharged");
            patient.visits.push_back(std::move(visit));
        }
        patient.labels.medication = patient.visits.back().rx;
        const PlantedFeatures f = extract_planted_features(patient);
        readmit_scores.push_back(w_readmit.dot(f));
        mortality_scores.push_back(w_mortality.dot(f));
        cohort.patients.push_back(std::move(patient));
    }

    const double b_readmit = detail::solve_intercept(readmit_scores, config.readmission_rate, "readmission");
    const double b_mortality = detail::solve_intercept(mortality_scores, config.mortality_rate, "mortality");
    for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
        auto& labels = cohort.patients[i].labels;
        labels.readmission = rng.bernoulli(detail::sigmoid(b_readmit + readmit_scores[i])) ? 1 : 0;
        labels.mortality = rng.bernoulli(detail::sigmoid(b_mortality + mortality_scores[i])) ? 1 : 0;
    }
    return cohort;
}

/// Disjoint train/test partition, shuffled by `seed`. Each part keeps cohort order.
inline std::pair<Cohort, Cohort> split(const Cohort& cohort, double train_frac, std::uint64_t seed) {
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("split: train fraction must lie in (0,1)");
    const std::size_t n = cohort.patients.size();
    if (n < 2) throw DataError("split: cohort needs at least 2 patients, has " + std::to_string(n));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    numerics::Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng.engine());
    std::size_t n_train = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(n) + 0.5));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> test_idx(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    Cohort train{cohort.vocabulary, {}, cohort.generator};
    Cohort test{cohort.vocabulary, {}, cohort.generator};
    for (std::size_t i : train_idx) train.patients.push_back(cohort.patients[i]);
    for (std::size_t i : test_idx) test.patients.push_back(cohort.patients[i]);
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// JSONL persistence
// ---------------------------------------------------------------------------

namespace detail {

inline std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

inline std::vector<std::string> split_tokens(const std::string& text) {
    std::istringstream is(text);
    std::vector<std::string> out;
    for (std::string tok; is >> tok;) out.push_back(tok);
    return out;
}

inline std::vector<int> read_codes(const nlohmann::json& arr, Modality m, const CodeVocabulary& vocab,
                                   std::size_t line) {
    if (!arr.is_array()) throw DataError("line " + std::to_string(line) + ": code list must be an array");
    std::set<int> ids;
    for (const auto& item : arr) {
        if (item.is_number_integer()) {
            const auto id = item.get<long long>();
            if (id < 0 || static_cast<std::size_t>(id) >= vocab.size(m)) {
                throw VocabularyError("line " + std::to_string(line) + ": unknown " + to_string(m) + " code id " +
                                      std::to_string(id));
            }
            ids.insert(static_cast<int>(id));
        } else if (item.is_string()) {
            const auto code = item.get<std::string>();
            const auto id = vocab.find(m, code);
            if (!id) {
                throw VocabularyError("line " + std::to_string(line) + ": unknown " + to_string(m) + " code '" +
                                      code + "'");
            }
            ids.insert(*id);
        } else {
            throw DataError("line " + std::to_string(line) + ": codes must be integers or strings");
        }
    }
    return {ids.begin(), ids.end()};
}

}  // namespace detail

inline void write_jsonl(const Cohort& cohort, std::ostream& os) {
    nlohmann::ordered_json header = {{"type", "vocab"},
                                     {"diagnoses", cohort.vocabulary.diagnoses},
                                     {"medications", cohort.vocabulary.medications},
                                     {"procedures", cohort.vocabulary.procedures},
                                     {"generator", cohort.generator}};
    os << header.dump() << '\n';
    for (const auto& p : cohort.patients) {
        nlohmann::ordered_json visits = nlohmann::ordered_json::array();
        for (const auto& v : p.visits) {
            visits.push_back({{"dx", v.dx}, {"rx", v.rx}, {"px", v.px}, {"note", detail::join_tokens(v.note_tokens)}});
        }
        nlohmann::ordered_json labels = nlohmann::ordered_json::object();
        if (p.labels.readmission) labels["readmission"] = *p.labels.readmission;
        if (p.labels.mortality) labels["mortality"] = *p.labels.mortality;
        if (p.labels.medication) labels["medication"] = *p.labels.medication;
        nlohmann::ordered_json rec = {{"type", "patient"}, {"id", p.id}, {"visits", visits}, {"labels", labels}};
        os << rec.dump() << '\n';
    }
}

inline std::string to_jsonl(const Cohort& cohort) {
    std::ostringstream os;
    write_jsonl(cohort, os);
    return os.str();
}

inline void save_jsonl(const Cohort& cohort, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write cohort file " + path);
    write_jsonl(cohort, os);
}

inline Cohort read_jsonl(std::istream& is) {
    Cohort cohort;
    std::string text;
    std::size_t line_no = 0;
    bool have_vocab = false;
    std::set<std::string> ids;
    while (std::getline(is, text)) {
        ++line_no;
        if (text.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
        }
        try {
            const std::string type = rec.at("type").get<std::string>();
            if (type == "vocab") {
                if (have_vocab) throw DataError("line " + std::to_string(line_no) + ": duplicate vocab record");
                cohort.vocabulary.diagnoses = rec.at("diagnoses").get<std::vector<std::string>>();
                cohort.vocabulary.medications = rec.at("medications").get<std::vector<std::string>>();
                cohort.vocabulary.procedures = rec.at("procedures").get<std::vector<std::string>>();
                cohort.vocabulary.validate();
                if (rec.contains("generator")) {
                    cohort.generator = nlohmann::ordered_json::parse(text).at("generator");
                }
                have_vocab = true;
            } else if (type == "patient") {
                if (!have_vocab) throw DataError("line " + std::to_string(line_no) + ": patient before vocab record");
                Patient p;
                p.id = rec.at("id").get<std::string>();
                if (!ids.insert(p.id).second) {
                    throw DataError("line " + std::to_string(line_no) + ": duplicate patient id " + p.id);
                }
                for (const auto& v : rec.at("visits")) {
                    Visit visit;
                    visit.dx = detail::read_codes(v.at("dx"), Modality::diagnosis, cohort.vocabulary, line_no);
                    visit.rx = detail::read_codes(v.at("rx"), Modality::medication, cohort.vocabulary, line_no);
                    visit.px = detail::read_codes(v.at("px"), Modality::procedure, cohort.vocabulary, line_no);
                    visit.note_tokens = detail::split_tokens(v.value("note", std::string{}));
                    if (visit.dx.empty() && visit.rx.empty() && visit.px.empty()) {
                        throw DataError("line " + std::to_string(line_no) + ": visit without any codes");
                    }
                    p.visits.push_back(std::move(visit));
                }
                if (p.visits.empty()) throw DataError("line " + std::to_string(line_no) + ": patient without visits");
                const auto& labels = rec.value("labels", nlohmann::json::object());
                if (labels.contains("readmission")) p.labels.readmission = labels.at("readmission").get<int>();
                if (labels.contains("mortality")) p.labels.mortality = labels.at("mortality").get<int>();
                if (labels.contains("medication")) {
                    p.labels.medication =
                        detail::read_codes(labels.at("medication"), Modality::medication, cohort.vocabulary, line_no);
                }
                for (const auto& v : {p.labels.readmission, p.labels.mortality}) {
                    if (v && *v != 0 && *v != 1) {
                        throw DataError("line " + std::to_string(line_no) + ": binary label must be 0 or 1");
                    }
                }
                cohort.patients.push_back(std::move(p));
            } else {
                throw DataError("line " + std::to_string(line_no) + ": unknown record type '" + type + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError("line " + std::to_string(line_no) + ": malformed record (" + e.what() + ")");
        }
    }
    if (!have_vocab) throw DataError("cohort file has no vocab record");
    return cohort;
}

inline Cohort load_jsonl(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open cohort file " + path);
    return read_jsonl(is);
}

/// Content hash of the serialized cohort.
inline std::uint64_t fingerprint(const Cohort& cohort) {
    numerics::Fnv1a h;
    h.update(to_jsonl(cohort));
    return h.digest();
}

}  // namespace reprompt::cohort
