#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "reprompt/cohort.hpp"
#include "reprompt/errors.hpp"

namespace reprompt::synthesis {

enum class Mode { templated, raw };

inline Mode parse_mode(std::string_view s) {
    if (s == "templated") return Mode::templated;
    if (s == "raw") return Mode::raw;
    throw ConfigError("unknown synthesis mode '" + std::string(s) + "' (valid: templated, raw)");
}

inline std::string to_string(Mode m) { return m == Mode::templated ? "templated" : "raw"; }

/// Rendering rules for visit summaries.
///
/// `visit_template` is expanded once per visit r <= t. Placeholders:
///   {index}  1-based visit number
///   {dx} {rx} {px}  code surface strings of that modality
///   {note}  note tokens with `note_stopwords` removed
/// `trailer_template` is appended once. Placeholders:
///   {count}  number of visits summarized
///   {recurring}  diagnosis codes recorded at two or more of those visits
/// The expanded text is split on whitespace; empty placeholders vanish.
struct SynthesisConfig {
    Mode mode = Mode::templated;
    std::size_t n_max = 128;
    std::string visit_template = "visit {index} dx {dx} rx {rx} px {px} note {note}";
    std::string trailer_template = "visits {count} recurring {recurring}";
    std::vector<std::string> note_stopwords = {"admitted", "for", "evaluation", "condition", "discharged"};
    // Medication recommendation hides the final visit's medications (they are the label).
    bool mask_final_medications = false;

    void validate() const {
        if (n_max == 0) throw ConfigError("synthesis: n_max must be >= 1");
        static const std::set<std::string> visit_keys = {"index", "dx", "rx", "px", "note"};
        static const std::set<std::string> trailer_keys = {"count", "recurring"};
        check_placeholders(visit_template, visit_keys, "visit_template");
        check_placeholders(trailer_template, trailer_keys, "trailer_template");
    }

private:
    static void check_placeholders(const std::string& tpl, const std::set<std::string>& allowed,
                                   const std::string& what) {
        for (std::size_t pos = tpl.find('{'); pos != std::string::npos; pos = tpl.find('{', pos + 1)) {
            const auto end = tpl.find('}', pos);
            if (end == std::string::npos) throw ConfigError("synthesis: unterminated placeholder in " + what);
            const auto key = tpl.substr(pos + 1, end - pos - 1);
            if (!allowed.count(key)) throw ConfigError("synthesis: unknown placeholder {" + key + "} in " + what);
        }
    }
};

/// Bounded token summary of a patient's history up to visit t.
struct SummaryText {
    std::string patient_id;
    std::size_t visit_index = 0;  // 1-based
    std::vector<std::string> tokens;
};

namespace detail {

inline std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) out += ' ';
        out += p;
    }
    return out;
}

inline std::string expand(const std::string& tpl, const std::map<std::string, std::string>& values) {
    std::string out;
    std::size_t i = 0;
    while (i < tpl.size()) {
        if (tpl[i] == '{') {
            const auto end = tpl.find('}', i);
            out += values.at(tpl.substr(i + 1, end - i - 1));
            i = end + 1;
        } else {
            out += tpl[i++];
        }
    }
    return out;
}

inline std::vector<std::string> whitespace_split(const std::string& text) {
    std::istringstream is(text);
    std::vector<std::string> out;
    for (std::string tok; is >> tok;) out.push_back(tok);
    return out;
}

inline std::string code_list(const std::vector<int>& ids, const std::vector<std::string>& names) {
    std::vector<std::string> parts;
    parts.reserve(ids.size());
    for (int id : ids) parts.push_back(names.at(static_cast<std::size_t>(id)));
    return join(parts);
}

}  // namespace detail

/// Summary of visits 1..t of `patient` (t is 1-based). Pure in its arguments.
inline SummaryText synthesize(const cohort::Patient& patient, std::size_t t, const cohort::CodeVocabulary& vocab,
                              const SynthesisConfig& config) {
    if (t < 1 || t > patient.visits.size()) {
        throw DataError("synthesize: visit index " + std::to_string(t) + " out of range 1.." +
                        std::to_string(patient.visits.size()) + " for patient " + patient.id);
    }
    SummaryText out{patient.id, t, {}};
    if (config.mode == Mode::raw) {
        for (std::size_t r = 0; r < t; ++r) {
            const auto& note = patient.visits[r].note_tokens;
            out.tokens.insert(out.tokens.end(), note.begin(), note.end());
        }
    } else {
        const std::set<std::string> stop(config.note_stopwords.begin(), config.note_stopwords.end());
        std::map<int, int> dx_visits;
        std::string text;
        for (std::size_t r = 0; r < t; ++r) {
            const auto& v = patient.visits[r];
            const bool mask_rx = config.mask_final_medications && r + 1 == patient.visits.size();
            std::vector<std::string> note;
            for (const auto& tok : v.note_tokens) {
                if (!stop.count(tok)) note.push_back(tok);
            }
            for (int d : v.dx) ++dx_visits[d];
            text += detail::expand(config.visit_template,
                                   {{"index", std::to_string(r + 1)},
                                    {"dx", detail::code_list(v.dx, vocab.diagnoses)},
                                    {"rx", mask_rx ? std::string{} : detail::code_list(v.rx, vocab.medications)},
                                    {"px", detail::code_list(v.px, vocab.procedures)},
                                    {"note", detail::join(note)}});
            text += ' ';
        }
        std::vector<int> recurring;
        for (const auto& [d, n] : dx_visits) {
            if (n >= 2) recurring.push_back(d);
        }
        text += detail::expand(config.trailer_template, {{"count", std::to_string(t)},
                                                          {"recurring", detail::code_list(recurring, vocab.diagnoses)}});
        out.tokens = detail::whitespace_split(text);
    }
    // An empty history still yields a well-formed, non-empty summary.
    if (out.tokens.empty()) out.tokens.push_back("none");
    if (out.tokens.size() > config.n_max) {
        out.tokens.erase(out.tokens.begin(), out.tokens.end() - static_cast<std::ptrdiff_t>(config.n_max));
    }
    return out;
}

/// Whitespace-token vocabulary with reserved PAD (0) and UNK (1); other ids follow sorted token order.
class TokenVocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr const char* kPadToken = "<pad>";
    static constexpr const char* kUnkToken = "<unk>";

    TokenVocabulary() : tokens_{kPadToken, kUnkToken} { reindex(); }

    explicit TokenVocabulary(const std::set<std::string>& tokens) : tokens_{kPadToken, kUnkToken} {
        for (const auto& t : tokens) {
            if (t != kPadToken && t != kUnkToken) tokens_.push_back(t);
        }
        reindex();
    }

    /// Vocabulary over every summary of every visit of the given (training) patients.
    static TokenVocabulary build(const cohort::Cohort& train, const SynthesisConfig& config) {
        std::set<std::string> seen;
        for (const auto& p : train.patients) {
            for (std::size_t t = 1; t <= p.visits.size(); ++t) {
                for (auto& tok : synthesize(p, t, train.vocabulary, config).tokens) seen.insert(std::move(tok));
            }
        }
        return TokenVocabulary(seen);
    }

    std::size_t size() const { return tokens_.size(); }

    int id(const std::string& token) const {
        const auto it = index_.find(token);
        return it == index_.end() ? kUnk : it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
            throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of size " +
                                  std::to_string(tokens_.size()));
        }
        return tokens_[static_cast<std::size_t>(id)];
    }

    std::vector<int> encode(const SummaryText& text) const {
        std::vector<int> ids;
        ids.reserve(text.tokens.size());
        for (const auto& t : text.tokens) ids.push_back(id(t));
        return ids;
    }

    const std::vector<std::string>& tokens() const { return tokens_; }

    nlohmann::json to_json() const { return tokens_; }

    static TokenVocabulary from_json(const nlohmann::json& j) {
        const auto list = j.get<std::vector<std::string>>();
        if (list.size() < 2 || list[0] != kPadToken || list[1] != kUnkToken) {
            throw DataError("token vocabulary must start with <pad>, <unk>");
        }
        TokenVocabulary v;
        v.tokens_ = list;
        v.reindex();
        if (v.index_.size() != v.tokens_.size()) throw DataError("token vocabulary has duplicate entries");
        return v;
    }

    bool operator==(const TokenVocabulary& other) const { return tokens_ == other.tokens_; }

private:
    void reindex() {
        index_.clear();
        for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
    }

    std::vector<std::string> tokens_;
    std::map<std::string, int> index_;
};

/// Convenience: synthesize then encode.
inline std::vector<int> tokenize(const SummaryText& text, const TokenVocabulary& vocab) { return vocab.encode(text); }

}  // namespace reprompt::synthesis
