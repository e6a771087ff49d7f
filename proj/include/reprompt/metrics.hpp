#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace reprompt::metrics {

/// AUROC/PRAUC is undefined for the given labels (e.g. a single class).
class UndefinedMetricError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct ScoredLabels {
    std::vector<double> scores;
    std::vector<int> targets;
    std::string task;

    std::size_t positives() const {
        return static_cast<std::size_t>(std::count(targets.begin(), targets.end(), 1));
    }
    std::size_t negatives() const { return targets.size() - positives(); }

    void validate() const {
        if (scores.size() != targets.size()) {
            throw std::invalid_argument("scored labels: " + std::to_string(scores.size()) + " scores vs " +
                                        std::to_string(targets.size()) + " targets");
        }
        if (scores.empty()) throw UndefinedMetricError("scored labels: empty input");
        for (int t : targets) {
            if (t != 0 && t != 1) throw std::invalid_argument("scored labels: targets must be 0 or 1");
        }
    }
};

namespace detail {

// Indices ordered by descending score; ties keep input order.
inline std::vector<std::size_t> descending_order(const std::vector<double>& scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

}  // namespace detail

/// Probability that a random positive outranks a random negative, ties counted 1/2.
/// Rank-sum form: tied groups share their mid-rank, so the numerator is exact.
inline double auroc(const ScoredLabels& s) {
    s.validate();
    const double n_pos = static_cast<double>(s.positives());
    const double n_neg = static_cast<double>(s.negatives());
    if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("auroc: needs at least one positive and one negative");
    std::vector<std::size_t> idx(s.scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });
    // Positive rank sum counted in half-units so everything stays integral.
    long long twice_rank_sum = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && s.scores[idx[j]] == s.scores[idx[i]]) ++j;
        const long long twice_mid_rank = static_cast<long long>(i + 1 + j);  // 2 * (i+1 + j)/2
        for (std::size_t k = i; k < j; ++k) {
            if (s.targets[idx[k]] == 1) twice_rank_sum += twice_mid_rank;
        }
        i = j;
    }
    const long long np = static_cast<long long>(n_pos);
    const long long twice_u = twice_rank_sum - np * (np + 1);
    return (static_cast<double>(twice_u) / 2.0) / (n_pos * n_neg);
}

/// Average precision: sum over distinct score thresholds (descending) of
/// (recall_k - recall_{k-1}) * precision_k, predicting positive when score >= threshold.
/// Accumulated as sum(delta_tp * precision) / n_pos.
inline double prauc(const ScoredLabels& s) {
    s.validate();
    const std::size_t n_pos = s.positives();
    if (n_pos == 0) throw UndefinedMetricError("prauc: needs at least one positive");
    const auto idx = detail::descending_order(s.scores);
    std::size_t tp = 0, fp = 0, tp_prev = 0;
    double ap = 0.0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && s.scores[idx[j]] == s.scores[idx[i]]) {
            (s.targets[idx[j]] == 1 ? tp : fp) += 1;
            ++j;
        }
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += static_cast<double>(tp - tp_prev) * precision;
        tp_prev = tp;
        i = j;
    }
    return ap / static_cast<double>(n_pos);
}

struct SetMetrics {
    double micro_f1 = 0;
    double jaccard = 0;
};

/// Micro-F1 over all (patient, label) pairs and mean per-patient Jaccard.
/// 0/0 is defined as 1 for both (prediction and truth both empty).
inline SetMetrics f1_jaccard(const std::vector<std::vector<int>>& predicted, const std::vector<std::vector<int>>& truth) {
    if (predicted.size() != truth.size()) {
        throw std::invalid_argument("f1_jaccard: " + std::to_string(predicted.size()) + " predictions vs " +
                                    std::to_string(truth.size()) + " targets");
    }
    if (predicted.empty()) throw UndefinedMetricError("f1_jaccard: empty input");
    std::size_t tp = 0, fp = 0, fn = 0;
    double jaccard_total = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const std::set<int> p(predicted[i].begin(), predicted[i].end());
        const std::set<int> t(truth[i].begin(), truth[i].end());
        std::size_t inter = 0;
        for (int x : p) inter += t.count(x);
        const std::size_t uni = p.size() + t.size() - inter;
        tp += inter;
        fp += p.size() - inter;
        fn += t.size() - inter;
        jaccard_total += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    const std::size_t denom = 2 * tp + fp + fn;
    return {denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom),
            jaccard_total / static_cast<double>(predicted.size())};
}

/// Per-seed values of one metric with their population mean/std.
struct MetricSummary {
    std::vector<double> values;
    double mean = 0;
    double std = 0;
};

/// Metric name -> summary across seeds.
struct RunReport {
    std::vector<std::uint64_t> seeds;
    std::map<std::string, MetricSummary> metrics;
    std::string fingerprint;
};

/// One run = metric name -> value (all runs must name the same metrics).
inline RunReport aggregate(const std::vector<std::map<std::string, double>>& runs, std::vector<std::uint64_t> seeds = {},
                           std::string fingerprint = {}) {
    if (runs.empty()) throw std::invalid_argument("aggregate: no runs");
    RunReport report;
    report.seeds = std::move(seeds);
    report.fingerprint = std::move(fingerprint);
    for (const auto& [name, value] : runs.front()) {
        MetricSummary m;
        for (const auto& run : runs) {
            const auto it = run.find(name);
            if (it == run.end()) throw std::invalid_argument("aggregate: run missing metric '" + name + "'");
            m.values.push_back(it->second);
        }
        const double n = static_cast<double>(m.values.size());
        for (double v : m.values) m.mean += v;
        m.mean /= n;
        for (double v : m.values) m.std += (v - m.mean) * (v - m.mean);
        m.std = std::sqrt(m.std / n);
        // Mean stays inside [min, max] under rounding.
        const auto [lo, hi] = std::minmax_element(m.values.begin(), m.values.end());
        m.mean = std::clamp(m.mean, *lo, *hi);
        report.metrics.emplace(name, std::move(m));
    }
    return report;
}

inline std::string format_value(double v, int precision = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

/// A rows x columns table of values, emitted as CSV or a markdown table.
struct Table {
    std::string title;
    std::vector<std::string> header_notes;
    std::string row_label = "model";
    std::vector<std::string> columns;
    std::vector<std::pair<std::string, std::vector<double>>> rows;

    void write_csv(std::ostream& os) const {
        os << row_label;
        for (const auto& c : columns) os << ',' << c;
        os << '\n';
        for (const auto& [name, values] : rows) {
            os << name;
            for (double v : values) os << ',' << format_value(v, 6);
            os << '\n';
        }
    }

    void write_markdown(std::ostream& os) const {
        if (!title.empty()) os << "## " << title << "\n\n";
        for (const auto& note : header_notes) os << "<!-- " << note << " -->\n";
        if (!header_notes.empty()) os << '\n';
        os << "| " << row_label << " |";
        for (const auto& c : columns) os << ' ' << c << " |";
        os << "\n|---|";
        for (std::size_t i = 0; i < columns.size(); ++i) os << "---:|";
        os << '\n';
        for (const auto& [name, values] : rows) {
            os << "| " << name << " |";
            for (double v : values) os << ' ' << format_value(v, 3) << " |";
            os << '\n';
        }
    }
};

}  // namespace reprompt::metrics
