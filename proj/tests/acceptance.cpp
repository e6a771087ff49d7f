// Acceptance suite: one pass/fail line per criterion.
//
//   acceptance               run every criterion
//   acceptance --criterion N run criterion N only (exit code 0 on pass)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "reprompt/experiment.hpp"
#include "support/gradcheck.hpp"
#include "support/tiny_model.hpp"

using namespace reprompt;
namespace ex = reprompt::experiment;
namespace fs = std::filesystem;
using numerics::Tensor;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradRelTol = 1e-4;
constexpr double kGradEps = 1e-5;
constexpr double kGradBudgetSeconds = 60.0;
constexpr std::size_t kFrozenSteps = 200;
constexpr double kAlphaSumTol = 1e-9;
constexpr std::size_t kAttentionCohort = 500;
constexpr std::size_t kOracleInstances = 100;
constexpr std::size_t kOracleMaxN = 200;
constexpr std::size_t kRandomPraucN = 100000;
constexpr double kRandomPraucTol = 0.02;
constexpr double kLearnFloor = 0.80;
constexpr double kOracleGap = 0.10;
constexpr double kLearnBudgetSeconds = 600.0;
constexpr double kAblationMargin = 0.02;
constexpr double kRecurrenceMargin = 0.10;
constexpr double kEncoderMargin = 0.02;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) { return metrics::format_value(v, 4); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path work_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "reprompt_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// The relative experiments run the configurations shipped in configs/.
ex::ExperimentConfig shipped(const std::string& file) {
    return ex::load_config_file((fs::path(REPROMPT_CONFIG_DIR) / file).string());
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

// --- 1 ------------------------------------------------------------------------------------

Outcome gradient_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = testing::tiny_model_config();
    const auto m = testing::tiny_model(cfg, 11);
    const auto p = testing::tiny_cohort().patients[0];
    const std::size_t n_tokens = m->summary_ids(p, p.visits.size()).size();
    if (cfg.d_model != 8 || cfg.d_enc != 6 || cfg.prompt_len != 2 || p.visits.size() != 2 || n_tokens != 5) {
        return {false, "tiny configuration drifted from D=8, d_enc=6, P=2, 2 visits, N=5"};
    }
    const auto params = m->trainable_parameters();
    const auto res = testing::grad_check([&] { return m->loss(p); }, params, kGradEps);
    const double elapsed = seconds_since(t0);
    std::size_t scalars = 0;
    for (const auto& [n, t] : params) scalars += t.size();
    const bool ok = res.max_rel_error < kGradRelTol && res.checked == scalars && elapsed < kGradBudgetSeconds;
    return {ok, std::to_string(res.checked) + " scalars, max rel error " + std::to_string(res.max_rel_error) +
                    " (worst " + res.worst + "), " + fmt(elapsed) + " s"};
}

// --- 2 ------------------------------------------------------------------------------------

Outcome frozen_contract() {
    cohort::GeneratorConfig gc;
    gc.n_patients = 400;
    const auto data = cohort::generate_cohort(gc);
    model::ModelConfig mc;
    auto tokens = synthesis::TokenVocabulary::build(data, mc.effective_synthesis());
    model::RePrompT m(mc, data.vocabulary, std::move(tokens), 0);

    std::set<std::string> names;
    for (const auto& [n, t] : m.trainable_parameters()) {
        if (!t.requires_grad()) return {false, n + " is trainable but does not require grad"};
        names.insert(n);
    }
    std::set<std::string> expected;
    for (const auto& [n, t] : m.encoder()->named_parameters()) expected.insert(n);
    expected.insert({"recur.w_t", "recur.b_t", "head.w_out", "head.b_out"});
    if (names != expected) return {false, "trainable set differs from encoder + w_t/b_t + head"};
    for (const auto& [n, t] : m.frozen_parameters()) {
        if (t.requires_grad()) return {false, "frozen tensor " + n + " requires grad"};
    }

    const auto before = m.frozen().compute_hash();
    auto opt = model::make_optimizer(m, {});
    model::TrainConfig tc;
    tc.epochs = 100;
    tc.max_steps = kFrozenSteps;
    const auto r = model::train(m, opt, data, tc);
    const auto after = m.frozen().compute_hash();
    const bool ok = r.steps == kFrozenSteps && before == after && after == m.frozen().recorded_hash();
    return {ok, std::to_string(r.steps) + " steps, hash " + numerics::hex64(before) + " -> " + numerics::hex64(after) +
                    ", " + std::to_string(names.size()) + " trainable tensors"};
}

// --- 3 ------------------------------------------------------------------------------------

Outcome shape_contract() {
    cohort::GeneratorConfig gc;
    gc.n_patients = 60;
    const auto data = cohort::generate_cohort(gc);
    numerics::Rng rng(3);
    std::size_t checks = 0;
    for (std::size_t p : {1u, 4u, 10u}) {
        for (int trial = 0; trial < 6; ++trial) {
            model::ModelConfig mc;
            mc.prompt_len = p;
            mc.synthesis.n_max = 1 + rng.index(128);
            auto tokens = synthesis::TokenVocabulary::build(data, mc.effective_synthesis());
            for (bool sr : {true, false}) {
                for (bool se : {true, false}) {
                    mc.state_recurrent = sr;
                    mc.struct_encoded = se;
                    model::RePrompT m(mc, data.vocabulary, tokens, 0);
                    numerics::NoGradGuard no_grad;
                    const auto& patient = data.patients[rng.index(data.patients.size())];
                    const std::size_t t = 1 + rng.index(patient.visits.size());
                    const Tensor g = m.recur(Tensor::zeros({mc.d_model}));
                    const Tensor s = se ? m.encoder()->encode(patient, t).prompt : m.constant_struct_prompt();
                    const auto ids = m.summary_ids(patient, t);
                    const std::size_t rows = m.frozen().forward(m.assemble_prompt(g, s), ids).rows();
                    if (ids.empty() || ids.size() > mc.synthesis.n_max || rows != 2 * p + ids.size()) {
                        return {false, "P=" + std::to_string(p) + " N=" + std::to_string(ids.size()) + " gave " +
                                           std::to_string(rows) + " rows"};
                    }
                    ++checks;
                }
            }
        }
    }
    return {true, std::to_string(checks) + " (P, N, arm) combinations give 2P+N rows"};
}

// --- 4 ------------------------------------------------------------------------------------

Outcome attention_laws() {
    cohort::GeneratorConfig gc;
    gc.n_patients = kAttentionCohort;
    gc.seed = 4;
    const auto data = cohort::generate_cohort(gc);
    encoders::EncoderConfig ec;
    ec.prompt_len = 10;
    ec.d_model = 64;
    numerics::Rng rng(4);
    const auto encoder = encoders::make_encoder(ec, data.vocabulary, rng);
    const auto& retain = dynamic_cast<const encoders::RetainEncoder&>(*encoder);
    double worst_sum = 0, worst_beta = 0;
    for (const auto& p : data.patients) {
        numerics::NoGradGuard no_grad;
        const auto att = retain.attention(p, p.visits.size());
        double sum = 0;
        for (double a : att.alphas.data()) sum += a;
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
        for (double b : att.betas.data()) worst_beta = std::max(worst_beta, std::abs(b));
    }
    const bool ok = worst_sum <= kAlphaSumTol && worst_beta < 1.0;
    return {ok, std::to_string(data.patients.size()) + " patients, max |sum(alpha)-1| = " + std::to_string(worst_sum) +
                    ", max |beta| = " + std::to_string(worst_beta)};
}

// --- 5 ------------------------------------------------------------------------------------

double pairwise_auroc(const metrics::ScoredLabels& s) {
    double num = 0, pairs = 0;
    for (std::size_t i = 0; i < s.scores.size(); ++i) {
        if (s.targets[i] != 1) continue;
        for (std::size_t j = 0; j < s.scores.size(); ++j) {
            if (s.targets[j] != 0) continue;
            pairs += 1;
            num += s.scores[i] > s.scores[j] ? 1.0 : (s.scores[i] == s.scores[j] ? 0.5 : 0.0);
        }
    }
    return num / pairs;
}

// Sweeps every distinct score as a threshold (positive when score >= threshold).
double threshold_sweep_ap(const metrics::ScoredLabels& s) {
    std::vector<double> thresholds(s.scores.begin(), s.scores.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    double n_pos = 0;
    for (int y : s.targets) n_pos += y;
    double ap = 0, tp_prev = 0;
    for (double th : thresholds) {
        double tp = 0, fp = 0;
        for (std::size_t i = 0; i < s.scores.size(); ++i) {
            if (s.scores[i] >= th) (s.targets[i] ? tp : fp) += 1;
        }
        ap += (tp - tp_prev) * (tp / (tp + fp));
        tp_prev = tp;
    }
    return ap / n_pos;
}

Outcome metric_oracles() {
    numerics::Rng rng(5);
    std::size_t mismatches = 0;
    for (std::size_t k = 0; k < kOracleInstances; ++k) {
        metrics::ScoredLabels s;
        const std::size_t n = 2 + rng.index(kOracleMaxN - 1);
        // Coarse scores force ties.
        const int levels = 1 + static_cast<int>(rng.index(20));
        for (std::size_t i = 0; i < n; ++i) {
            s.scores.push_back(static_cast<double>(rng.index(static_cast<std::size_t>(levels))) / levels);
            s.targets.push_back(rng.bernoulli(0.4) ? 1 : 0);
        }
        s.targets[0] = 1;
        s.targets[1] = 0;
        if (metrics::auroc(s) != pairwise_auroc(s)) ++mismatches;
        if (metrics::prauc(s) != threshold_sweep_ap(s)) ++mismatches;
    }
    metrics::ScoredLabels big;
    const double prevalence = 0.3;
    for (std::size_t i = 0; i < kRandomPraucN; ++i) {
        big.scores.push_back(rng.uniform());
        big.targets.push_back(rng.bernoulli(prevalence) ? 1 : 0);
    }
    const double observed = static_cast<double>(big.positives()) / static_cast<double>(kRandomPraucN);
    const double ap = metrics::prauc(big);
    const bool ok = mismatches == 0 && std::abs(ap - observed) <= kRandomPraucTol;
    return {ok, std::to_string(kOracleInstances) + " instances, " + std::to_string(mismatches) +
                    " mismatches; random PRAUC " + fmt(ap) + " vs prevalence " + fmt(observed)};
}

// --- 6 ------------------------------------------------------------------------------------

Outcome planted_signal_learning() {
    const auto t0 = std::chrono::steady_clock::now();
    ex::ExperimentConfig cfg;
    cfg.name = "planted";
    cfg.data.generator.n_patients = 2000;
    cfg.seeds = {0, 1, 2};
    const auto out = ex::run(cfg, work_dir("c6"), &std::cerr);
    const double elapsed = seconds_since(t0);
    const double auroc = out.report.metrics.at("auroc").mean;
    const double oracle = out.report.metrics.at("oracle_auroc").mean;
    const bool ok = auroc >= kLearnFloor && auroc >= oracle - kOracleGap && elapsed < kLearnBudgetSeconds;
    return {ok, "mean AUROC " + fmt(auroc) + " (oracle " + fmt(oracle) + "), " + fmt(elapsed) + " s"};
}

// --- 7 ------------------------------------------------------------------------------------

ex::ExperimentConfig ablation_config() {
    ex::ExperimentConfig cfg = shipped("ablation.cfg");
    cfg.arms = {"full", "no_state", "no_struct", "no_both"};
    return cfg;
}

Outcome ablation_ordering() {
    const auto cmp = ex::run_ablation(ablation_config(), work_dir("c7"), &std::cerr);
    const double full = cmp.mean("full", "auroc");
    const double no_state = cmp.mean("no_state", "auroc");
    const double no_struct = cmp.mean("no_struct", "auroc");
    const double no_both = cmp.mean("no_both", "auroc");
    const bool ok = full >= no_state + kAblationMargin && full >= no_struct + kAblationMargin &&
                    no_state + kAblationMargin >= no_both && no_struct + kAblationMargin >= no_both;
    return {ok, "full " + fmt(full) + ", no_state " + fmt(no_state) + ", no_struct " + fmt(no_struct) + ", no_both " +
                    fmt(no_both)};
}

// --- 8 ------------------------------------------------------------------------------------

ex::ExperimentConfig history_config() {
    ex::ExperimentConfig cfg = shipped("history.cfg");
    cfg.arms = {"no_struct", "no_both"};
    return cfg;
}

Outcome recurrence_carries_history() {
    const auto cmp = ex::run_ablation(history_config(), work_dir("c8"), &std::cerr);
    const double recurrent = cmp.mean("no_struct", "auroc");
    const double none = cmp.mean("no_both", "auroc");
    return {recurrent >= none + kRecurrenceMargin,
            "state-recurrent " + fmt(recurrent) + " vs no modules " + fmt(none)};
}

// --- 9 ------------------------------------------------------------------------------------

ex::ExperimentConfig order_config() {
    ex::ExperimentConfig cfg = shipped("encoders.cfg");
    cfg.encoders = {encoders::EncoderKind::retain, encoders::EncoderKind::lstm, encoders::EncoderKind::transformer};
    return cfg;
}

Outcome encoder_sweep() {
    const fs::path dir = work_dir("c9");
    const auto cmp = ex::run_encoder_sweep(order_config(), dir, &std::cerr);
    const double retain = cmp.mean("retain", "auroc");
    const double transformer = cmp.mean("transformer", "auroc");
    const double lstm = cmp.mean("lstm", "auroc");
    // The emitted CSV must hold three encoder rows that all name the same data.
    std::ifstream csv(dir / "encoders.csv");
    std::string line;
    std::vector<std::string> rows;
    std::set<std::string> fingerprints;
    while (std::getline(csv, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("encoder,", 0) == 0) continue;
        rows.push_back(line);
        const auto a = line.find(',');
        fingerprints.insert(line.substr(a + 1, line.find(',', a + 1) - a - 1));
    }
    const bool ok = retain >= transformer + kEncoderMargin && rows.size() == 3 && fingerprints.size() == 1;
    return {ok, "retain " + fmt(retain) + ", lstm " + fmt(lstm) + ", transformer " + fmt(transformer) + "; " +
                    std::to_string(rows.size()) + " CSV rows, " + std::to_string(fingerprints.size()) +
                    " data fingerprint(s)"};
}

// --- 10 -----------------------------------------------------------------------------------

Outcome determinism() {
    ex::ExperimentConfig cfg;
    cfg.name = "determinism";
    cfg.data.generator.n_patients = 300;
    cfg.train.epochs = 2;
    cfg.seeds = {0, 1};
    const auto a = ex::run(cfg, work_dir("c10a"));
    const auto b = ex::run(cfg, work_dir("c10b"));
    std::size_t files = 0, identical = 0;
    for (const auto& rel : {"seed_0/metrics.csv", "seed_1/metrics.csv", "report.csv", "report.md",
                            "seed_0/trace.jsonl", "seed_0/model.ckpt"}) {
        ++files;
        const auto x = slurp(a.dir / rel), y = slurp(b.dir / rel);
        if (!x.empty() && x == y) ++identical;
    }
    return {identical == files, std::to_string(identical) + "/" + std::to_string(files) + " artifacts bit-identical"};
}

// --- 11 -----------------------------------------------------------------------------------

Outcome medication_task() {
    const ex::ExperimentConfig cfg = shipped("medication.cfg");
    const auto out = ex::run(cfg, work_dir("c11"), &std::cerr);
    const auto& m = out.report.metrics;
    const double f1 = m.at("micro_f1").mean, jac = m.at("jaccard").mean;
    const double e_f1 = m.at("empty_micro_f1").mean, e_jac = m.at("empty_jaccard").mean;
    const double k_f1 = m.at("topk_micro_f1").mean, k_jac = m.at("topk_jaccard").mean;
    const bool ok = f1 > e_f1 && f1 > k_f1 && jac > e_jac && jac > k_jac;
    return {ok, "F1 " + fmt(f1) + " (empty " + fmt(e_f1) + ", top-k " + fmt(k_f1) + "), Jaccard " + fmt(jac) +
                    " (empty " + fmt(e_jac) + ", top-k " + fmt(k_jac) + ")"};
}

struct Criterion {
    int id;
    std::string name;
    std::function<Outcome()> check;
};

const std::vector<Criterion>& criteria() {
    static const std::vector<Criterion> all = {
        {1, "gradient correctness", gradient_correctness},
        {2, "frozen contract", frozen_contract},
        {3, "shape contract", shape_contract},
        {4, "attention laws", attention_laws},
        {5, "metric oracles", metric_oracles},
        {6, "planted-signal learning", planted_signal_learning},
        {7, "ablation ordering", ablation_ordering},
        {8, "recurrence carries history", recurrence_carries_history},
        {9, "encoder sweep", encoder_sweep},
        {10, "determinism", determinism},
        {11, "medication task", medication_task},
    };
    return all;
}

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--criterion" && i + 1 < argc) {
            only = std::atoi(argv[++i]);
        } else {
            std::cerr << "usage: acceptance [--criterion N]\n";
            return 2;
        }
    }
    bool all_pass = true;
    bool ran = false;
    for (const auto& c : criteria()) {
        if (only && c.id != only) continue;
        ran = true;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all_pass = all_pass && o.pass;
        std::cout << "criterion " << c.id << " [" << (o.pass ? "PASS" : "FAIL") << "] " << c.name << ": " << o.detail
                  << " (" << fmt(seconds_since(t0)) << " s)" << std::endl;
    }
    if (!ran) {
        std::cerr << "unknown criterion " << only << "\n";
        return 2;
    }
    return all_pass ? 0 : 1;
}
