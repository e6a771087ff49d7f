// Command-line driver: generate | run | ablate | sweep-encoders | time.
//
// Exit codes: 0 success, 1 configuration error, 2 data or runtime error.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "reprompt/experiment.hpp"

namespace ex = reprompt::experiment;
namespace fs = std::filesystem;

namespace {

struct CommonOptions {
    std::string config_file;
    std::vector<std::string> overrides;
    std::string out;
    std::string name;
    std::string task;
    std::string seeds;
    std::string generate;
    std::string data;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("-c,--config", o.config_file, "Experiment config file (key = value, [sections])");
    cmd->add_option("-s,--set", o.overrides, "Override a config key, e.g. --set train.lr=5e-4")->take_all();
    cmd->add_option("-o,--out", o.out, "Output root (default: $REPROMPT_OUT or ./runs)");
    cmd->add_option("--name", o.name, "Experiment name (subdirectory of the output root)");
    cmd->add_option("--task", o.task, "readmission | mortality | medication");
    cmd->add_option("--seeds", o.seeds, "Comma-separated seed list");
    cmd->add_option("--generate", o.generate, "Generator settings, e.g. n=2000,profile=standard");
    cmd->add_option("--data", o.data, "Load the cohort from a JSONL file instead of generating it");
}

// "n=2000,profile=order,visit_count_weights=0.5,0.5" -> data.* settings.
void apply_generate(ex::ExperimentConfig& cfg, const std::string& settings) {
    std::vector<std::string> parts;
    for (const auto& piece : ex::detail::split_list(settings)) {
        if (piece.find('=') == std::string::npos && !parts.empty()) {
            parts.back() += "," + piece;
        } else {
            parts.push_back(piece);
        }
    }
    cfg.data.source = "generate";
    for (const auto& p : parts) {
        const auto eq = p.find('=');
        if (eq == std::string::npos) throw reprompt::ConfigError("--generate entry '" + p + "' must be key=value");
        ex::apply_setting(cfg, "data." + p.substr(0, eq), p.substr(eq + 1));
    }
}

ex::ExperimentConfig build_config(const CommonOptions& o) {
    ex::ExperimentConfig cfg = o.config_file.empty() ? ex::ExperimentConfig{} : ex::load_config_file(o.config_file);
    if (!o.name.empty()) cfg.name = o.name;
    if (!o.task.empty()) ex::apply_setting(cfg, "experiment.task", o.task);
    if (!o.seeds.empty()) ex::apply_setting(cfg, "experiment.seeds", o.seeds);
    if (!o.generate.empty()) apply_generate(cfg, o.generate);
    if (!o.data.empty()) {
        cfg.data.source = "jsonl";
        cfg.data.path = o.data;
    }
    for (const auto& kv : o.overrides) ex::apply_override(cfg, kv);
    if (!o.out.empty()) cfg.output = o.out;
    cfg.validate();
    return cfg;
}

fs::path experiment_dir(const ex::ExperimentConfig& cfg) {
    const fs::path dir = ex::output_root(cfg) / cfg.name;
    fs::create_directories(dir);
    nlohmann::ordered_json j = {{"fingerprint", cfg.fingerprint()}, {"config", cfg.to_json()}};
    ex::detail::write_file(dir / "config.json", j.dump(2) + "\n");
    return dir;
}

void print_report(const ex::RunOutcome& r) {
    std::cout << "config " << r.config_fingerprint << " data " << r.data_fingerprint << '\n';
    for (const auto& [name, s] : r.report.metrics) {
        std::cout << "  " << name << " mean " << reprompt::metrics::format_value(s.mean) << " std "
                  << reprompt::metrics::format_value(s.std) << '\n';
    }
}

void print_comparison(const ex::Comparison& c) {
    std::cout << "data " << c.data_fingerprint << '\n';
    for (const auto& row : c.rows) {
        std::cout << "  " << row.name;
        for (const auto& [name, s] : row.outcome.report.metrics) {
            std::cout << ' ' << name << '=' << reprompt::metrics::format_value(s.mean);
        }
        std::cout << '\n';
    }
}

void write_timing(const fs::path& dir, const ex::Timing& t) {
    ex::detail::write_file(dir / "timing.csv", t.to_csv());
    std::cout << "timing: median " << t.median << " s per batch of " << t.batch_size << " (std " << t.std << ", "
              << t.batches << " batches)\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Recurrent soft-prompt tuning over a frozen language model for longitudinal EHR prediction"};
    app.require_subcommand(1);

    CommonOptions gen_o, run_o, abl_o, sweep_o, time_o;
    std::string cohort_out;
    auto* gen = app.add_subcommand("generate", "Generate a synthetic cohort and write it as JSONL");
    add_common(gen, gen_o);
    gen->add_option("--output", cohort_out, "Cohort file (default: <out>/<name>/cohort.jsonl)");
    auto* run = app.add_subcommand("run", "Train and evaluate one configuration over all seeds");
    add_common(run, run_o);
    auto* ablate = app.add_subcommand("ablate", "Run the module ablation matrix");
    add_common(ablate, abl_o);
    auto* sweep = app.add_subcommand("sweep-encoders", "Swap the structured encoder (retain, lstm, transformer)");
    add_common(sweep, sweep_o);
    auto* timer = app.add_subcommand("time", "Time forward passes over batches of patients");
    add_common(timer, time_o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*gen) {
            const auto cfg = build_config(gen_o);
            if (cfg.data.source != "generate") throw reprompt::ConfigError("generate needs generator settings, not --data");
            const auto cohort = reprompt::cohort::generate_cohort(cfg.data.generator);
            const fs::path path = cohort_out.empty() ? experiment_dir(cfg) / "cohort.jsonl" : fs::path(cohort_out);
            if (path.has_parent_path()) fs::create_directories(path.parent_path());
            reprompt::cohort::save_jsonl(cohort, path.string());
            std::cout << "wrote " << cohort.patients.size() << " patients to " << path.string() << " (fingerprint "
                      << ex::data_fingerprint(cohort) << ")\n";
        } else if (*run) {
            const auto cfg = build_config(run_o);
            const auto dir = experiment_dir(cfg);
            const auto outcome = ex::run(cfg, dir, &std::cerr);
            print_report(outcome);
            write_timing(dir, ex::time_config(cfg));
        } else if (*ablate) {
            const auto cfg = build_config(abl_o);
            print_comparison(ex::run_ablation(cfg, experiment_dir(cfg), &std::cerr));
        } else if (*sweep) {
            const auto cfg = build_config(sweep_o);
            print_comparison(ex::run_encoder_sweep(cfg, experiment_dir(cfg), &std::cerr));
        } else if (*timer) {
            const auto cfg = build_config(time_o);
            write_timing(experiment_dir(cfg), ex::time_config(cfg));
        }
    } catch (const reprompt::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const reprompt::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << " (try a lower train.lr)\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
