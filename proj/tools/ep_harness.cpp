// ep_harness: runs clutter, bpm and loopy experiments and the oracle-check
// batteries. Exit codes: 0 success, 1 validation error, 2 oracle check failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <regex>
#include <string>

#include <CLI11.hpp>

#include "epinfer/harness.hpp"

namespace {

using epinfer::Error;
using epinfer::ExperimentConfig;
using epinfer::ExperimentKind;

struct Overrides {
    std::string config;
    std::string out;
    std::string seed_range;
    std::optional<double> tolerance;
    std::optional<int> max_sweeps;
    std::optional<double> damping;
    std::optional<std::string> schedule;
    bool timing = false;
};

std::vector<std::uint64_t> parse_seed_range(const std::string& text) {
    static const std::regex pattern(R"(^\s*(\d+)\s*\.\.\s*(\d+)\s*$)");
    std::smatch m;
    if (!std::regex_match(text, m, pattern)) {
        throw Error("seed range must look like a..b, got '" + text + "'");
    }
    const std::uint64_t a = std::stoull(m[1]);
    const std::uint64_t b = std::stoull(m[2]);
    if (b < a) throw Error("seed range " + text + " is empty");
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t s = a; s <= b; ++s) seeds.push_back(s);
    return seeds;
}

ExperimentConfig build_config(ExperimentKind kind, const Overrides& o) {
    ExperimentConfig config;
    config.kind = kind;
    if (kind == ExperimentKind::loopy) config.methods = {"oracle", "adf", "ep"};
    if (!o.config.empty()) {
        std::ifstream in(o.config);
        if (!in) throw Error("cannot read config " + o.config);
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw Error("cannot parse config " + o.config + ": " + e.what());
        }
        config = epinfer::config_from_json(doc, kind);
        // Data paths are relative to the config file.
        const auto base = std::filesystem::path(o.config).parent_path();
        if (!config.dataset.empty() && config.dataset.is_relative()) {
            config.dataset = base / config.dataset;
        }
        if (!config.network.empty() && config.network.is_relative()) {
            config.network = base / config.network;
        }
    }
    if (!o.out.empty()) config.out = o.out;
    if (!o.seed_range.empty()) config.seeds = parse_seed_range(o.seed_range);
    if (o.tolerance) config.ep.tolerance = *o.tolerance;
    if (o.max_sweeps) config.ep.max_sweeps = *o.max_sweeps;
    if (o.damping) config.ep.damping = *o.damping;
    if (o.schedule) config.schedule = *o.schedule;
    if (o.timing) config.timing = true;
    if (config.out.empty()) config.out = epinfer::to_string(kind) + ".csv";
    config.validate();
    return config;
}

void add_common_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "JSON experiment config");
    cmd->add_option("--out", o.out, "output CSV path (sidecar written to <out>.meta.json)");
    cmd->add_option("--seed-range", o.seed_range, "inclusive seed range a..b");
    cmd->add_option("--tolerance", o.tolerance, "EP convergence tolerance");
    cmd->add_option("--max-sweeps", o.max_sweeps, "EP sweep limit");
    cmd->add_option("--damping", o.damping, "EP damping in (0, 1]");
    cmd->add_option("--schedule", o.schedule, "sequential or random");
    cmd->add_flag("--timing", o.timing, "record wall time (output is no longer byte-stable)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EP / ADF experiment harness"};
    app.require_subcommand(1);

    Overrides clutter_opts, bpm_opts, loopy_opts;
    auto* clutter = app.add_subcommand("clutter", "clutter problem: exact, ADF, EP, importance");
    add_common_flags(clutter, clutter_opts);
    auto* bpm = app.add_subcommand("bpm", "Bayes Point Machine against a sampled Bayes point");
    add_common_flags(bpm, bpm_opts);
    auto* loopy = app.add_subcommand("loopy", "discrete networks: Boyen-Koller and loopy EP");
    add_common_flags(loopy, loopy_opts);

    std::uint64_t check_seed = 2024;
    std::size_t check_cases = 200;
    auto* check = app.add_subcommand("oracle-check", "analytic updates against oracles");
    check->add_option("--seed", check_seed, "seed for the random batteries");
    check->add_option("--cases", check_cases, "random cases per moment-matching battery");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (check->parsed()) {
            const auto results = epinfer::run_oracle_checks(check_seed, check_cases);
            std::cout << epinfer::checks_table(results);
            for (const auto& r : results) {
                if (!r.passed) return 2;
            }
            return 0;
        }
        ExperimentKind kind = ExperimentKind::clutter;
        const Overrides* o = &clutter_opts;
        if (bpm->parsed()) {
            kind = ExperimentKind::bpm;
            o = &bpm_opts;
        } else if (loopy->parsed()) {
            kind = ExperimentKind::loopy;
            o = &loopy_opts;
        }
        const auto config = build_config(kind, *o);
        const auto rows = epinfer::run_experiment(config);
        epinfer::write_results(config, rows);
        std::cout << "wrote " << rows.size() << " rows to " << config.out.string() << '\n';
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
