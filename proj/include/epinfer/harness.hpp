#pragma once

// Experiment runner behind the ep_harness tool: configs, result rows, the
// three experiment drivers and the analytic-versus-oracle check batteries.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "epinfer/engine.hpp"
#include "epinfer/factor_graph.hpp"

namespace epinfer {

enum class ExperimentKind { clutter, bpm, loopy };

std::string to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& name);

/// "sequential" or "random" (a fresh permutation every sweep, seeded by the
/// run seed).
Schedule parse_schedule(const std::string& name, std::uint64_t seed);

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::clutter;
    std::string id = "run";
    std::vector<std::string> methods = {"oracle", "adf", "ep", "importance"};
    EPOptions ep;
    std::string schedule = "sequential";
    std::vector<std::uint64_t> seeds = {1};
    std::filesystem::path out;
    bool timing = false;

    // clutter
    double w = 0.5;
    double x_true = 2.0;
    std::size_t n = 12;
    Index d = 1;
    double prior_variance = 100.0;
    double clutter_variance = 10.0;
    std::vector<std::size_t> sample_counts = {100, 1000, 10000};

    // bpm: empty dataset path means the built-in three-point set
    std::filesystem::path dataset;
    double slack = 0.0;
    bool bias = true;
    std::size_t truth_samples = 1'000'000;

    // loopy: a network file, or a generator ("tree", "cycle", "single")
    std::filesystem::path network;
    std::string generator = "tree";
    std::size_t tree_variables = 8;
    std::size_t max_cardinality = 4;

    void validate() const;
};

/// Fills a config from a JSON document; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& doc, ExperimentKind kind);
nlohmann::json config_to_json(const ExperimentConfig& config);

/// One line of output. checkpoint is the sweep for EP rows, 1 for ADF, the
/// sample count for importance rows and 0 for oracle rows. converged and
/// sweeps describe the whole run a checkpoint belongs to.
struct ResultRow {
    std::string experiment;
    std::uint64_t seed = 0;
    std::string method;
    std::uint64_t checkpoint = 0;
    std::uint64_t operations = 0;
    std::optional<double> wall_ms;
    std::optional<double> log_evidence;
    std::optional<double> log_evidence_error;
    std::optional<double> mean_error;
    std::optional<double> train_error;
    std::optional<double> l1_error;
    bool converged = true;
    int sweeps = 0;
};

inline constexpr const char* kResultHeader =
    "experiment,seed,method,checkpoint,operations,wall_ms,log_evidence,log_evidence_error,"
    "mean_error,train_error,l1_error,converged,sweeps";

std::vector<ResultRow> run_clutter_experiment(const ExperimentConfig& config);
std::vector<ResultRow> run_bpm_experiment(const ExperimentConfig& config);
std::vector<ResultRow> run_loopy_experiment(const ExperimentConfig& config);
std::vector<ResultRow> run_experiment(const ExperimentConfig& config);

/// CSV text with kResultHeader; unavailable metrics are written as NA.
std::string rows_to_csv(const std::vector<ResultRow>& rows);

/// Writes the CSV to config.out and the metadata sidecar next to it
/// (<out>.meta.json).
void write_results(const ExperimentConfig& config, const std::vector<ResultRow>& rows);

// Networks used by the loopy experiment and the tests.
DiscreteFactorGraph random_tree_network(std::uint64_t seed, std::size_t max_variables,
                                        std::size_t max_cardinality);
/// Three binary variables in a ring, each edge preferring disagreement.
DiscreteFactorGraph frustrated_cycle(double coupling = 2.0);
DiscreteFactorGraph single_factor_network();

struct CheckResult {
    std::string name;
    std::size_t cases = 0;
    double max_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

/// Analytic fast paths against brute-force oracles on random inputs.
std::vector<CheckResult> run_oracle_checks(std::uint64_t seed, std::size_t cases = 200);
std::string checks_table(const std::vector<CheckResult>& checks);

}  // namespace epinfer
