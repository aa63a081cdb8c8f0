#include "epinfer/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "epinfer/bpm.hpp"
#include "epinfer/clutter.hpp"
#include "epinfer/oracles.hpp"
#include "epinfer/special.hpp"

#ifndef EPINFER_VERSION
#define EPINFER_VERSION "0.0.0"
#endif

namespace epinfer {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

bool wants(const ExperimentConfig& c, const std::string& method) {
    return std::find(c.methods.begin(), c.methods.end(), method) != c.methods.end();
}

EPOptions run_options(const ExperimentConfig& c, std::uint64_t seed) {
    EPOptions opts = c.ep;
    opts.schedule = parse_schedule(c.schedule, seed);
    return opts;
}

// Distinct deterministic stream for each (seed, purpose) pair.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + salt;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::string format_number(double x) {
    if (std::isnan(x)) return "NaN";
    if (std::isinf(x)) return x > 0 ? "Inf" : "-Inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string format_optional(const std::optional<double>& x) {
    return x ? format_number(*x) : "NA";
}

// Cost of one importance sample: d normal draws and n likelihood terms of
// about three vector operations each.
std::uint64_t importance_ops(std::size_t samples, std::size_t n, Index d) {
    return static_cast<std::uint64_t>(samples) *
           (static_cast<std::uint64_t>(d) + n * (3 * static_cast<std::uint64_t>(d) + 2));
}

double relative_error(double a, double b) { return std::abs(a - b) / std::abs(b); }

double vector_error(const Vector& a, const Vector& b, double scale) {
    return (a - b).norm() / std::max(b.norm(), scale);
}

}  // namespace

std::string to_string(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::clutter: return "clutter";
        case ExperimentKind::bpm: return "bpm";
        case ExperimentKind::loopy: return "loopy";
    }
    return "unknown";
}

ExperimentKind parse_experiment_kind(const std::string& name) {
    if (name == "clutter") return ExperimentKind::clutter;
    if (name == "bpm") return ExperimentKind::bpm;
    if (name == "loopy") return ExperimentKind::loopy;
    throw Error("unknown experiment kind '" + name + "'");
}

Schedule parse_schedule(const std::string& name, std::uint64_t seed) {
    if (name == "sequential") return Sequential{};
    if (name == "random") return RandomPermutation{stream_seed(seed, 17)};
    throw Error("unknown schedule '" + name + "' (expected sequential or random)");
}

void ExperimentConfig::validate() const {
    ep.validate();
    parse_schedule(schedule, 0);
    if (methods.empty()) throw Error("config needs at least one method");
    if (seeds.empty()) throw Error("config needs at least one seed");
    static const std::set<std::string> known = {"oracle", "adf", "ep", "importance"};
    for (const auto& m : methods) {
        if (!known.count(m)) throw Error("unknown method '" + m + "'");
    }
    switch (kind) {
        case ExperimentKind::clutter:
            if (d < 1) throw Error("d must be positive");
            if (!(w >= 0.0 && w <= 1.0)) throw Error("w must lie in [0, 1]");
            if (!(prior_variance > 0.0 && clutter_variance > 0.0)) {
                throw Error("variances must be positive");
            }
            if (wants(*this, "oracle") && n > kMaxExactClutterSize) {
                throw Error("exact oracle needs n <= " + std::to_string(kMaxExactClutterSize) +
                            "; drop the oracle method or use importance sampling");
            }
            break;
        case ExperimentKind::bpm:
            if (!(slack >= 0.0)) throw Error("slack must be >= 0");
            if (truth_samples < 1) throw Error("truth_samples must be positive");
            break;
        case ExperimentKind::loopy:
            if (network.empty() && generator != "tree" && generator != "cycle" &&
                generator != "single") {
                throw Error("unknown network generator '" + generator + "'");
            }
            if (tree_variables < 1 || max_cardinality < 2) {
                throw Error("tree generator needs >= 1 variable and cardinality >= 2");
            }
            break;
    }
    for (std::size_t s : sample_counts) {
        if (s < 1) throw Error("sample counts must be positive");
    }
}

ExperimentConfig config_from_json(const nlohmann::json& doc, ExperimentKind kind) {
    if (!doc.is_object()) throw Error("config must be a JSON object");
    ExperimentConfig c;
    c.kind = kind;
    if (doc.contains("kind") && parse_experiment_kind(doc.at("kind")) != kind) {
        throw Error("config kind '" + doc.at("kind").get<std::string>() +
                    "' does not match subcommand '" + to_string(kind) + "'");
    }
    if (kind == ExperimentKind::loopy) c.methods = {"oracle", "adf", "ep"};
    try {
        for (const auto& [key, value] : doc.items()) {
            if (key == "kind") continue;
            else if (key == "id") c.id = value.get<std::string>();
            else if (key == "methods") c.methods = value.get<std::vector<std::string>>();
            else if (key == "tolerance") c.ep.tolerance = value.get<double>();
            else if (key == "max_sweeps") c.ep.max_sweeps = value.get<int>();
            else if (key == "damping") c.ep.damping = value.get<double>();
            else if (key == "skip_improper_cavity") c.ep.skip_improper_cavity = value.get<bool>();
            else if (key == "schedule") c.schedule = value.get<std::string>();
            else if (key == "seeds") c.seeds = value.get<std::vector<std::uint64_t>>();
            else if (key == "out") c.out = value.get<std::string>();
            else if (key == "timing") c.timing = value.get<bool>();
            else if (key == "w") c.w = value.get<double>();
            else if (key == "x_true") c.x_true = value.get<double>();
            else if (key == "n") c.n = value.get<std::size_t>();
            else if (key == "d") c.d = value.get<Index>();
            else if (key == "prior_variance") c.prior_variance = value.get<double>();
            else if (key == "clutter_variance") c.clutter_variance = value.get<double>();
            else if (key == "sample_counts") c.sample_counts = value.get<std::vector<std::size_t>>();
            else if (key == "dataset") c.dataset = value.get<std::string>();
            else if (key == "slack") c.slack = value.get<double>();
            else if (key == "bias") c.bias = value.get<bool>();
            else if (key == "truth_samples") c.truth_samples = value.get<std::size_t>();
            else if (key == "network") c.network = value.get<std::string>();
            else if (key == "generator") c.generator = value.get<std::string>();
            else if (key == "tree_variables") c.tree_variables = value.get<std::size_t>();
            else if (key == "max_cardinality") c.max_cardinality = value.get<std::size_t>();
            else throw Error("unknown config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("bad config value: ") + e.what());
    }
    return c;
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j = {{"kind", to_string(c.kind)},
                        {"id", c.id},
                        {"methods", c.methods},
                        {"tolerance", c.ep.tolerance},
                        {"max_sweeps", c.ep.max_sweeps},
                        {"damping", c.ep.damping},
                        {"skip_improper_cavity", c.ep.skip_improper_cavity},
                        {"schedule", c.schedule},
                        {"seeds", c.seeds},
                        {"out", c.out.string()},
                        {"timing", c.timing}};
    switch (c.kind) {
        case ExperimentKind::clutter:
            j.update({{"w", c.w},
                      {"x_true", c.x_true},
                      {"n", c.n},
                      {"d", c.d},
                      {"prior_variance", c.prior_variance},
                      {"clutter_variance", c.clutter_variance},
                      {"sample_counts", c.sample_counts}});
            break;
        case ExperimentKind::bpm:
            j.update({{"dataset", c.dataset.string()},
                      {"slack", c.slack},
                      {"bias", c.bias},
                      {"truth_samples", c.truth_samples},
                      {"sample_counts", c.sample_counts}});
            break;
        case ExperimentKind::loopy:
            j.update({{"network", c.network.string()},
                      {"generator", c.generator},
                      {"tree_variables", c.tree_variables},
                      {"max_cardinality", c.max_cardinality}});
            break;
    }
    return j;
}

// ---------------------------------------------------------------------------

std::vector<ResultRow> run_clutter_experiment(const ExperimentConfig& config) {
    config.validate();
    std::vector<ResultRow> rows;
    for (std::uint64_t seed : config.seeds) {
        ClutterDataSpec spec;
        spec.x_true = Vector::Constant(config.d, config.x_true);
        spec.n = config.n;
        spec.w = config.w;
        spec.d = config.d;
        spec.seed = seed;
        spec.prior_variance = config.prior_variance;
        spec.clutter_variance = config.clutter_variance;
        const ClutterModel model = generate_clutter_data(spec);
        const ClutterBinding binding(model);

        std::optional<ExactPosteriorSummary> exact;
        auto start = Clock::now();
        if (config.n <= kMaxExactClutterSize) exact = exact_clutter(model);
        const double exact_ms = elapsed_ms(start);

        auto make_row = [&](const std::string& method, std::uint64_t checkpoint,
                            std::uint64_t ops, double log_evidence, const Vector& mean) {
            ResultRow row;
            row.experiment = config.id;
            row.seed = seed;
            row.method = method;
            row.checkpoint = checkpoint;
            row.operations = ops;
            row.log_evidence = log_evidence;
            if (exact) {
                row.log_evidence_error = std::abs(log_evidence - exact->log_evidence);
                row.mean_error = (mean - exact->mean).norm();
            }
            return row;
        };

        if (wants(config, "oracle") && exact) {
            auto row = make_row("oracle", 0, 0, exact->log_evidence, exact->mean);
            if (config.timing) row.wall_ms = exact_ms;
            rows.push_back(row);
        }
        if (wants(config, "adf")) {
            start = Clock::now();
            const auto adf = run_adf(binding);
            auto row = make_row("adf", 1, adf.diagnostics.operations, adf.log_evidence,
                                adf.posterior.mean);
            if (config.timing) row.wall_ms = elapsed_ms(start);
            row.sweeps = 1;
            rows.push_back(row);
        }
        if (wants(config, "ep")) {
            std::vector<ResultRow> checkpoints;
            start = Clock::now();
            const auto ep = run_ep(
                binding, run_options(config, seed),
                [&](const SweepSnapshot<ClutterBinding>& snap) {
                    auto row = make_row("ep", static_cast<std::uint64_t>(snap.sweep),
                                        snap.operations,
                                        binding.log_evidence(snap.posterior, snap.sites),
                                        snap.posterior.mean);
                    if (config.timing) row.wall_ms = elapsed_ms(start);
                    checkpoints.push_back(row);
                });
            for (auto& row : checkpoints) {
                row.converged = ep.converged;
                row.sweeps = ep.sweeps;
                rows.push_back(row);
            }
        }
        if (wants(config, "importance")) {
            const FullGaussian prior{Vector::Zero(config.d),
                                     config.prior_variance *
                                         Matrix::Identity(config.d, config.d)};
            auto loglik = [&](const Vector& x) {
                double total = 0.0;
                for (std::size_t i = 0; i < model.size(); ++i) {
                    total += clutter_log_likelihood(model, x, i);
                }
                return total;
            };
            for (std::size_t samples : config.sample_counts) {
                start = Clock::now();
                const auto is = importance_sampler(loglik, prior, samples,
                                                   stream_seed(seed, samples));
                auto row = make_row("importance", samples,
                                    importance_ops(samples, model.size(), config.d),
                                    is.log_evidence, is.mean.value);
                if (config.timing) row.wall_ms = elapsed_ms(start);
                rows.push_back(row);
            }
        }
    }
    return rows;
}

namespace {

double bpm_log_likelihood(const BpmBinding& binding, const Vector& w) {
    double total = 0.0;
    const double eps = std::sqrt(binding.noise_variance());
    for (const auto& x : binding.directions()) {
        const double a = w.dot(x);
        if (eps == 0.0) {
            if (!(a > 0.0)) return -std::numeric_limits<double>::infinity();
        } else {
            total += log_probit(a / eps);
        }
    }
    return total;
}

}  // namespace

std::vector<ResultRow> run_bpm_experiment(const ExperimentConfig& config) {
    config.validate();
    BpmDataset data = config.dataset.empty()
                          ? three_point_dataset()
                          : read_bpm_csv(config.dataset, config.slack, config.bias);
    if (config.dataset.empty()) data.slack = config.slack;
    const BpmBinding binding(data);
    const Index d = data.dim();
    const FullGaussian prior = binding.prior();
    auto loglik = [&](const Vector& w) { return bpm_log_likelihood(binding, w); };

    std::vector<ResultRow> rows;
    for (std::uint64_t seed : config.seeds) {
        auto start = Clock::now();
        const auto truth = importance_sampler(loglik, prior, config.truth_samples,
                                              stream_seed(seed, 1));
        const double truth_ms = elapsed_ms(start);

        auto make_row = [&](const std::string& method, std::uint64_t checkpoint,
                            std::uint64_t ops, double log_evidence, const Vector& mean) {
            ResultRow row;
            row.experiment = config.id;
            row.seed = seed;
            row.method = method;
            row.checkpoint = checkpoint;
            row.operations = ops;
            row.log_evidence = log_evidence;
            row.log_evidence_error = std::abs(log_evidence - truth.log_evidence);
            row.mean_error = (mean - truth.mean.value).norm();
            BpmModel probe;
            probe.posterior = FullGaussian{mean, Matrix::Identity(d, d)};
            row.train_error = bpm_training_error(probe, data);
            return row;
        };

        if (wants(config, "oracle")) {
            auto row = make_row("oracle", 0,
                                importance_ops(config.truth_samples, data.size(), d),
                                truth.log_evidence, truth.mean.value);
            if (config.timing) row.wall_ms = truth_ms;
            rows.push_back(row);
        }
        if (wants(config, "adf")) {
            start = Clock::now();
            const auto adf = run_adf(binding);
            auto row = make_row("adf", 1, adf.diagnostics.operations, adf.log_evidence,
                                adf.posterior.mean);
            if (config.timing) row.wall_ms = elapsed_ms(start);
            row.sweeps = 1;
            rows.push_back(row);
        }
        if (wants(config, "ep")) {
            std::vector<ResultRow> checkpoints;
            start = Clock::now();
            const auto ep = run_ep(
                binding, run_options(config, seed), [&](const SweepSnapshot<BpmBinding>& snap) {
                    auto row = make_row("ep", static_cast<std::uint64_t>(snap.sweep),
                                        snap.operations,
                                        binding.log_evidence(snap.posterior, snap.sites),
                                        snap.posterior.mean);
                    if (config.timing) row.wall_ms = elapsed_ms(start);
                    checkpoints.push_back(row);
                });
            for (auto& row : checkpoints) {
                row.converged = ep.converged;
                row.sweeps = ep.sweeps;
                rows.push_back(row);
            }
        }
        if (wants(config, "importance")) {
            for (std::size_t samples : config.sample_counts) {
                start = Clock::now();
                const auto is = importance_sampler(loglik, prior, samples,
                                                   stream_seed(seed, 1000 + samples));
                auto row = make_row("importance", samples,
                                    importance_ops(samples, data.size(), d), is.log_evidence,
                                    is.mean.value);
                if (config.timing) row.wall_ms = elapsed_ms(start);
                rows.push_back(row);
            }
        }
    }
    return rows;
}

std::vector<ResultRow> run_loopy_experiment(const ExperimentConfig& config) {
    config.validate();
    std::vector<ResultRow> rows;
    for (std::uint64_t seed : config.seeds) {
        DiscreteFactorGraph net;
        if (!config.network.empty()) {
            net = load_network_file(config.network);
        } else if (config.generator == "tree") {
            net = random_tree_network(seed, config.tree_variables, config.max_cardinality);
        } else if (config.generator == "cycle") {
            net = frustrated_cycle();
        } else {
            net = single_factor_network();
        }

        std::optional<DiscreteExact> exact;
        auto start = Clock::now();
        if (net.joint_state_count() <= kMaxJointStates) exact = enumerate_discrete(net);
        const double exact_ms = elapsed_ms(start);

        auto make_row = [&](const std::string& method, std::uint64_t checkpoint,
                            std::uint64_t ops, double log_evidence, const BeliefSet& beliefs) {
            ResultRow row;
            row.experiment = config.id;
            row.seed = seed;
            row.method = method;
            row.checkpoint = checkpoint;
            row.operations = ops;
            row.log_evidence = log_evidence;
            if (exact) {
                row.log_evidence_error = std::abs(log_evidence - exact->log_partition);
                double worst = 0.0;
                for (std::size_t k = 0; k < beliefs.size(); ++k) {
                    double l1 = 0.0;
                    for (std::size_t x = 0; x < beliefs[k].size(); ++x) {
                        l1 += std::abs(beliefs[k][x] - exact->marginals[k][x]);
                    }
                    worst = std::max(worst, l1);
                }
                row.l1_error = worst;
            }
            return row;
        };

        if (wants(config, "oracle") && exact) {
            auto row = make_row("oracle", 0, net.joint_state_count() * net.factor_count(),
                                exact->log_partition, exact->marginals);
            if (config.timing) row.wall_ms = exact_ms;
            rows.push_back(row);
        }
        const DisconnectedBinding binding(net);
        if (wants(config, "adf")) {
            start = Clock::now();
            const auto adf = run_adf(binding);
            auto row = make_row("adf", 1, adf.diagnostics.operations, adf.log_evidence,
                                adf.posterior);
            if (config.timing) row.wall_ms = elapsed_ms(start);
            row.sweeps = 1;
            rows.push_back(row);
        }
        if (wants(config, "ep")) {
            std::vector<ResultRow> checkpoints;
            start = Clock::now();
            const auto ep = loopy_ep(
                net, run_options(config, seed),
                [&](const SweepSnapshot<DisconnectedBinding>& snap) {
                    auto row = make_row("ep", static_cast<std::uint64_t>(snap.sweep),
                                        snap.operations,
                                        binding.log_evidence(snap.posterior, snap.sites),
                                        snap.posterior);
                    if (config.timing) row.wall_ms = elapsed_ms(start);
                    checkpoints.push_back(row);
                });
            for (auto& row : checkpoints) {
                row.converged = ep.converged;
                row.sweeps = ep.sweeps;
                rows.push_back(row);
            }
        }
        if (wants(config, "importance")) {
            throw Error("importance sampling is not available for discrete networks");
        }
    }
    return rows;
}

std::vector<ResultRow> run_experiment(const ExperimentConfig& config) {
    switch (config.kind) {
        case ExperimentKind::clutter: return run_clutter_experiment(config);
        case ExperimentKind::bpm: return run_bpm_experiment(config);
        case ExperimentKind::loopy: return run_loopy_experiment(config);
    }
    throw Error("unknown experiment kind");
}

std::string rows_to_csv(const std::vector<ResultRow>& rows) {
    std::ostringstream out;
    out << kResultHeader << '\n';
    for (const auto& r : rows) {
        out << r.experiment << ',' << r.seed << ',' << r.method << ',' << r.checkpoint << ','
            << r.operations << ',' << format_optional(r.wall_ms) << ','
            << format_optional(r.log_evidence) << ',' << format_optional(r.log_evidence_error)
            << ',' << format_optional(r.mean_error) << ',' << format_optional(r.train_error)
            << ',' << format_optional(r.l1_error) << ',' << (r.converged ? "true" : "false")
            << ',' << r.sweeps << '\n';
    }
    return out.str();
}

void write_results(const ExperimentConfig& config, const std::vector<ResultRow>& rows) {
    if (config.out.empty()) throw Error("no output path given");
    if (config.out.has_parent_path()) std::filesystem::create_directories(config.out.parent_path());
    {
        std::ofstream out(config.out, std::ios::binary);
        if (!out) throw Error("cannot write " + config.out.string());
        out << rows_to_csv(rows);
    }
    nlohmann::json meta = {{"config", config_to_json(config)},
                           {"library_version", EPINFER_VERSION},
                           {"header", kResultHeader},
                           {"rows", rows.size()}};
    std::filesystem::path sidecar = config.out;
    sidecar += ".meta.json";
    std::ofstream out(sidecar, std::ios::binary);
    if (!out) throw Error("cannot write " + sidecar.string());
    out << meta.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

DiscreteFactorGraph random_tree_network(std::uint64_t seed, std::size_t max_variables,
                                        std::size_t max_cardinality) {
    Rng rng(seed);
    const std::size_t nv = 1 + rng.index(max_variables);
    std::vector<Variable> vars;
    for (std::size_t k = 0; k < nv; ++k) {
        vars.push_back({"v" + std::to_string(k), 2 + rng.index(max_cardinality - 1)});
    }
    auto table = [&](std::size_t size) {
        std::vector<double> t(size);
        for (double& x : t) x = std::exp(rng.normal());
        return t;
    };
    std::vector<Factor> factors;
    for (std::size_t k = 0; k < nv; ++k) {
        factors.push_back({"u" + std::to_string(k), {k}, table(vars[k].cardinality),
                           FactorKind::potential});
        if (k > 0) {
            const std::size_t parent = rng.index(k);
            factors.push_back({"e" + std::to_string(k), {parent, k},
                               table(vars[parent].cardinality * vars[k].cardinality),
                               FactorKind::potential});
        }
    }
    return DiscreteFactorGraph(std::move(vars), std::move(factors));
}

DiscreteFactorGraph frustrated_cycle(double coupling) {
    const double same = std::exp(-coupling);
    const double diff = std::exp(coupling);
    std::vector<Variable> vars = {{"a", 2}, {"b", 2}, {"c", 2}};
    const std::vector<double> edge = {same, diff, diff, same};
    std::vector<Factor> factors = {{"ab", {0, 1}, edge, FactorKind::potential},
                                   {"bc", {1, 2}, edge, FactorKind::potential},
                                   {"ca", {2, 0}, edge, FactorKind::potential},
                                   {"bias", {0}, {1.5, 1.0}, FactorKind::potential}};
    return DiscreteFactorGraph(std::move(vars), std::move(factors));
}

DiscreteFactorGraph single_factor_network() {
    std::vector<Variable> vars = {{"a", 2}, {"b", 3}};
    std::vector<Factor> factors = {
        {"f", {0, 1}, {0.1, 0.5, 0.2, 0.7, 0.0, 0.3}, FactorKind::potential}};
    return DiscreteFactorGraph(std::move(vars), std::move(factors));
}

// ---------------------------------------------------------------------------

std::vector<CheckResult> run_oracle_checks(std::uint64_t seed, std::size_t cases) {
    std::vector<CheckResult> out;
    Rng rng(seed);

    {
        CheckResult c{"clutter moment match vs quadrature", cases, 0.0, 1e-8, false};
        for (std::size_t t = 0; t < cases; ++t) {
            const Index d = 1 + static_cast<Index>(t % 3);
            Vector m(d), y(d);
            for (Index j = 0; j < d; ++j) {
                m(j) = 3.0 * rng.normal();
                y(j) = m(j) + 3.0 * rng.normal();
            }
            const SphericalGaussian cav{m, std::exp(1.5 * rng.normal())};
            const double w = 0.05 + 0.9 * rng.uniform();
            const auto a = clutter_moment_match(cav, y, w, 10.0);
            const auto q = clutter_tilted_quadrature(cav, y, w, 10.0);
            c.max_error = std::max({c.max_error, relative_error(a.z, q.z),
                                    vector_error(a.posterior.mean, q.mean,
                                                 std::sqrt(cav.variance)),
                                    relative_error(a.posterior.variance, q.variance)});
        }
        out.push_back(c);
    }
    {
        CheckResult c{"probit moment match vs quadrature", cases, 0.0, 1e-8, false};
        for (std::size_t t = 0; t < cases; ++t) {
            const Index d = 1 + static_cast<Index>(t % 4);
            Matrix a(d, d);
            Vector m(d), x(d);
            for (Index r = 0; r < d; ++r) {
                m(r) = rng.normal();
                x(r) = rng.normal();
                for (Index s = 0; s < d; ++s) a(r, s) = rng.normal();
            }
            const FullGaussian cav{m, a * a.transpose() + 0.1 * Matrix::Identity(d, d)};
            const double noise = t % 2 ? 0.0 : 2.0 * rng.uniform();
            const auto an = bpm_moment_match(cav, x, noise);
            const auto q = probit_tilted_quadrature(cav, x, noise);
            const double scale = std::sqrt(cav.covariance.diagonal().maxCoeff());
            c.max_error = std::max({c.max_error, relative_error(an.normalizer, q.z),
                                    vector_error(an.posterior.mean, q.mean, scale),
                                    (an.posterior.covariance - q.covariance).norm() /
                                        q.covariance.norm()});
        }
        out.push_back(c);
    }
    {
        CheckResult c{"clutter first EP sweep vs ADF", 20, 0.0, 1e-12, false};
        for (std::size_t t = 0; t < c.cases; ++t) {
            ClutterDataSpec spec;
            spec.d = 1 + static_cast<Index>(rng.index(3));
            spec.x_true = Vector::Constant(spec.d, 2.0 * rng.normal());
            spec.n = 1 + rng.index(20);
            spec.w = 0.1 + 0.8 * rng.uniform();
            spec.seed = rng.bits();
            const auto model = generate_clutter_data(spec);
            const ClutterBinding binding(model);
            const auto adf = run_adf(binding);
            EPOptions opts;
            opts.max_sweeps = 1;
            const auto ep = run_ep(binding, opts);
            c.max_error = std::max({c.max_error, (ep.posterior.mean - adf.posterior.mean).norm(),
                                    std::abs(ep.posterior.variance - adf.posterior.variance),
                                    std::abs(ep.log_evidence - adf.log_evidence) /
                                        std::max(1.0, std::abs(adf.log_evidence))});
        }
        out.push_back(c);
    }
    {
        CheckResult c{"BPM first EP sweep vs ADF", 10, 0.0, 1e-12, false};
        for (std::size_t t = 0; t < c.cases; ++t) {
            const Index d = 1 + static_cast<Index>(rng.index(4));
            const std::size_t n = 1 + rng.index(12);
            Vector truth(d);
            for (Index j = 0; j < d; ++j) truth(j) = rng.normal();
            std::vector<Vector> pts;
            std::vector<int> labels;
            for (std::size_t i = 0; i < n; ++i) {
                Vector p(d);
                for (Index j = 0; j < d; ++j) p(j) = rng.normal();
                pts.push_back(p);
                labels.push_back(p.dot(truth) + 0.3 * rng.normal() >= 0.0 ? 1 : -1);
            }
            const auto data = make_bpm_dataset(pts, labels, 0.5 * rng.uniform(), true);
            const BpmBinding binding(data);
            const auto adf = run_adf(binding);
            EPOptions opts;
            opts.max_sweeps = 1;
            const auto ep = run_ep(binding, opts);
            c.max_error = std::max(
                {c.max_error, (ep.posterior.mean - adf.posterior.mean).cwiseAbs().maxCoeff(),
                 (ep.posterior.covariance - adf.posterior.covariance).cwiseAbs().maxCoeff()});
        }
        out.push_back(c);
    }
    {
        CheckResult c{"conjugate clutter EP vs closed form", 5, 0.0, 1e-10, false};
        for (std::size_t t = 0; t < c.cases; ++t) {
            ClutterDataSpec spec;
            spec.d = 1 + static_cast<Index>(t % 3);
            spec.x_true = Vector::Constant(spec.d, 2.0);
            spec.n = 12;
            spec.w = 0.0;
            spec.seed = rng.bits();
            const auto model = generate_clutter_data(spec);
            const auto exact = conjugate_clutter(model);
            EPOptions opts;
            opts.tolerance = 1e-10;
            const auto ep = run_ep(ClutterBinding(model), opts);
            c.max_error = std::max({c.max_error, (ep.posterior.mean - exact.mean).norm(),
                                    std::abs(ep.posterior.variance - exact.covariance(0, 0)),
                                    std::abs(ep.log_evidence - exact.log_evidence)});
        }
        out.push_back(c);
    }
    {
        CheckResult c{"loopy EP on trees vs enumeration", 25, 0.0, 1e-10, false};
        for (std::size_t t = 0; t < c.cases; ++t) {
            const auto net = random_tree_network(rng.bits(), 8, 4);
            EPOptions opts;
            opts.tolerance = 1e-13;
            opts.max_sweeps = 200;
            const auto ep = loopy_ep(net, opts);
            const auto exact = enumerate_discrete(net);
            if (!ep.converged) c.max_error = std::numeric_limits<double>::infinity();
            c.max_error = std::max(c.max_error, std::abs(ep.log_evidence - exact.log_partition));
            for (std::size_t k = 0; k < net.variable_count(); ++k) {
                for (std::size_t x = 0; x < net.cardinality(k); ++x) {
                    c.max_error =
                        std::max(c.max_error, std::abs(ep.beliefs[k][x] - exact.marginals[k][x]));
                }
            }
        }
        out.push_back(c);
    }
    {
        CheckResult c{"loopy first sweep vs Boyen-Koller", 25, 0.0, 1e-12, false};
        for (std::size_t t = 0; t < c.cases; ++t) {
            const auto net = t % 5 == 0 ? frustrated_cycle(0.5 + rng.uniform())
                                        : random_tree_network(rng.bits(), 8, 4);
            const auto adf = bk_adf(net);
            EPOptions opts;
            opts.max_sweeps = 1;
            const auto ep = loopy_ep(net, opts);
            for (std::size_t k = 0; k < net.variable_count(); ++k) {
                for (std::size_t x = 0; x < net.cardinality(k); ++x) {
                    c.max_error = std::max(c.max_error,
                                           std::abs(ep.beliefs[k][x] - adf.beliefs[k][x]));
                }
            }
        }
        out.push_back(c);
    }
    for (auto& c : out) c.passed = c.max_error <= c.tolerance;
    return out;
}

std::string checks_table(const std::vector<CheckResult>& checks) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-40s %6s %12s %10s  %s\n", "check", "cases", "max error",
                  "tolerance", "result");
    out << line;
    for (const auto& c : checks) {
        std::snprintf(line, sizeof line, "%-40s %6zu %12.3e %10.1e  %s\n", c.name.c_str(),
                      c.cases, c.max_error, c.tolerance, c.passed ? "PASS" : "FAIL");
        out << line;
    }
    return out.str();
}

}  // namespace epinfer
