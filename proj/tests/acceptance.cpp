// Acceptance run: one PASS/FAIL line per criterion with its runtime. Exits
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "epinfer/bpm.hpp"
#include "epinfer/clutter.hpp"
#include "epinfer/factor_graph.hpp"
#include "epinfer/harness.hpp"
#include "epinfer/oracles.hpp"

using namespace epinfer;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

// Fixed points collected by criteria 1, 4 and 7 for criterion 9.
struct EnergyCheck {
    std::string label;
    double constraint = 0.0;
    double moment = 0.0;
    std::size_t unevaluable = 0;
};
std::vector<EnergyCheck> g_fixed_points;

template <class M>
void record_fixed_point(const std::string& label, const M& binding,
                        const EPResult<typename M::Posterior, typename M::Site>& ep) {
    if (!ep.converged) return;
    const auto report = ep_energy(binding, ep.posterior, std::span(ep.sites));
    EnergyCheck c{label, report.constraint_residual, 0.0, 0};
    for (const auto& r : report.moment_residuals) {
        if (r) c.moment = std::max(c.moment, *r);
        else ++c.unevaluable;
    }
    g_fixed_points.push_back(c);
}

std::string fmt(const char* pattern, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, pattern, args...);
    return buf;
}

ClutterModel clutter_instance(std::uint64_t seed, std::size_t n, double w, Index d) {
    ClutterDataSpec spec;
    spec.x_true = Vector::Constant(d, 2.0);
    spec.n = n;
    spec.w = w;
    spec.d = d;
    spec.seed = seed;
    return generate_clutter_data(spec);
}

BpmDataset bpm_instance(Rng& rng, Index d, std::size_t n, double slack) {
    Vector truth(d);
    for (Index j = 0; j < d; ++j) truth(j) = rng.normal();
    std::vector<Vector> pts;
    std::vector<int> labels;
    for (std::size_t i = 0; i < n; ++i) {
        Vector p(d);
        for (Index j = 0; j < d; ++j) p(j) = rng.normal();
        labels.push_back(p.dot(truth) >= 0.0 ? 1 : -1);
        pts.push_back(std::move(p));
    }
    return make_bpm_dataset(pts, labels, slack, false);
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double stddev(const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

EPOptions clutter_options() {
    EPOptions opts;
    opts.tolerance = 1e-6;
    opts.max_sweeps = 50;
    return opts;
}

// 1 ------------------------------------------------------------------------
Outcome conjugate_exactness() {
    const auto model = clutter_instance(1, 12, 0.0, 1);
    const ClutterBinding binding(model);
    const auto ep = run_ep(binding, clutter_options());
    const auto exact = conjugate_clutter(model);
    const double mean_err = std::abs(ep.posterior.mean(0) - exact.mean(0));
    const double var_err = std::abs(ep.posterior.variance - exact.covariance(0, 0));
    const double ev_err = std::abs(ep.log_evidence - exact.log_evidence);
    record_fixed_point("conjugate", binding, ep);
    const double worst = std::max({mean_err, var_err, ev_err});
    return {worst <= 1e-10 && ep.converged && ep.sweeps <= 2,
            fmt("max error %.2e, %d sweeps", worst, ep.sweeps)};
}

// 2 ------------------------------------------------------------------------
Outcome first_pass_identity() {
    EPOptions one;
    one.max_sweeps = 1;
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto model = clutter_instance(seed, 12, 0.5, 1 + static_cast<Index>(seed % 3));
        const ClutterBinding b(model);
        const auto adf = run_adf(b);
        const auto ep = run_ep(b, one);
        const double scale = std::max(1.0, adf.posterior.mean.norm());
        worst = std::max(worst, (ep.posterior.mean - adf.posterior.mean).norm() / scale);
        worst = std::max(worst, std::abs(ep.posterior.variance - adf.posterior.variance) /
                                    adf.posterior.variance);
        worst = std::max(worst, std::abs(ep.log_evidence - adf.log_evidence) /
                                    std::max(1.0, std::abs(adf.log_evidence)));
    }
    Rng rng(77);
    for (int t = 0; t < 10; ++t) {
        const auto data = bpm_instance(rng, 2 + t % 4, 15, t % 2 ? 0.3 : 0.0);
        const BpmBinding b(data);
        const auto adf = run_adf(b);
        const auto ep = run_ep(b, one);
        const double scale = std::max(1.0, adf.posterior.mean.norm());
        worst = std::max(worst, (ep.posterior.mean - adf.posterior.mean).norm() / scale);
        worst = std::max(worst, (ep.posterior.covariance - adf.posterior.covariance).norm() /
                                    adf.posterior.covariance.norm());
        worst = std::max(worst, std::abs(ep.log_evidence - adf.log_evidence) /
                                    std::max(1.0, std::abs(adf.log_evidence)));
    }
    return {worst <= 1e-12, fmt("max relative gap %.2e over 20 clutter + 10 BPM", worst)};
}

// 3 ------------------------------------------------------------------------
Outcome oracle_agreement() {
    const auto checks = run_oracle_checks(2024, 200);
    bool ok = true;
    std::ostringstream detail;
    for (const auto& c : checks) {
        if (c.name.find("moment match vs quadrature") == std::string::npos) continue;
        ok = ok && c.passed && c.tolerance <= 1e-8 && c.cases == 200;
        detail << c.name << " " << fmt("%.2e", c.max_error) << "; ";
    }
    return {ok, detail.str()};
}

// 4 and 5 ----------------------------------------------------------------
Outcome ep_beats_adf() {
    std::vector<double> ep_mean, adf_mean, ep_ev, adf_ev;
    int converged = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto model = clutter_instance(seed, 12, 0.5, 1);
        const ClutterBinding b(model);
        const auto exact = exact_clutter(model);
        const auto adf = run_adf(b);
        const auto ep = run_ep(b, clutter_options());
        converged += ep.converged;
        record_fixed_point("clutter seed " + std::to_string(seed), b, ep);
        ep_mean.push_back((ep.posterior.mean - exact.mean).norm());
        adf_mean.push_back((adf.posterior.mean - exact.mean).norm());
        ep_ev.push_back(std::abs(ep.log_evidence - exact.log_evidence));
        adf_ev.push_back(std::abs(adf.log_evidence - exact.log_evidence));
    }
    const double em = median(ep_mean), am = median(adf_mean);
    const double ee = median(ep_ev), ae = median(adf_ev);
    return {em <= am && ee <= ae,
            fmt("median mean error EP %.3e vs ADF %.3e; log-evidence EP %.3e vs ADF %.3e; "
                "%d/20 converged",
                em, am, ee, ae, converged)};
}

Outcome order_robustness() {
    int wins = 0, not_converged = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto model = clutter_instance(seed, 12, 0.5, 1);
        const ClutterBinding b(model);
        Rng rng(1000 + seed);
        std::vector<double> ep_means, adf_means;
        for (int r = 0; r < 10; ++r) {
            std::vector<std::size_t> order(model.size());
            std::iota(order.begin(), order.end(), 0);
            for (std::size_t i = order.size() - 1; i > 0; --i) {
                std::swap(order[i], order[rng.index(i + 1)]);
            }
            adf_means.push_back(run_adf(b, std::span<const std::size_t>(order)).posterior.mean(0));
            EPOptions opts = clutter_options();
            opts.schedule = FixedOrder{order};
            const auto ep = run_ep(b, opts);
            not_converged += !ep.converged;
            ep_means.push_back(ep.posterior.mean(0));
        }
        wins += stddev(ep_means) <= stddev(adf_means);
    }
    return {wins >= 15, fmt("EP spread <= ADF spread in %d/20 seeds (%d of 200 EP runs "
                            "hit the sweep limit)",
                            wins, not_converged)};
}

// 6 ------------------------------------------------------------------------
Outcome tree_exactness() {
    EPOptions opts;
    opts.tolerance = 1e-13;
    opts.max_sweeps = 200;
    double worst_l1 = 0.0, worst_ev = 0.0;
    bool all_converged = true;
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        const auto net = random_tree_network(seed, 8, 4);
        const auto r = loopy_ep(net, opts);
        const auto exact = enumerate_discrete(net);
        all_converged = all_converged && r.converged && net.is_forest();
        for (std::size_t k = 0; k < r.beliefs.size(); ++k) {
            double l1 = 0.0;
            for (std::size_t x = 0; x < r.beliefs[k].size(); ++x) {
                l1 += std::abs(r.beliefs[k][x] - exact.marginals[k][x]);
            }
            worst_l1 = std::max(worst_l1, l1);
        }
        worst_ev = std::max(worst_ev, std::abs(r.log_evidence - exact.log_partition));
    }
    return {all_converged && worst_l1 <= 1e-10 && worst_ev <= 1e-10,
            fmt("max marginal L1 %.2e, max log-evidence error %.2e", worst_l1, worst_ev)};
}

// 7 ------------------------------------------------------------------------
Outcome bpm_correctness() {
    EPOptions opts;
    opts.tolerance = 1e-6;
    opts.max_sweeps = 100;

    const auto one = make_bpm_dataset({Vector::Constant(1, 1.0)}, {1}, 1.0, false);
    const BpmBinding b1(one);
    const auto ep1 = run_ep(b1, opts);
    record_fixed_point("bpm one point", b1, ep1);
    const double mean_err = std::abs(ep1.posterior.mean(0) - 0.5641896);
    const double ev_err = std::abs(ep1.log_evidence - std::log(0.5));

    const auto three = three_point_dataset();
    const BpmBinding b3(three);
    const auto ep3 = run_ep(b3, opts);
    record_fixed_point("bpm three points", b3, ep3);
    BpmModel model;
    model.posterior = ep3.posterior;
    const double train_error = bpm_training_error(model, three);

    const auto is = importance_sampler(
        [&](const Vector& w) {
            for (const auto& x : b3.directions()) {
                if (!(w.dot(x) > 0.0)) return -std::numeric_limits<double>::infinity();
            }
            return 0.0;
        },
        b3.prior(), 1'000'000, 7);
    const double distance = (ep3.posterior.mean - is.mean.value).norm();
    const double radius = 3.0 * is.mean.standard_error.norm();

    return {mean_err <= 1e-6 && ev_err <= 1e-6 && train_error == 0.0 && distance <= radius,
            fmt("one point: mean error %.1e, evidence error %.1e; three points: training "
                "error %g, |EP - IS| %.4f vs 3-SE radius %.4f",
                mean_err, ev_err, train_error, distance, radius)};
}

// 8 ------------------------------------------------------------------------
double ops_per_site_update(Index d) {
    Rng rng(500 + static_cast<std::uint64_t>(d));
    const auto data = bpm_instance(rng, d, 40, 0.5);
    const BpmBinding b(data);
    EPOptions opts;
    opts.tolerance = 1e-6;
    const auto ep = run_ep(b, opts);
    OpTally tally;
    std::size_t updates = 0;
    for (std::size_t i = 0; i < b.site_count(); ++i) {
        const auto cav = b.cavity(ep.posterior, ep.sites, i, tally);
        if (!cav) continue;
        const auto upd = b.update(*cav, i, tally);
        ++updates;
    }
    return static_cast<double>(tally.count) / static_cast<double>(updates);
}

Outcome complexity() {
    const double at10 = ops_per_site_update(10);
    const double at20 = ops_per_site_update(20);
    const double ratio = at20 / at10;
    return {ratio >= 3.5 && ratio <= 4.5,
            fmt("%.0f ops per update at d=10, %.0f at d=20, ratio %.3f", at10, at20, ratio)};
}

// 9 ------------------------------------------------------------------------
Outcome energy_diagnostics() {
    double worst_c = 0.0, worst_m = 0.0;
    std::size_t unevaluable = 0;
    for (const auto& f : g_fixed_points) {
        worst_c = std::max(worst_c, f.constraint);
        worst_m = std::max(worst_m, f.moment);
        unevaluable += f.unevaluable;
    }
    // Sites whose cavity is improper have no tilted distribution; they are
    // counted and listed, not compared.
    std::string where;
    for (const auto& f : g_fixed_points) {
        if (f.unevaluable) where += fmt(" %s: %zu", f.label.c_str(), f.unevaluable);
    }
    return {!g_fixed_points.empty() && worst_c <= 1e-10 && worst_m <= 1e-4,
            fmt("%zu fixed points: constraint residual %.2e, moment residual %.2e, "
                "%zu unevaluable sites%s",
                g_fixed_points.size(), worst_c, worst_m, unevaluable,
                where.empty() ? "" : (" (" + where.substr(1) + ")").c_str())};
}

}  // namespace

int main() {
    struct Criterion {
        int number;
        const char* name;
        double budget_s;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "conjugate exactness", 1.0, conjugate_exactness},
        {2, "first-pass identity", 5.0, first_pass_identity},
        {3, "oracle agreement", 30.0, oracle_agreement},
        {4, "EP beats ADF", 60.0, ep_beats_adf},
        {5, "order robustness", 0.0, order_robustness},
        {6, "tree exactness", 10.0, tree_exactness},
        {7, "BPM correctness", 60.0, bpm_correctness},
        {8, "complexity", 0.0, complexity},
        {9, "energy diagnostics", 0.0, energy_diagnostics},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("threw: ") + e.what()};
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        bool ok = out.passed;
        if (c.budget_s > 0.0 && secs >= c.budget_s) {
            ok = false;
            out.detail += fmt(" [over the %.0f s budget]", c.budget_s);
        }
        failures += !ok;
        std::printf("criterion %d %-20s %s  %8.3f s  %s\n", c.number, c.name, ok ? "PASS" : "FAIL",
                    secs, out.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
                criteria.size());
    return failures == 0 ? 0 : 1;
}
