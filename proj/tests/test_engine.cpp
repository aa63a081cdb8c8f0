#include <doctest.h>

#include <cmath>
#include <vector>

#include "epinfer/bpm.hpp"
#include "epinfer/clutter.hpp"
#include "epinfer/engine.hpp"
#include "epinfer/oracles.hpp"

using namespace epinfer;

namespace {

ClutterModel clutter(std::vector<double> ys, double w) {
    ClutterModel m;
    m.w = w;
    for (double y : ys) m.data.push_back(Vector::Constant(1, y));
    return m;
}

ClutterModel random_clutter(std::uint64_t seed, std::size_t n, double w, Index d = 1) {
    ClutterDataSpec spec;
    spec.x_true = Vector::Constant(d, 2.0);
    spec.n = n;
    spec.w = w;
    spec.d = d;
    spec.seed = seed;
    return generate_clutter_data(spec);
}

}  // namespace

TEST_CASE("ADF with no data returns the prior") {
    const auto model = clutter({}, 0.5);
    const auto r = run_adf(ClutterBinding(model));
    CHECK(r.posterior.variance == 100.0);
    CHECK(r.posterior.mean(0) == 0.0);
    CHECK(r.log_evidence == 0.0);
    CHECK(r.sweeps == 1);
}

TEST_CASE("ADF conjugate single observation") {
    const auto model = clutter({1.0}, 0.0);
    const auto r = run_adf(ClutterBinding(model));
    CHECK(r.posterior.mean(0) == doctest::Approx(100.0 / 101.0).epsilon(1e-14));
    CHECK(r.posterior.variance == doctest::Approx(100.0 / 101.0).epsilon(1e-14));
}

TEST_CASE("ADF depends on processing order") {
    const auto model = clutter({3.0, -1.0}, 0.5);
    const ClutterBinding b(model);
    const std::vector<std::size_t> forward = {0, 1}, backward = {1, 0};
    const auto a = run_adf(b, forward);
    const auto c = run_adf(b, backward);
    CHECK(std::abs(a.posterior.variance - c.posterior.variance) > 1e-6);
}

TEST_CASE("ADF rejects a non-permutation order") {
    const auto model = clutter({3.0, -1.0}, 0.5);
    const std::vector<std::size_t> bad = {0, 0};
    CHECK_THROWS_AS(run_adf(ClutterBinding(model), bad), Error);
}

TEST_CASE("first EP sweep equals ADF") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto model = random_clutter(seed, 10, 0.5, 1 + seed % 3);
        const ClutterBinding b(model);
        const auto adf = run_adf(b);
        EPOptions opts;
        opts.max_sweeps = 1;
        const auto ep = run_ep(b, opts);
        CHECK((ep.posterior.mean - adf.posterior.mean).norm() < 1e-12);
        CHECK(std::abs(ep.posterior.variance - adf.posterior.variance) < 1e-12);
        CHECK(ep.log_evidence == doctest::Approx(adf.log_evidence).epsilon(1e-12));
    }
}

TEST_CASE("first EP sweep equals ADF for any fixed order") {
    const auto model = random_clutter(4, 8, 0.5);
    const ClutterBinding b(model);
    const std::vector<std::size_t> order = {7, 2, 5, 0, 1, 6, 3, 4};
    const auto adf = run_adf(b, order);
    EPOptions opts;
    opts.max_sweeps = 1;
    opts.schedule = FixedOrder{order};
    const auto ep = run_ep(b, opts);
    CHECK((ep.posterior.mean - adf.posterior.mean).norm() < 1e-12);
    CHECK(std::abs(ep.posterior.variance - adf.posterior.variance) < 1e-12);
}

TEST_CASE("EP with w = 0 is exact and converges quickly") {
    const auto model = random_clutter(3, 12, 0.0);
    EPOptions opts;
    opts.tolerance = 1e-10;
    const auto ep = run_ep(ClutterBinding(model), opts);
    const auto exact = exact_clutter(model);
    CHECK(ep.converged);
    CHECK(ep.sweeps <= 2);
    CHECK(std::abs(ep.posterior.mean(0) - exact.mean(0)) < 1e-10);
    CHECK(std::abs(ep.posterior.variance - exact.covariance(0, 0)) < 1e-10);
    CHECK(std::abs(ep.log_evidence - exact.log_evidence) < 1e-10);
}

TEST_CASE("EP with no data") {
    const auto model = clutter({}, 0.5);
    const auto ep = run_ep(ClutterBinding(model), EPOptions{});
    CHECK(ep.converged);
    CHECK(ep.sweeps <= 1);
    CHECK(ep.posterior.variance == 100.0);
    CHECK(ep.log_evidence == doctest::Approx(0.0));
}

TEST_CASE("EP options are validated") {
    const auto model = clutter({1.0}, 0.5);
    EPOptions opts;
    opts.damping = 0.0;
    CHECK_THROWS_AS(run_ep(ClutterBinding(model), opts), Error);
    opts = EPOptions{};
    opts.max_sweeps = 0;
    CHECK_THROWS_AS(run_ep(ClutterBinding(model), opts), Error);
    opts = EPOptions{};
    opts.tolerance = -1.0;
    CHECK_THROWS_AS(run_ep(ClutterBinding(model), opts), Error);
}

TEST_CASE("convergence flag is honest") {
    const auto model = random_clutter(2, 12, 0.5);
    const ClutterBinding b(model);
    EPOptions opts;
    opts.tolerance = 1e-8;
    const auto ep = run_ep(b, opts);
    REQUIRE(ep.converged);
    // one more sweep from the converged sites
    auto q = ep.posterior;
    auto sites = ep.sites;
    OpTally tally;
    double change = 0.0;
    for (std::size_t i = 0; i < b.site_count(); ++i) {
        auto cav = b.cavity(q, sites, i, tally);
        REQUIRE(cav);
        auto upd = b.update(*cav, i, tally);
        change = std::max(change, b.site_change(sites[i], upd.site));
        q = upd.posterior;
        sites[i] = upd.site;
    }
    CHECK(change < opts.tolerance);
}

TEST_CASE("non-convergence is reported, not thrown") {
    const auto model = random_clutter(1, 12, 0.5);
    EPOptions opts;
    opts.tolerance = 1e-15;
    opts.max_sweeps = 3;
    const auto ep = run_ep(ClutterBinding(model), opts);
    CHECK_FALSE(ep.converged);
    CHECK(ep.sweeps == 3);
}

TEST_CASE("damped and undamped runs reach the same fixed point") {
    const auto model = random_clutter(5, 6, 0.5);
    const ClutterBinding b(model);
    EPOptions opts;
    opts.tolerance = 1e-12;
    opts.max_sweeps = 500;
    const auto plain = run_ep(b, opts);
    opts.damping = 0.5;
    const auto damped = run_ep(b, opts);
    REQUIRE(plain.converged);
    REQUIRE(damped.converged);
    CHECK(std::abs(plain.posterior.mean(0) - damped.posterior.mean(0)) < 1e-6);
    CHECK(std::abs(plain.posterior.variance - damped.posterior.variance) < 1e-6);
    const auto report = check_fixed_point(b, damped.posterior, std::span(damped.sites));
    CHECK(report.max_residual() < 1e-6);
}

TEST_CASE("a damped sweep leaves a fixed point unchanged") {
    const auto model = random_clutter(5, 6, 0.5);
    const ClutterBinding b(model);
    EPOptions opts;
    opts.tolerance = 1e-13;
    opts.max_sweeps = 500;
    const auto ep = run_ep(b, opts);
    REQUIRE(ep.converged);
    for (double gamma : {0.1, 0.5, 1.0}) {
        auto q = ep.posterior;
        auto sites = ep.sites;
        OpTally tally;
        double change = 0.0;
        for (std::size_t i = 0; i < b.site_count(); ++i) {
            auto cav = b.cavity(q, sites, i, tally);
            REQUIRE(cav);
            auto upd = b.update(*cav, i, tally);
            auto damped = b.damp(sites[i], upd.site, gamma);
            change = std::max(change, b.site_change(sites[i], damped));
            q = b.include(*cav, damped, tally);
            sites[i] = damped;
        }
        CHECK(change < 1e-10);
    }
}

TEST_CASE("random schedule is reproducible") {
    const auto model = random_clutter(7, 10, 0.3);
    const ClutterBinding b(model);
    EPOptions opts;
    opts.schedule = RandomPermutation{42};
    opts.max_sweeps = 5;
    const auto a = run_ep(b, opts);
    const auto c = run_ep(b, opts);
    CHECK(a.posterior.mean(0) == c.posterior.mean(0));
    CHECK(a.posterior.variance == c.posterior.variance);
    CHECK(a.diagnostics.operations == c.diagnostics.operations);
}

TEST_CASE("observer sees one snapshot per sweep") {
    const auto model = random_clutter(8, 10, 0.5);
    const ClutterBinding b(model);
    std::vector<int> seen;
    std::vector<std::uint64_t> ops;
    const auto ep = run_ep(b, EPOptions{}, [&](const SweepSnapshot<ClutterBinding>& s) {
        seen.push_back(s.sweep);
        ops.push_back(s.operations);
    });
    REQUIRE(static_cast<int>(seen.size()) == ep.sweeps);
    for (std::size_t k = 0; k < seen.size(); ++k) CHECK(seen[k] == static_cast<int>(k) + 1);
    CHECK(std::is_sorted(ops.begin(), ops.end()));
    CHECK(ops.back() == ep.diagnostics.operations);
}

TEST_CASE("improper cavity policy") {
    // A BPM site with a large precision along x makes the cavity improper once
    // the posterior has been tightened elsewhere.
    const auto data = three_point_dataset();
    const BpmBinding b(data);
    FullGaussian q = b.prior();
    std::vector<RankOneSite> sites;
    for (std::size_t i = 0; i < b.site_count(); ++i) sites.push_back(b.vacuous_site(i));
    sites[0] = RankOneSite::from_scale(b.directions()[0], 10.0, 0.0, 0.0);
    OpTally tally;
    CHECK_FALSE(b.cavity(q, sites, 0, tally));
}

TEST_CASE("energy: single site") {
    const auto model = clutter({1.5}, 0.5);
    const ClutterBinding b(model);
    EPOptions opts;
    opts.tolerance = 1e-12;
    const auto ep = run_ep(b, opts);
    const auto report = ep_energy(b, ep.posterior, std::span(ep.sites));
    OpTally t;
    const auto cav = b.cavity(ep.posterior, ep.sites, 0, t);
    REQUIRE(cav);
    const double log_z = b.update(*cav, 0, t).log_z;
    CHECK(report.objective == doctest::Approx(-log_z).epsilon(1e-12));
    CHECK(report.constraint_residual < 1e-12);
}

TEST_CASE("energy: constraint holds by construction and residuals vanish at a fixed point") {
    const auto model = random_clutter(6, 6, 0.5);
    const ClutterBinding b(model);
    EPOptions opts;
    opts.tolerance = 1e-10;
    opts.max_sweeps = 500;
    const auto ep = run_ep(b, opts);
    REQUIRE(ep.converged);
    const auto report = ep_energy(b, ep.posterior, std::span(ep.sites));
    CHECK(report.constraint_residual < 1e-12);
    CHECK(std::isfinite(report.objective));
    for (const auto& r : report.moment_residuals) {
        REQUIRE(r);
        CHECK(*r < 1e-6);
    }
    const auto fp = check_fixed_point(b, ep.posterior, std::span(ep.sites));
    for (const auto& r : fp.oracle_discrepancy) {
        REQUIRE(r);
        CHECK(*r < 1e-8);
    }
}

TEST_CASE("fixed point check on fresh and on constant terms") {
    const auto model = random_clutter(9, 6, 0.5);
    const ClutterBinding b(model);
    std::vector<NaturalSpherical> vacuous;
    for (std::size_t i = 0; i < b.site_count(); ++i) vacuous.push_back(b.vacuous_site(i));
    const auto fresh = check_fixed_point(b, b.prior(), std::span<const NaturalSpherical>(vacuous));
    CHECK(fresh.max_residual() > 1e-4);

    // w = 1: every term is constant in x
    auto flat = random_clutter(9, 6, 0.5);
    flat.w = 1.0;
    const ClutterBinding fb(flat);
    const auto r = check_fixed_point(fb, fb.prior(), std::span<const NaturalSpherical>(vacuous));
    CHECK(r.max_residual() == doctest::Approx(0.0));
}
