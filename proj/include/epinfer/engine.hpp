#pragma once

// Generic assumed-density filtering and expectation propagation over a list of
// sites. A model binding supplies the approximating family, the cavity, the
// moment-matching projection of each exact term, and the evidence formula;
// the driver here owns the sweep schedule, damping, the improper-cavity
// policy and convergence bookkeeping.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "epinfer/core.hpp"

namespace epinfer {

struct Sequential {};
struct RandomPermutation {
    std::uint64_t seed = 0;
};
/// The same explicit order every sweep.
struct FixedOrder {
    std::vector<std::size_t> order;
};
using Schedule = std::variant<Sequential, RandomPermutation, FixedOrder>;

struct EPOptions {
    double tolerance = 1e-4;
    int max_sweeps = 100;
    double damping = 1.0;
    Schedule schedule = Sequential{};
    bool skip_improper_cavity = true;

    void validate() const {
        if (!(tolerance > 0.0)) throw Error("tolerance must be positive");
        if (max_sweeps < 1) throw Error("max_sweeps must be at least 1");
        if (!(damping > 0.0 && damping <= 1.0)) throw Error("damping must lie in (0, 1]");
    }
};

struct Diagnostics {
    std::size_t skipped_sites = 0;
    std::size_t improper_cavities = 0;
    std::uint64_t operations = 0;
    double last_change = 0.0;
};

template <class Posterior, class Site>
struct SiteUpdate {
    Posterior posterior;
    Site site;
    double log_z = 0.0;
};

template <class Posterior, class Site>
struct EPResult {
    Posterior posterior;
    std::vector<Site> sites;
    double log_evidence = 0.0;
    int sweeps = 0;
    bool converged = false;
    Diagnostics diagnostics;
};

/// What a model must provide to be driven by run_adf / run_ep.
///
///   cavity(q, sites, i)  q with site i removed; nullopt when improper
///   update(cavity, i)    moment-matched posterior, the new site Z q / q\i, log Z
///   include(cavity, s)   normalized cavity * s (used by damped updates)
///   damp(old, new, g)    convex combination in natural parameters
///   site_change(a, b)    max abs change over site natural parameters
///   log_evidence(q, s)   log of the integral of the product of all sites
///   log_base_measure()   log mass of the base measure the prior was taken
///                        against (0 when the prior is the model's own prior)
template <class M>
concept SiteModel = requires(const M& m, const typename M::Posterior& q,
                             const typename M::Site& s,
                             std::span<const typename M::Site> sites, std::size_t i,
                             OpTally& tally) {
    { m.site_count() } -> std::convertible_to<std::size_t>;
    { m.prior() } -> std::convertible_to<typename M::Posterior>;
    { m.vacuous_site(i) } -> std::convertible_to<typename M::Site>;
    { m.cavity(q, sites, i, tally) } -> std::same_as<std::optional<typename M::Posterior>>;
    {
        m.update(q, i, tally)
    } -> std::same_as<SiteUpdate<typename M::Posterior, typename M::Site>>;
    { m.include(q, s, tally) } -> std::same_as<typename M::Posterior>;
    { m.damp(s, s, 0.5) } -> std::same_as<typename M::Site>;
    { m.site_change(s, s) } -> std::convertible_to<double>;
    { m.log_evidence(q, sites) } -> std::convertible_to<double>;
    { m.log_base_measure() } -> std::convertible_to<double>;
};

template <SiteModel M>
struct SweepSnapshot {
    int sweep = 0;
    const typename M::Posterior& posterior;
    std::span<const typename M::Site> sites;
    std::uint64_t operations = 0;
    double max_change = 0.0;
};

template <SiteModel M>
using SweepObserver = std::function<void(const SweepSnapshot<M>&)>;

namespace detail {

inline std::vector<std::size_t> identity_order(std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    return order;
}

inline void check_order(std::span<const std::size_t> order, std::size_t n) {
    std::vector<bool> seen(n, false);
    if (order.size() != n) throw Error("processing order must be a permutation of the sites");
    for (std::size_t i : order) {
        if (i >= n || seen[i]) throw Error("processing order must be a permutation of the sites");
        seen[i] = true;
    }
}

class SweepOrder {
public:
    SweepOrder(const Schedule& schedule, std::size_t n) : n_(n) {
        if (const auto* fixed = std::get_if<FixedOrder>(&schedule)) {
            check_order(fixed->order, n);
            order_ = fixed->order;
        } else {
            order_ = identity_order(n);
            if (const auto* random = std::get_if<RandomPermutation>(&schedule)) {
                rng_.emplace(random->seed);
            }
        }
    }

    const std::vector<std::size_t>& next() {
        if (rng_) {
            // Fisher-Yates with an explicit index draw so the permutation only
            // depends on the mt19937_64 stream, not on the library shuffle.
            order_ = identity_order(n_);
            for (std::size_t k = n_; k > 1; --k) {
                const std::size_t j = static_cast<std::size_t>((*rng_)() % k);
                std::swap(order_[k - 1], order_[j]);
            }
        }
        return order_;
    }

private:
    std::size_t n_;
    std::vector<std::size_t> order_;
    std::optional<std::mt19937_64> rng_;
};

}  // namespace detail

/// One pass over the terms in `order`; each term is incorporated once.
template <SiteModel M>
EPResult<typename M::Posterior, typename M::Site> run_adf(const M& model,
                                                          std::span<const std::size_t> order) {
    const std::size_t n = model.site_count();
    detail::check_order(order, n);
    EPResult<typename M::Posterior, typename M::Site> result{model.prior(), {}, 0.0, 1, true, {}};
    result.sites.reserve(n);
    for (std::size_t i = 0; i < n; ++i) result.sites.push_back(model.vacuous_site(i));
    OpTally tally;
    double log_evidence = model.log_base_measure();
    for (std::size_t i : order) {
        try {
            auto upd = model.update(result.posterior, i, tally);
            log_evidence += upd.log_z;
            result.posterior = std::move(upd.posterior);
            result.sites[i] = std::move(upd.site);
        } catch (const Error& e) {
            throw Error(std::string(e.what()) + " (term " + std::to_string(i) + ")");
        }
    }
    result.log_evidence = log_evidence;
    result.diagnostics.operations = tally.count;
    return result;
}

template <SiteModel M>
EPResult<typename M::Posterior, typename M::Site> run_adf(const M& model) {
    const auto order = detail::identity_order(model.site_count());
    return run_adf(model, std::span<const std::size_t>(order));
}

/// Expectation propagation: vacuous sites, repeated refinement until the
/// largest site change in a sweep is below the tolerance or max_sweeps is hit.
/// Non-convergence is reported through `converged`, not thrown.
template <SiteModel M>
EPResult<typename M::Posterior, typename M::Site> run_ep(const M& model, const EPOptions& opts,
                                                         const std::type_identity_t<SweepObserver<M>>& observer = {}) {
    opts.validate();
    const std::size_t n = model.site_count();
    using Site = typename M::Site;
    EPResult<typename M::Posterior, Site> result{model.prior(), {}, 0.0, 0, false, {}};
    result.sites.reserve(n);
    for (std::size_t i = 0; i < n; ++i) result.sites.push_back(model.vacuous_site(i));

    detail::SweepOrder schedule(opts.schedule, n);
    OpTally tally;
    for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (std::size_t i : schedule.next()) {
            auto cavity = model.cavity(result.posterior,
                                       std::span<const Site>(result.sites), i, tally);
            if (!cavity) {
                ++result.diagnostics.improper_cavities;
                if (!opts.skip_improper_cavity) {
                    throw Error("improper cavity at site " + std::to_string(i));
                }
                ++result.diagnostics.skipped_sites;
                continue;
            }
            auto upd = model.update(*cavity, i, tally);
            if (opts.damping < 1.0) {
                Site damped = model.damp(result.sites[i], upd.site, opts.damping);
                result.posterior = model.include(*cavity, damped, tally);
                max_change = std::max(max_change, model.site_change(result.sites[i], damped));
                result.sites[i] = std::move(damped);
            } else {
                max_change = std::max(max_change, model.site_change(result.sites[i], upd.site));
                result.posterior = std::move(upd.posterior);
                result.sites[i] = std::move(upd.site);
            }
        }
        result.sweeps = sweep;
        result.diagnostics.last_change = max_change;
        if (observer) {
            observer(SweepSnapshot<M>{sweep, result.posterior, result.sites, tally.count,
                                      max_change});
        }
        if (max_change < opts.tolerance) {
            result.converged = true;
            break;
        }
    }
    result.log_evidence = model.log_evidence(result.posterior, result.sites);
    result.diagnostics.operations = tally.count;
    return result;
}

// ---------------------------------------------------------------------------
// Energy function and fixed-point diagnostics.

/// Models whose approximating family is an exponential family with prior
/// p(x) treated exactly, q(x) proportional to p(x) exp(sum_j f_j(x) eta_j).
///
///   natural(q)                 eta of q, as a flat vector (prior included)
///   site_natural(s)            eta contribution of one site
///   log_prior_integral(eta)    log int p(x) exp(f(x).eta) dx; nullopt if divergent
///   sufficient_statistics(q)   E_q[f]
///   tilted_statistics_quadrature(cavity, i)
///                              E_p[f] of the tilted cavity * t_i by quadrature
template <class M>
concept ExponentialFamilyModel =
    SiteModel<M> && requires(const M& m, const typename M::Posterior& q,
                             const typename M::Site& s, const Vector& eta, std::size_t i) {
        { m.natural(q) } -> std::convertible_to<Vector>;
        { m.site_natural(s) } -> std::convertible_to<Vector>;
        { m.log_prior_integral(eta) } -> std::same_as<std::optional<double>>;
        { m.sufficient_statistics(q) } -> std::convertible_to<Vector>;
        { m.tilted_statistics_quadrature(q, i) } -> std::convertible_to<Vector>;
    };

struct FixedPointReport {
    /// max_j |E_q[f_j] - E_p_i[f_j]| per site; nullopt when the cavity is improper.
    std::vector<std::optional<double>> residuals;
    /// max_j |analytic - quadrature| tilted statistics per site.
    std::vector<std::optional<double>> oracle_discrepancy;

    double max_residual() const {
        double m = 0.0;
        for (const auto& r : residuals) {
            if (r) m = std::max(m, *r);
        }
        return m;
    }
    std::size_t unevaluable() const {
        return static_cast<std::size_t>(
            std::count_if(residuals.begin(), residuals.end(), [](const auto& r) { return !r; }));
    }
};

struct EnergyReport {
    /// Value of the min-max objective at (nu, lambda) recovered from q and its
    /// cavities; NaN when some site is unevaluable.
    double objective = 0.0;
    /// max_j |(n - 1) nu_j - sum_i lambda_ij|
    double constraint_residual = 0.0;
    std::vector<std::optional<double>> moment_residuals;
    std::vector<bool> unevaluable;
};

template <ExponentialFamilyModel M>
FixedPointReport check_fixed_point(const M& model, const typename M::Posterior& posterior,
                                   std::span<const typename M::Site> sites) {
    const std::size_t n = model.site_count();
    FixedPointReport report;
    report.residuals.resize(n);
    report.oracle_discrepancy.resize(n);
    const Vector stats_q = model.sufficient_statistics(posterior);
    OpTally scratch;
    for (std::size_t i = 0; i < n; ++i) {
        auto cavity = model.cavity(posterior, sites, i, scratch);
        if (!cavity) continue;
        const auto upd = model.update(*cavity, i, scratch);
        const Vector tilted = model.sufficient_statistics(upd.posterior);
        report.residuals[i] = (stats_q - tilted).cwiseAbs().maxCoeff();
        const Vector oracle = model.tilted_statistics_quadrature(*cavity, i);
        report.oracle_discrepancy[i] = (oracle - tilted).cwiseAbs().maxCoeff();
    }
    return report;
}

template <ExponentialFamilyModel M>
EnergyReport ep_energy(const M& model, const typename M::Posterior& posterior,
                       std::span<const typename M::Site> sites) {
    const std::size_t n = model.site_count();
    EnergyReport report;
    report.unevaluable.assign(n, false);

    const Vector eta_prior = model.natural(model.prior());
    const Vector nu = model.natural(posterior) - eta_prior;
    Vector lambda_sum = Vector::Zero(nu.size());
    std::vector<Vector> lambdas;
    lambdas.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        lambdas.push_back(nu - model.site_natural(sites[i]));
        lambda_sum += lambdas.back();
    }
    const double nm1 = static_cast<double>(n) - 1.0;
    report.constraint_residual = n == 0 ? 0.0 : (nm1 * nu - lambda_sum).cwiseAbs().maxCoeff();

    double objective = 0.0;
    if (n > 1) {
        const auto a_nu = model.log_prior_integral(nu);
        objective = a_nu ? nm1 * *a_nu : std::numeric_limits<double>::quiet_NaN();
    }
    OpTally scratch;
    for (std::size_t i = 0; i < n; ++i) {
        auto cavity = model.cavity(posterior, sites, i, scratch);
        const auto a_lambda = model.log_prior_integral(lambdas[i]);
        if (!cavity || !a_lambda) {
            report.unevaluable[i] = true;
            objective = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        const auto upd = model.update(*cavity, i, scratch);
        objective -= *a_lambda + upd.log_z;
    }
    report.objective = objective;
    report.moment_residuals = check_fixed_point(model, posterior, sites).residuals;
    return report;
}

}  // namespace epinfer
