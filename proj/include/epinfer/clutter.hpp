#pragma once

// Gaussian mean estimation in clutter: y ~ (1 - w) N(x, I) + w N(0, c I) with a
// N(0, v0 I) prior on x, approximated by a spherical Gaussian.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "epinfer/engine.hpp"
#include "epinfer/gaussian.hpp"

namespace epinfer {

struct ClutterModel {
    std::vector<Vector> data;
    double w = 0.5;
    double prior_variance = 100.0;
    double clutter_variance = 10.0;
    Index d = 1;

    /// Throws on inconsistent dimensions or w outside [0, 1].
    void validate() const;
    std::size_t size() const { return data.size(); }
};

struct ClutterDataSpec {
    Vector x_true;
    std::size_t n = 20;
    double w = 0.5;
    Index d = 1;
    std::uint64_t seed = 0;
    double prior_variance = 100.0;
    double clutter_variance = 10.0;
};

struct ClutterMoments {
    SphericalGaussian posterior;
    double z = 0.0;
    double log_z = 0.0;
    /// Posterior probability that y is not clutter.
    double r = 0.0;
};

/// Projects cavity * p(y | x) onto a spherical Gaussian by matching E[x] and
/// E[x^T x]. Throws "zero normalizer" if the observation has no mass.
ClutterMoments clutter_moment_match(const SphericalGaussian& cavity, const Vector& y, double w,
                                    double clutter_variance = 10.0, OpTally* tally = nullptr);

/// log p(D) from converged sites in the scale/mean/variance form:
///   (2 pi v_x)^{d/2} exp(B / 2) prod_i s_i,  B = |m_x|^2 / v_x - sum_i |m_i|^2 / v_i
/// with the prior included as site 0. Vacuous sites contribute nothing.
double clutter_ep_evidence(std::span<const NaturalSpherical> sites,
                           const SphericalGaussian& posterior, double prior_variance = 100.0);

ClutterModel generate_clutter_data(const ClutterDataSpec& spec);

/// log p(y | x) for one observation.
double clutter_log_likelihood(const ClutterModel& model, const Vector& x, std::size_t i);

/// Engine binding. The prior term is incorporated exactly; sites are the n
/// data terms.
class ClutterBinding {
public:
    using Posterior = SphericalGaussian;
    using Site = NaturalSpherical;

    explicit ClutterBinding(const ClutterModel& model);

    std::size_t site_count() const { return model_->size(); }
    SphericalGaussian prior() const;
    NaturalSpherical vacuous_site(std::size_t) const { return NaturalSpherical::vacuous(model_->d); }
    std::optional<SphericalGaussian> cavity(const SphericalGaussian& q,
                                            std::span<const NaturalSpherical> sites,
                                            std::size_t i, OpTally& tally) const;
    SiteUpdate<SphericalGaussian, NaturalSpherical> update(const SphericalGaussian& cavity,
                                                           std::size_t i, OpTally& tally) const;
    SphericalGaussian include(const SphericalGaussian& cavity, const NaturalSpherical& site,
                              OpTally& tally) const;
    NaturalSpherical damp(const NaturalSpherical& a, const NaturalSpherical& b,
                          double gamma) const {
        return apply_damping(a, b, gamma);
    }
    double site_change(const NaturalSpherical& a, const NaturalSpherical& b) const;
    double log_evidence(const SphericalGaussian& q, std::span<const NaturalSpherical> sites) const;
    double log_base_measure() const { return 0.0; }

    // Exponential-family view: f(x) = (x, x^T x), eta = (shift, -precision / 2).
    Vector natural(const SphericalGaussian& q) const;
    Vector site_natural(const NaturalSpherical& s) const;
    std::optional<double> log_prior_integral(const Vector& eta) const;
    Vector sufficient_statistics(const SphericalGaussian& q) const;
    Vector tilted_statistics_quadrature(const SphericalGaussian& cavity, std::size_t i) const;

    const ClutterModel& model() const { return *model_; }

private:
    const ClutterModel* model_;
};

static_assert(ExponentialFamilyModel<ClutterBinding>);

/// Dataset CSV: header "y1,...,yd", one row per observation.
void write_clutter_csv(const std::filesystem::path& path, const ClutterModel& model);
std::vector<Vector> read_clutter_csv(const std::filesystem::path& path);
nlohmann::json clutter_spec_json(const ClutterDataSpec& spec);

}  // namespace epinfer
