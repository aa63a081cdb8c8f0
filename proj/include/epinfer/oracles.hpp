#pragma once

// Brute-force ground truth used to check the analytic fast paths: adaptive
// quadrature of tilted distributions, 2^n enumeration of the clutter
// posterior, importance sampling from the prior and exhaustive enumeration of
// discrete networks. Nothing here calls into the EP code paths.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "epinfer/clutter.hpp"
#include "epinfer/core.hpp"
#include "epinfer/factor_graph.hpp"
#include "epinfer/gaussian.hpp"

namespace epinfer {

/// mt19937_64 with hand-written uniform and Box-Muller transforms, so streams
/// are identical on every platform and standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    /// Uniform on (0, 1).
    double uniform_open();
    double normal();
    std::uint64_t bits() { return engine_(); }
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

struct TiltedMoments {
    double z = 0.0;
    double mean = 0.0;
    double variance = 0.0;
};

/// Moments of term(x) N(x; cavity_mean, cavity_variance) by adaptive
/// Gauss-Kronrod quadrature over cavity_mean +- 12 standard deviations, widened
/// to include every feature point. Features are also used as panel breaks, so
/// discontinuities of the term must be listed. Throws "vanishing mass" when
/// Z < 1e-280.
TiltedMoments tilted_moments_quadrature(double cavity_mean, double cavity_variance,
                                        const std::function<double(double)>& term,
                                        std::span<const double> features = {},
                                        double rel_tol = 1e-12);

/// Adaptive 15-point Gauss-Kronrod integral of f over [a, b] to an absolute
/// tolerance.
double integrate_gk(const std::function<double(double)>& f, double a, double b, double abs_tol);

struct ClutterTilted {
    double z = 0.0;
    Vector mean;
    double second_moment = 0.0;  // E[x^T x]
    double variance = 0.0;       // spherical projection, trace(Cov) / d
};

/// Tilted moments of cavity * p(y | x) for the spherical clutter term, reduced to
/// 1-D quadratures along (y - m) and across it.
ClutterTilted clutter_tilted_quadrature(const SphericalGaussian& cavity, const Vector& y,
                                        double w, double clutter_variance);

struct DirectionalTilted {
    double z = 0.0;
    Vector mean;
    Matrix covariance;
};

/// Tilted moments of cavity * probit(w.x / sqrt(noise_variance)) by 1-D
/// quadrature along x and Gaussian conditioning. noise_variance = 0 is the step
/// function.
DirectionalTilted probit_tilted_quadrature(const FullGaussian& cavity, const Vector& x,
                                           double noise_variance);

struct ExactPosteriorSummary {
    double log_evidence = 0.0;
    Vector mean;
    Matrix covariance;
    std::size_t component_count = 0;
};

struct MixtureComponent {
    double log_weight = 0.0;  // log of (assignment probability * marginal likelihood)
    Vector mean;
    double variance = 0.0;
};

inline constexpr std::size_t kMaxExactClutterSize = 20;

/// All 2^n inlier/clutter assignments as Gaussian components. Components with
/// zero weight (w = 0 or w = 1) are dropped.
std::vector<MixtureComponent> clutter_components(const ClutterModel& model);

/// Exact evidence, posterior mean and covariance by enumeration. Refuses
/// n > 20.
ExactPosteriorSummary exact_clutter(const ClutterModel& model);

/// Closed-form evidence and posterior for w = 0.
ExactPosteriorSummary conjugate_clutter(const ClutterModel& model);

struct SampleEstimate {
    Vector value;
    Vector standard_error;
    std::size_t sample_count = 0;
    std::uint64_t seed = 0;
};

struct ImportanceResult {
    SampleEstimate evidence;  // linear scale; may underflow, see log_evidence
    double log_evidence = 0.0;
    /// standard error of the evidence estimate divided by the estimate.
    double evidence_relative_se = 0.0;
    SampleEstimate mean;
};

/// Importance sampling with the prior as proposal. Throws "degenerate weights"
/// if every weight is zero.
ImportanceResult importance_sampler(const std::function<double(const Vector&)>& log_likelihood,
                                    const FullGaussian& prior, std::size_t samples,
                                    std::uint64_t seed);

struct DiscreteExact {
    std::vector<std::vector<double>> marginals;
    double log_partition = 0.0;
};

inline constexpr std::uint64_t kMaxJointStates = 10'000'000;

/// Exact marginals and log partition by summing over every joint state.
DiscreteExact enumerate_discrete(const DiscreteFactorGraph& net);

}  // namespace epinfer
