#pragma once

#include <optional>
#include <span>

#include "epinfer/core.hpp"

namespace epinfer {

/// N(mean, variance * I). variance may be +inf for the vacuous (flat) belief.
struct SphericalGaussian {
    Vector mean;
    double variance = 1.0;

    Index dim() const { return mean.size(); }
};

struct FullGaussian {
    Vector mean;
    Matrix covariance;

    Index dim() const { return mean.size(); }
};

/// Spherical site exp(log_constant - precision/2 |x|^2 + shift.x).
///
/// Stored in natural parameters so that zero and negative precisions are
/// representable. The scale/mean/variance form s exp(-|x - m|^2 / 2v) is a
/// derived view; log_constant is its exponential-family constant, so that
/// convex combinations of sites stay geometric mixtures.
struct NaturalSpherical {
    double precision = 0.0;
    Vector shift;
    double log_constant = 0.0;

    static NaturalSpherical vacuous(Index dim);
    /// The normalized density N(g.mean, g.variance I) written as a site.
    static NaturalSpherical from_density(const SphericalGaussian& g);
    /// Site with the given precision, mean and log scale factor log s.
    static NaturalSpherical from_scale(double precision, const Vector& mean, double log_scale);

    Index dim() const { return shift.size(); }
    bool is_vacuous() const { return precision == 0.0 && shift.isZero(0.0); }
    /// 1/precision; +inf for a vacuous site.
    double variance() const;
    Vector mean() const;
    /// log s in the s exp(-|x - m|^2 / 2v) form.
    double log_scale() const;
    /// log of the site evaluated at x.
    double log_value(const Vector& x) const;
};

/// Rank-one site exp(log_constant - precision/2 (w.x)^2 + shift (w.x)) along a
/// fixed direction x. Equivalent to s exp(-(w.x - m)^2 / 2v).
struct RankOneSite {
    Vector direction;
    double precision = 0.0;
    double shift = 0.0;
    double log_constant = 0.0;

    static RankOneSite vacuous(const Vector& direction);
    static RankOneSite from_scale(const Vector& direction, double precision, double mean,
                                  double log_scale);

    bool is_vacuous() const { return precision == 0.0 && shift == 0.0; }
    double variance() const;
    double mean() const;
    double log_scale() const;
    double log_value(const Vector& w) const;
};

template <class G>
struct Combined {
    G posterior;
    double log_normalizer = 0.0;
};

/// N(y; m, V) and its log. Both throw "degenerate covariance" when V is not
/// positive definite.
double normal_pdf(const Vector& y, const Vector& m, const Matrix& V);
double log_normal_pdf(const Vector& y, const Vector& m, const Matrix& V);
double log_normal_pdf(const Vector& y, const Vector& m, double variance);

/// Normalized product of spherical sites and the log of the integral of the
/// unnormalized product. Throws "improper product" if the total precision is
/// not positive.
Combined<SphericalGaussian> combine_sites(std::span<const NaturalSpherical> sites, Index dim,
                                          OpTally* tally = nullptr);

/// Product of an exactly normalized prior and rank-one sites. Throws "improper
/// product" if the summed precision matrix is not positive definite.
Combined<FullGaussian> combine_sites(const FullGaussian& prior,
                                     std::span<const RankOneSite> sites,
                                     OpTally* tally = nullptr);

/// Cavity q / site, or nullopt when the remaining precision is not positive.
std::optional<SphericalGaussian> divide_out(const SphericalGaussian& posterior,
                                            const NaturalSpherical& site,
                                            OpTally* tally = nullptr);
std::optional<FullGaussian> divide_out(const FullGaussian& posterior, const RankOneSite& site,
                                       OpTally* tally = nullptr);

/// Normalized q * site. Throws "improper product" when the result is improper.
SphericalGaussian multiply(const SphericalGaussian& q, const NaturalSpherical& site,
                           OpTally* tally = nullptr);
FullGaussian multiply(const FullGaussian& q, const RankOneSite& site, OpTally* tally = nullptr);

/// The site Z * posterior / cavity.
NaturalSpherical site_from_ratio(const SphericalGaussian& posterior,
                                 const SphericalGaussian& cavity, double log_z,
                                 OpTally* tally = nullptr);

/// The rank-one site Z * posterior / cavity, where posterior and cavity differ
/// only along `direction`. Described by the 1-D marginals of w.direction.
RankOneSite site_from_ratio(const Vector& direction, double posterior_mean,
                            double posterior_variance, double cavity_mean,
                            double cavity_variance, double log_z);

/// Convex combination (1 - gamma) old + gamma new in natural parameters.
/// gamma must lie in (0, 1].
NaturalSpherical apply_damping(const NaturalSpherical& old_site,
                               const NaturalSpherical& new_site, double gamma);
RankOneSite apply_damping(const RankOneSite& old_site, const RankOneSite& new_site,
                          double gamma);

/// (A + A^T) / 2 in place.
void symmetrize(Matrix& a);

}  // namespace epinfer
