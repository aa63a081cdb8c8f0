#include "epinfer/gaussian.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "epinfer/special.hpp"

namespace epinfer {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_gamma(double gamma) {
    if (!(gamma > 0.0 && gamma <= 1.0)) {
        throw Error("damping factor must lie in (0, 1], got " + std::to_string(gamma));
    }
}

// q * exp(-dprec/2 (w.x)^2 + dshift (w.x)), or nullopt if improper.
std::optional<FullGaussian> rank_one_update(const FullGaussian& q, const Vector& x, double dprec,
                                            double dshift, OpTally* tally) {
    const Index d = q.dim();
    const Vector u = q.covariance * x;
    tally_matvec(tally, d);
    const double s = x.dot(u);
    const double xm = x.dot(q.mean);
    tally_vector(tally, d);
    tally_vector(tally, d);
    const double denom = 1.0 + dprec * s;
    if (!(denom > 0.0)) {
        return std::nullopt;
    }
    FullGaussian out;
    out.covariance = q.covariance;
    out.covariance.noalias() -= (dprec / denom) * u * u.transpose();
    tally_rank_one(tally, d);
    symmetrize(out.covariance);
    tally_symmetrize(tally, d);
    out.mean = q.mean + u * ((dshift - dprec * xm) / denom);
    tally_vector(tally, d);
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Site views

NaturalSpherical NaturalSpherical::vacuous(Index dim) {
    return NaturalSpherical{0.0, Vector::Zero(dim), 0.0};
}

NaturalSpherical NaturalSpherical::from_density(const SphericalGaussian& g) {
    if (!(g.variance > 0.0) || !std::isfinite(g.variance)) {
        throw Error("degenerate covariance: site from density needs finite positive variance");
    }
    const double d = static_cast<double>(g.dim());
    NaturalSpherical s;
    s.precision = 1.0 / g.variance;
    s.shift = g.mean / g.variance;
    s.log_constant = -0.5 * d * (kLog2Pi + std::log(g.variance)) -
                     0.5 * g.mean.squaredNorm() / g.variance;
    return s;
}

NaturalSpherical NaturalSpherical::from_scale(double precision, const Vector& mean,
                                              double log_scale) {
    NaturalSpherical s;
    s.precision = precision;
    s.shift = precision * mean;
    s.log_constant = log_scale - 0.5 * precision * mean.squaredNorm();
    return s;
}

double NaturalSpherical::variance() const { return precision == 0.0 ? kInf : 1.0 / precision; }

Vector NaturalSpherical::mean() const {
    return precision == 0.0 ? Vector::Zero(dim()) : Vector(shift / precision);
}

double NaturalSpherical::log_scale() const {
    return precision == 0.0 ? log_constant
                            : log_constant + 0.5 * shift.squaredNorm() / precision;
}

double NaturalSpherical::log_value(const Vector& x) const {
    return log_constant - 0.5 * precision * x.squaredNorm() + shift.dot(x);
}

RankOneSite RankOneSite::vacuous(const Vector& direction) {
    if (direction.isZero(0.0)) {
        throw Error("rank-one site direction must be non-zero");
    }
    return RankOneSite{direction, 0.0, 0.0, 0.0};
}

RankOneSite RankOneSite::from_scale(const Vector& direction, double precision, double mean,
                                    double log_scale) {
    RankOneSite s = vacuous(direction);
    s.precision = precision;
    s.shift = precision * mean;
    s.log_constant = log_scale - 0.5 * precision * mean * mean;
    return s;
}

double RankOneSite::variance() const { return precision == 0.0 ? kInf : 1.0 / precision; }

double RankOneSite::mean() const { return precision == 0.0 ? 0.0 : shift / precision; }

double RankOneSite::log_scale() const {
    return precision == 0.0 ? log_constant : log_constant + 0.5 * shift * shift / precision;
}

double RankOneSite::log_value(const Vector& w) const {
    const double u = direction.dot(w);
    return log_constant - 0.5 * precision * u * u + shift * u;
}

// ---------------------------------------------------------------------------
// Densities

double log_normal_pdf(const Vector& y, const Vector& m, const Matrix& V) {
    if (y.size() != m.size() || V.rows() != m.size() || V.cols() != m.size()) {
        throw Error("dimension mismatch in normal_pdf");
    }
    Eigen::LLT<Matrix> llt(V);
    if (llt.info() != Eigen::Success) {
        throw Error("degenerate covariance");
    }
    const Matrix& L = llt.matrixL();
    double log_det = 0.0;
    for (Index i = 0; i < L.rows(); ++i) {
        if (!(L(i, i) > 0.0)) throw Error("degenerate covariance");
        log_det += 2.0 * std::log(L(i, i));
    }
    const Vector z = llt.matrixL().solve(y - m);
    return -0.5 * (static_cast<double>(m.size()) * kLog2Pi + log_det + z.squaredNorm());
}

double normal_pdf(const Vector& y, const Vector& m, const Matrix& V) {
    return std::exp(log_normal_pdf(y, m, V));
}

double log_normal_pdf(const Vector& y, const Vector& m, double variance) {
    if (!(variance > 0.0) || !std::isfinite(variance)) {
        throw Error("degenerate covariance");
    }
    const double d = static_cast<double>(m.size());
    return -0.5 * (d * (kLog2Pi + std::log(variance)) + (y - m).squaredNorm() / variance);
}

// ---------------------------------------------------------------------------
// Products and quotients

Combined<SphericalGaussian> combine_sites(std::span<const NaturalSpherical> sites, Index dim,
                                          OpTally* tally) {
    double precision = 0.0;
    double log_constant = 0.0;
    Vector shift = Vector::Zero(dim);
    for (const auto& s : sites) {
        if (s.dim() != dim) throw Error("dimension mismatch in combine_sites");
        precision += s.precision;
        shift += s.shift;
        log_constant += s.log_constant;
        tally_vector(tally, dim);
    }
    if (!(precision > 0.0)) {
        throw Error("improper product: total precision " + std::to_string(precision));
    }
    const double d = static_cast<double>(dim);
    Combined<SphericalGaussian> out;
    out.posterior.variance = 1.0 / precision;
    out.posterior.mean = shift / precision;
    out.log_normalizer = log_constant + 0.5 * d * (kLog2Pi - std::log(precision)) +
                         0.5 * shift.squaredNorm() / precision;
    return out;
}

Combined<FullGaussian> combine_sites(const FullGaussian& prior,
                                     std::span<const RankOneSite> sites, OpTally* tally) {
    const Index d = prior.dim();
    Eigen::LLT<Matrix> prior_llt(prior.covariance);
    if (prior_llt.info() != Eigen::Success) throw Error("degenerate covariance");
    Matrix precision = prior_llt.solve(Matrix::Identity(d, d));
    const Vector prior_shift = precision * prior.mean;
    Vector shift = prior_shift;
    double log_constant = 0.0;
    for (const auto& s : sites) {
        if (s.direction.size() != d) throw Error("dimension mismatch in combine_sites");
        precision.noalias() += s.precision * s.direction * s.direction.transpose();
        shift += s.shift * s.direction;
        log_constant += s.log_constant;
        tally_rank_one(tally, d);
        tally_vector(tally, d);
    }
    symmetrize(precision);
    Eigen::LLT<Matrix> llt(precision);
    if (llt.info() != Eigen::Success) {
        throw Error("improper product: summed precision is not positive definite");
    }
    double log_det_precision = 0.0;
    const Matrix& L = llt.matrixL();
    for (Index i = 0; i < d; ++i) log_det_precision += 2.0 * std::log(L(i, i));
    double log_det_prior = 0.0;
    const Matrix& L0 = prior_llt.matrixL();
    for (Index i = 0; i < d; ++i) log_det_prior += 2.0 * std::log(L0(i, i));

    Combined<FullGaussian> out;
    out.posterior.covariance = llt.solve(Matrix::Identity(d, d));
    symmetrize(out.posterior.covariance);
    out.posterior.mean = llt.solve(shift);
    out.log_normalizer = log_constant - 0.5 * prior.mean.dot(prior_shift) -
                         0.5 * log_det_prior - 0.5 * log_det_precision +
                         0.5 * shift.dot(out.posterior.mean);
    return out;
}

std::optional<SphericalGaussian> divide_out(const SphericalGaussian& posterior,
                                            const NaturalSpherical& site, OpTally* tally) {
    if (site.is_vacuous()) return posterior;
    const double precision = 1.0 / posterior.variance - site.precision;
    tally_scalar(tally);
    if (!(precision > 0.0)) return std::nullopt;
    SphericalGaussian cavity;
    cavity.variance = 1.0 / precision;
    cavity.mean = (posterior.mean / posterior.variance - site.shift) / precision;
    tally_vector(tally, posterior.dim());
    return cavity;
}

std::optional<FullGaussian> divide_out(const FullGaussian& posterior, const RankOneSite& site,
                                       OpTally* tally) {
    if (site.is_vacuous()) return posterior;
    return rank_one_update(posterior, site.direction, -site.precision, -site.shift, tally);
}

SphericalGaussian multiply(const SphericalGaussian& q, const NaturalSpherical& site,
                           OpTally* tally) {
    const double precision = 1.0 / q.variance + site.precision;
    if (!(precision > 0.0)) throw Error("improper product");
    SphericalGaussian out;
    out.variance = 1.0 / precision;
    out.mean = (q.mean / q.variance + site.shift) / precision;
    tally_vector(tally, q.dim());
    return out;
}

FullGaussian multiply(const FullGaussian& q, const RankOneSite& site, OpTally* tally) {
    auto out = rank_one_update(q, site.direction, site.precision, site.shift, tally);
    if (!out) throw Error("improper product");
    return *out;
}

NaturalSpherical site_from_ratio(const SphericalGaussian& posterior,
                                 const SphericalGaussian& cavity, double log_z, OpTally* tally) {
    const double d = static_cast<double>(posterior.dim());
    NaturalSpherical s;
    s.precision = 1.0 / posterior.variance - 1.0 / cavity.variance;
    s.shift = posterior.mean / posterior.variance - cavity.mean / cavity.variance;
    s.log_constant = log_z - 0.5 * d * std::log(posterior.variance / cavity.variance) -
                     0.5 * (posterior.mean.squaredNorm() / posterior.variance -
                            cavity.mean.squaredNorm() / cavity.variance);
    tally_vector(tally, posterior.dim());
    tally_vector(tally, posterior.dim());
    return s;
}

RankOneSite site_from_ratio(const Vector& direction, double posterior_mean,
                            double posterior_variance, double cavity_mean,
                            double cavity_variance, double log_z) {
    RankOneSite s = RankOneSite::vacuous(direction);
    s.precision = 1.0 / posterior_variance - 1.0 / cavity_variance;
    s.shift = posterior_mean / posterior_variance - cavity_mean / cavity_variance;
    s.log_constant = log_z - 0.5 * std::log(posterior_variance / cavity_variance) -
                     0.5 * (posterior_mean * posterior_mean / posterior_variance -
                            cavity_mean * cavity_mean / cavity_variance);
    return s;
}

NaturalSpherical apply_damping(const NaturalSpherical& old_site,
                               const NaturalSpherical& new_site, double gamma) {
    check_gamma(gamma);
    if (gamma == 1.0) return new_site;
    NaturalSpherical s;
    s.precision = (1.0 - gamma) * old_site.precision + gamma * new_site.precision;
    s.shift = (1.0 - gamma) * old_site.shift + gamma * new_site.shift;
    s.log_constant = (1.0 - gamma) * old_site.log_constant + gamma * new_site.log_constant;
    return s;
}

RankOneSite apply_damping(const RankOneSite& old_site, const RankOneSite& new_site,
                          double gamma) {
    check_gamma(gamma);
    if (gamma == 1.0) return new_site;
    RankOneSite s = new_site;
    s.precision = (1.0 - gamma) * old_site.precision + gamma * new_site.precision;
    s.shift = (1.0 - gamma) * old_site.shift + gamma * new_site.shift;
    s.log_constant = (1.0 - gamma) * old_site.log_constant + gamma * new_site.log_constant;
    return s;
}

void symmetrize(Matrix& a) {
    for (Index i = 0; i < a.rows(); ++i) {
        for (Index j = i + 1; j < a.cols(); ++j) {
            const double v = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = v;
            a(j, i) = v;
        }
    }
}

}  // namespace epinfer
