#include "epinfer/oracles.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <limits>

#include "epinfer/special.hpp"

namespace epinfer {

// ---------------------------------------------------------------------------
// Rng

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform_open() {
    return (static_cast<double>(engine_() >> 12) + 0.5) * 0x1.0p-52;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

// ---------------------------------------------------------------------------
// Quadrature

namespace {

constexpr std::array<double, 8> kKronrodNodes = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr std::array<double, 8> kKronrodWeights = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
// Gauss weights for the 7-point rule at Kronrod nodes 1, 3, 5, 7.
constexpr std::array<double, 4> kGaussWeights = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

constexpr int kMaxDepth = 40;

using Moments3 = Eigen::Array3d;

template <class F>
void gk15(const F& f, double a, double b, Moments3& kronrod, Moments3& gauss) {
    const double mid = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    const Moments3 center = f(mid);
    kronrod = kKronrodWeights[7] * center;
    gauss = kGaussWeights[3] * center;
    for (int j = 0; j < 7; ++j) {
        const double dx = half * kKronrodNodes[j];
        const Moments3 pair = f(mid - dx) + f(mid + dx);
        kronrod += kKronrodWeights[j] * pair;
        if (j % 2 == 1) gauss += kGaussWeights[j / 2] * pair;
    }
    kronrod *= half;
    gauss *= half;
}

template <class F>
Moments3 adaptive(const F& f, double a, double b, const Moments3& abs_tol, int depth) {
    Moments3 kronrod, gauss;
    gk15(f, a, b, kronrod, gauss);
    const Moments3 err = (kronrod - gauss).abs();
    if (depth >= kMaxDepth || (err <= abs_tol).all()) return kronrod;
    const double mid = 0.5 * (a + b);
    return adaptive(f, a, mid, 0.5 * abs_tol, depth + 1) +
           adaptive(f, mid, b, 0.5 * abs_tol, depth + 1);
}

template <class F>
Moments3 integrate_panels(const F& f, const std::vector<double>& breaks, const Moments3& abs_tol) {
    Moments3 total = Moments3::Zero();
    const double panels = static_cast<double>(breaks.size() - 1);
    for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
        if (breaks[k + 1] > breaks[k]) {
            total += adaptive(f, breaks[k], breaks[k + 1], abs_tol / panels, 0);
        }
    }
    return total;
}

}  // namespace

double integrate_gk(const std::function<double(double)>& f, double a, double b, double abs_tol) {
    auto g = [&](double x) { return Moments3(f(x), 0.0, 0.0); };
    return adaptive(g, a, b, Moments3::Constant(abs_tol), 0)(0);
}

TiltedMoments tilted_moments_quadrature(double cavity_mean, double cavity_variance,
                                        const std::function<double(double)>& term,
                                        std::span<const double> features, double rel_tol) {
    if (!(cavity_variance > 0.0) || !std::isfinite(cavity_variance)) {
        throw Error("degenerate covariance: quadrature cavity variance must be finite and positive");
    }
    const double sd = std::sqrt(cavity_variance);
    double lo = cavity_mean - 12.0 * sd;
    double hi = cavity_mean + 12.0 * sd;
    for (double p : features) {
        lo = std::min(lo, p);
        hi = std::max(hi, p);
    }
    std::vector<double> breaks = {lo, cavity_mean, hi};
    for (double p : features) breaks.push_back(p);
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

    const double log_norm = -0.5 * (kLog2Pi + std::log(cavity_variance));
    auto density = [&](double x) {
        const double u = (x - cavity_mean) / sd;
        return term(x) * std::exp(log_norm - 0.5 * u * u);
    };

    // Pass 1: mass and first moment, standardized about the cavity mean.
    auto first = [&](double x) {
        const double p = density(x);
        const double u = (x - cavity_mean) / sd;
        return Moments3(p, p * u, 0.0);
    };
    // A trapezoid mass estimate on a fine grid sets the absolute tolerance for
    // the adaptive passes.
    constexpr int kGrid = 4000;
    const double step = (hi - lo) / kGrid;
    double rough = 0.5 * (density(lo) + density(hi));
    for (int k = 1; k < kGrid; ++k) rough += density(lo + k * step);
    rough *= step;
    if (!(rough > 1e-280)) throw Error("vanishing mass in tilted quadrature");
    const Moments3 tol1 = Moments3::Constant(rel_tol * rough);
    const Moments3 m1 = integrate_panels(first, breaks, tol1);
    const double z = m1(0);
    if (!(z > 1e-280)) throw Error("vanishing mass in tilted quadrature");
    const double mean = cavity_mean + sd * m1(1) / z;

    // Pass 2: central second moment about the tilted mean.
    auto second = [&](double x) {
        const double p = density(x);
        const double u = (x - mean) / sd;
        return Moments3(p, p * u, p * u * u);
    };
    const Moments3 m2 = integrate_panels(second, breaks, tol1);
    const double c1 = m2(1) / m2(0);
    const double variance = cavity_variance * (m2(2) / m2(0) - c1 * c1);
    return TiltedMoments{z, mean, variance};
}

// ---------------------------------------------------------------------------
// Model-specific tilted moments

ClutterTilted clutter_tilted_quadrature(const SphericalGaussian& cavity, const Vector& y,
                                        double w, double clutter_variance) {
    const Index d = cavity.dim();
    const double dd = static_cast<double>(d);
    const double v = cavity.variance;
    Vector e = y - cavity.mean;
    const double delta = e.norm();
    if (delta > 0.0) {
        e /= delta;
    } else {
        e = Vector::Unit(d, 0);
    }
    // x = m + t e + p with p orthogonal to e. The inlier term factorizes into
    // N(delta; t, 1) along e and N(0; p_j, 1) across it; the clutter term is
    // constant in x.
    const auto along = tilted_moments_quadrature(
        0.0, v, [delta](double t) { return std::exp(log_normal_pdf(delta, t, 1.0)); },
        std::array<double, 1>{delta});
    TiltedMoments across{1.0, 0.0, v};
    if (d > 1) {
        across = tilted_moments_quadrature(
            0.0, v, [](double p) { return std::exp(log_normal_pdf(0.0, p, 1.0)); });
    }
    const double log_in = (w < 1.0 ? std::log1p(-w) : -std::numeric_limits<double>::infinity()) +
                          std::log(along.z) + (dd - 1.0) * std::log(across.z);
    const double log_out =
        (w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity()) +
        log_normal_pdf(y, Vector::Zero(d), clutter_variance);
    const double log_z = log_add(log_in, log_out);
    const double rho = std::exp(log_in - log_z);

    const double et = rho * along.mean;
    const double et2 = rho * (along.variance + along.mean * along.mean + (dd - 1.0) * across.variance) +
                       (1.0 - rho) * dd * v;
    ClutterTilted out;
    out.z = std::exp(log_z);
    out.mean = cavity.mean + et * e;
    out.second_moment = cavity.mean.squaredNorm() + 2.0 * et * cavity.mean.dot(e) + et2;
    out.variance = (et2 - et * et) / dd;
    return out;
}

DirectionalTilted probit_tilted_quadrature(const FullGaussian& cavity, const Vector& x,
                                           double noise_variance) {
    const Vector u = cavity.covariance * x;
    const double mu = x.dot(cavity.mean);
    const double s2 = x.dot(u);
    TiltedMoments t;
    if (noise_variance == 0.0) {
        t = tilted_moments_quadrature(mu, s2, [](double a) { return a > 0.0 ? 1.0 : 0.0; },
                                      std::array<double, 1>{0.0});
    } else {
        const double scale = 1.0 / std::sqrt(noise_variance);
        t = tilted_moments_quadrature(mu, s2, [scale](double a) { return probit(a * scale); });
    }
    DirectionalTilted out;
    out.z = t.z;
    out.mean = cavity.mean + u * ((t.mean - mu) / s2);
    out.covariance = cavity.covariance - u * u.transpose() * ((s2 - t.variance) / (s2 * s2));
    return out;
}

// ---------------------------------------------------------------------------
// Clutter enumeration

std::vector<MixtureComponent> clutter_components(const ClutterModel& model) {
    model.validate();
    const std::size_t n = model.size();
    if (n > kMaxExactClutterSize) {
        throw Error("exact clutter enumeration refused for n = " + std::to_string(n) +
                    " > 20; use importance sampling");
    }
    const Index d = model.d;
    const double dd = static_cast<double>(d);
    const double v0 = model.prior_variance;
    const double log_w = model.w > 0.0 ? std::log(model.w) : -std::numeric_limits<double>::infinity();
    const double log_1mw =
        model.w < 1.0 ? std::log1p(-model.w) : -std::numeric_limits<double>::infinity();

    std::vector<double> log_clutter(n);
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) {
        log_clutter[i] = log_normal_pdf(model.data[i], Vector::Zero(d), model.clutter_variance);
        sq[i] = model.data[i].squaredNorm();
    }

    std::vector<MixtureComponent> out;
    const std::uint64_t total = std::uint64_t{1} << n;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
        const int k = std::popcount(mask);
        if ((k > 0 && model.w == 1.0) || (static_cast<std::size_t>(k) < n && model.w == 0.0)) {
            continue;
        }
        Vector sum = Vector::Zero(d);
        double sum_sq = 0.0;
        double log_weight = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask >> i & 1U) {
                sum += model.data[i];
                sum_sq += sq[i];
                log_weight += log_1mw;
            } else {
                log_weight += log_w + log_clutter[i];
            }
        }
        const double precision = 1.0 / v0 + k;
        log_weight += -0.5 * k * dd * kLog2Pi - 0.5 * dd * std::log(v0 * precision) -
                      0.5 * sum_sq + 0.5 * sum.squaredNorm() / precision;
        out.push_back(MixtureComponent{log_weight, sum / precision, 1.0 / precision});
    }
    return out;
}

ExactPosteriorSummary exact_clutter(const ClutterModel& model) {
    const auto components = clutter_components(model);
    const Index d = model.d;
    std::vector<double> logs;
    logs.reserve(components.size());
    for (const auto& c : components) logs.push_back(c.log_weight);
    const double log_z = log_sum_exp(logs);

    ExactPosteriorSummary out;
    out.log_evidence = log_z;
    out.component_count = components.size();
    out.mean = Vector::Zero(d);
    Matrix second = Matrix::Zero(d, d);
    for (const auto& c : components) {
        const double p = std::exp(c.log_weight - log_z);
        out.mean += p * c.mean;
        second += p * (c.variance * Matrix::Identity(d, d) + c.mean * c.mean.transpose());
    }
    out.covariance = second - out.mean * out.mean.transpose();
    symmetrize(out.covariance);
    return out;
}

ExactPosteriorSummary conjugate_clutter(const ClutterModel& model) {
    model.validate();
    const Index d = model.d;
    const double dd = static_cast<double>(d);
    const double v0 = model.prior_variance;
    const double n = static_cast<double>(model.size());
    Vector sum = Vector::Zero(d);
    double sum_sq = 0.0;
    for (const auto& y : model.data) {
        sum += y;
        sum_sq += y.squaredNorm();
    }
    const double precision = 1.0 / v0 + n;
    ExactPosteriorSummary out;
    out.component_count = 1;
    out.mean = sum / precision;
    out.covariance = Matrix::Identity(d, d) / precision;
    out.log_evidence = -0.5 * n * dd * kLog2Pi - 0.5 * dd * std::log(v0 * precision) -
                       0.5 * sum_sq + 0.5 * sum.squaredNorm() / precision;
    return out;
}

// ---------------------------------------------------------------------------
// Importance sampling

ImportanceResult importance_sampler(const std::function<double(const Vector&)>& log_likelihood,
                                    const FullGaussian& prior, std::size_t samples,
                                    std::uint64_t seed) {
    if (samples < 1) throw Error("importance sampler needs at least one sample");
    const Index d = prior.dim();
    Eigen::LLT<Matrix> llt(prior.covariance);
    if (llt.info() != Eigen::Success) throw Error("degenerate covariance");
    const Matrix L = llt.matrixL();

    Rng rng(seed);
    std::vector<double> log_w(samples);
    Matrix draws(d, static_cast<Index>(samples));
    Vector z(d);
    for (std::size_t s = 0; s < samples; ++s) {
        for (Index j = 0; j < d; ++j) z(j) = rng.normal();
        draws.col(static_cast<Index>(s)) = prior.mean + L * z;
        log_w[s] = log_likelihood(draws.col(static_cast<Index>(s)));
    }
    const double hi = *std::max_element(log_w.begin(), log_w.end());
    if (!std::isfinite(hi)) throw Error("degenerate weights: every importance weight is zero");

    const double count = static_cast<double>(samples);
    double sum = 0.0;
    double sum_sq = 0.0;
    Vector weighted = Vector::Zero(d);
    std::vector<double> scaled(samples);
    for (std::size_t s = 0; s < samples; ++s) {
        scaled[s] = std::exp(log_w[s] - hi);
        sum += scaled[s];
        sum_sq += scaled[s] * scaled[s];
        weighted += scaled[s] * draws.col(static_cast<Index>(s));
    }
    const double mean_w = sum / count;
    const double var_w = std::max(0.0, sum_sq / count - mean_w * mean_w);

    ImportanceResult out;
    out.log_evidence = hi + std::log(mean_w);
    out.evidence_relative_se = std::sqrt(var_w / count) / mean_w;
    const double evidence = std::exp(out.log_evidence);
    out.evidence = SampleEstimate{Vector::Constant(1, evidence),
                                  Vector::Constant(1, evidence * out.evidence_relative_se),
                                  samples, seed};

    const Vector post_mean = weighted / sum;
    Vector se2 = Vector::Zero(d);
    for (std::size_t s = 0; s < samples; ++s) {
        const double p = scaled[s] / sum;
        se2 += (p * p) * (draws.col(static_cast<Index>(s)) - post_mean).cwiseAbs2();
    }
    out.mean = SampleEstimate{post_mean, se2.cwiseSqrt(), samples, seed};
    return out;
}

// ---------------------------------------------------------------------------
// Discrete enumeration

DiscreteExact enumerate_discrete(const DiscreteFactorGraph& net) {
    const std::uint64_t states = net.joint_state_count();
    if (states > kMaxJointStates) {
        throw Error("state space too large for enumeration: " + std::to_string(states) +
                    " joint states");
    }
    const std::size_t nv = net.variable_count();
    std::vector<std::size_t> config(nv, 0);
    std::vector<double> log_p(states);

    auto factor_index = [&](const Factor& f) {
        std::size_t idx = 0;
        for (std::size_t k : f.scope) idx = idx * net.cardinality(k) + config[k];
        return idx;
    };
    auto advance = [&]() {
        for (std::size_t k = nv; k-- > 0;) {
            if (++config[k] < net.cardinality(k)) return;
            config[k] = 0;
        }
    };

    for (std::uint64_t s = 0; s < states; ++s) {
        double lp = 0.0;
        for (const auto& f : net.factors()) {
            const double t = f.table[factor_index(f)];
            lp += t > 0.0 ? std::log(t) : -std::numeric_limits<double>::infinity();
        }
        log_p[s] = lp;
        advance();
    }
    const double log_z = log_sum_exp(log_p);
    if (!std::isfinite(log_z)) throw Error("contradictory evidence: partition function is zero");

    DiscreteExact out;
    out.log_partition = log_z;
    out.marginals.resize(nv);
    for (std::size_t k = 0; k < nv; ++k) out.marginals[k].assign(net.cardinality(k), 0.0);
    std::fill(config.begin(), config.end(), 0);
    for (std::uint64_t s = 0; s < states; ++s) {
        const double p = std::exp(log_p[s] - log_z);
        for (std::size_t k = 0; k < nv; ++k) out.marginals[k][config[k]] += p;
        advance();
    }
    return out;
}

}  // namespace epinfer
