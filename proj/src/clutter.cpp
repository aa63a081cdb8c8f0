#include "epinfer/clutter.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "epinfer/oracles.hpp"
#include "epinfer/special.hpp"

namespace epinfer {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

}  // namespace

void ClutterModel::validate() const {
    if (d < 1) throw Error("clutter model dimension must be positive");
    if (!(w >= 0.0 && w <= 1.0)) throw Error("clutter ratio w must lie in [0, 1]");
    if (!(prior_variance > 0.0) || !(clutter_variance > 0.0)) {
        throw Error("prior and clutter variances must be positive");
    }
    for (const auto& y : data) {
        if (y.size() != d) throw Error("observation dimension does not match model dimension");
    }
}

ClutterMoments clutter_moment_match(const SphericalGaussian& cavity, const Vector& y, double w,
                                    double clutter_variance, OpTally* tally) {
    const Index d = cavity.dim();
    const double v = cavity.variance;
    const Vector diff = y - cavity.mean;
    tally_vector(tally, d);
    const double dist2 = diff.squaredNorm();
    tally_vector(tally, d);
    const double dd = static_cast<double>(d);

    const double log_inlier =
        safe_log(1.0 - w) - 0.5 * dd * (kLog2Pi + std::log(v + 1.0)) - 0.5 * dist2 / (v + 1.0);
    const double log_clutter = safe_log(w) - 0.5 * dd * (kLog2Pi + std::log(clutter_variance)) -
                               0.5 * y.squaredNorm() / clutter_variance;
    tally_vector(tally, d);
    const double log_z = log_add(log_inlier, log_clutter);
    if (!std::isfinite(log_z)) {
        throw Error("zero normalizer");
    }
    const double r = std::exp(log_inlier - log_z);

    ClutterMoments out;
    out.log_z = log_z;
    out.z = std::exp(log_z);
    out.r = r;
    out.posterior.mean = cavity.mean + (v * r / (v + 1.0)) * diff;
    tally_vector(tally, d);
    out.posterior.variance = v - r * v * v / (v + 1.0) +
                             r * (1.0 - r) * v * v * dist2 / (dd * (v + 1.0) * (v + 1.0));
    return out;
}

double clutter_ep_evidence(std::span<const NaturalSpherical> sites,
                           const SphericalGaussian& posterior, double prior_variance) {
    const double d = static_cast<double>(posterior.dim());
    // Prior as site 0: v0, m0 = 0, s0 = (2 pi v0)^{-d/2}.
    double sum_log_s = -0.5 * d * (kLog2Pi + std::log(prior_variance));
    double b = posterior.mean.squaredNorm() / posterior.variance;
    for (const auto& s : sites) {
        if (s.precision == 0.0) {
            sum_log_s += s.log_constant;
            continue;
        }
        const Vector m = s.mean();
        sum_log_s += s.log_scale();
        b -= m.squaredNorm() * s.precision;
    }
    return 0.5 * d * (kLog2Pi + std::log(posterior.variance)) + 0.5 * b + sum_log_s;
}

ClutterModel generate_clutter_data(const ClutterDataSpec& spec) {
    if (spec.x_true.size() != spec.d) throw Error("x_true dimension does not match d");
    ClutterModel model;
    model.w = spec.w;
    model.d = spec.d;
    model.prior_variance = spec.prior_variance;
    model.clutter_variance = spec.clutter_variance;
    model.validate();
    Rng rng(spec.seed);
    const double clutter_sd = std::sqrt(spec.clutter_variance);
    model.data.reserve(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) {
        const bool is_clutter = rng.uniform() < spec.w;
        Vector y(spec.d);
        for (Index j = 0; j < spec.d; ++j) {
            const double e = rng.normal();
            y(j) = is_clutter ? clutter_sd * e : spec.x_true(j) + e;
        }
        model.data.push_back(std::move(y));
    }
    return model;
}

double clutter_log_likelihood(const ClutterModel& model, const Vector& x, std::size_t i) {
    const Vector& y = model.data[i];
    const double inlier = safe_log(1.0 - model.w) + log_normal_pdf(y, x, 1.0);
    const double clutter =
        safe_log(model.w) + log_normal_pdf(y, Vector::Zero(model.d), model.clutter_variance);
    return log_add(inlier, clutter);
}

// ---------------------------------------------------------------------------

ClutterBinding::ClutterBinding(const ClutterModel& model) : model_(&model) { model.validate(); }

SphericalGaussian ClutterBinding::prior() const {
    return SphericalGaussian{Vector::Zero(model_->d), model_->prior_variance};
}

std::optional<SphericalGaussian> ClutterBinding::cavity(const SphericalGaussian& q,
                                                        std::span<const NaturalSpherical> sites,
                                                        std::size_t i, OpTally& tally) const {
    return divide_out(q, sites[i], &tally);
}

SiteUpdate<SphericalGaussian, NaturalSpherical> ClutterBinding::update(
    const SphericalGaussian& cavity, std::size_t i, OpTally& tally) const {
    auto mm = clutter_moment_match(cavity, model_->data[i], model_->w, model_->clutter_variance,
                                   &tally);
    NaturalSpherical site = site_from_ratio(mm.posterior, cavity, mm.log_z, &tally);
    return {std::move(mm.posterior), std::move(site), mm.log_z};
}

SphericalGaussian ClutterBinding::include(const SphericalGaussian& cavity,
                                          const NaturalSpherical& site, OpTally& tally) const {
    return multiply(cavity, site, &tally);
}

double ClutterBinding::site_change(const NaturalSpherical& a, const NaturalSpherical& b) const {
    double change = std::abs(a.precision - b.precision);
    if (a.shift.size() > 0) change = std::max(change, (a.shift - b.shift).cwiseAbs().maxCoeff());
    return change;
}

double ClutterBinding::log_evidence(const SphericalGaussian&,
                                    std::span<const NaturalSpherical> sites) const {
    std::vector<NaturalSpherical> all(sites.begin(), sites.end());
    all.push_back(NaturalSpherical::from_density(prior()));
    return combine_sites(all, model_->d).log_normalizer;
}

Vector ClutterBinding::natural(const SphericalGaussian& q) const {
    const Index d = model_->d;
    Vector eta(d + 1);
    eta.head(d) = q.mean / q.variance;
    eta(d) = -0.5 / q.variance;
    return eta;
}

Vector ClutterBinding::site_natural(const NaturalSpherical& s) const {
    const Index d = model_->d;
    Vector eta(d + 1);
    eta.head(d) = s.shift;
    eta(d) = -0.5 * s.precision;
    return eta;
}

std::optional<double> ClutterBinding::log_prior_integral(const Vector& eta) const {
    const Index d = model_->d;
    const double dd = static_cast<double>(d);
    const double v0 = model_->prior_variance;
    const double precision = 1.0 / v0 - 2.0 * eta(d);
    if (!(precision > 0.0)) return std::nullopt;
    const Vector h = eta.head(d);
    return -0.5 * dd * std::log(v0 * precision) + 0.5 * h.squaredNorm() / precision;
}

Vector ClutterBinding::sufficient_statistics(const SphericalGaussian& q) const {
    const Index d = model_->d;
    Vector s(d + 1);
    s.head(d) = q.mean;
    s(d) = q.mean.squaredNorm() + static_cast<double>(d) * q.variance;
    return s;
}

Vector ClutterBinding::tilted_statistics_quadrature(const SphericalGaussian& cavity,
                                                    std::size_t i) const {
    const auto t = clutter_tilted_quadrature(cavity, model_->data[i], model_->w,
                                             model_->clutter_variance);
    const Index d = model_->d;
    Vector s(d + 1);
    s.head(d) = t.mean;
    s(d) = t.second_moment;
    return s;
}

// ---------------------------------------------------------------------------

void write_clutter_csv(const std::filesystem::path& path, const ClutterModel& model) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    for (Index j = 0; j < model.d; ++j) out << (j ? "," : "") << 'y' << (j + 1);
    out << '\n';
    out.precision(17);
    for (const auto& y : model.data) {
        for (Index j = 0; j < y.size(); ++j) out << (j ? "," : "") << y(j);
        out << '\n';
    }
}

std::vector<Vector> read_clutter_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw Error("empty clutter dataset " + path.string());
    std::size_t d = 1;
    for (char c : line) d += c == ',';
    std::vector<Vector> data;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> values;
        while (std::getline(ss, cell, ',')) {
            try {
                values.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw Error("bad number '" + cell + "' on row " + std::to_string(row));
            }
        }
        if (values.size() != d) throw Error("wrong column count on row " + std::to_string(row));
        data.push_back(Eigen::Map<Vector>(values.data(), static_cast<Index>(d)));
    }
    return data;
}

nlohmann::json clutter_spec_json(const ClutterDataSpec& spec) {
    std::vector<double> x(spec.x_true.data(), spec.x_true.data() + spec.x_true.size());
    return {{"x_true", x},
            {"n", spec.n},
            {"w", spec.w},
            {"d", spec.d},
            {"seed", spec.seed},
            {"prior_variance", spec.prior_variance},
            {"clutter_variance", spec.clutter_variance}};
}

}  // namespace epinfer
