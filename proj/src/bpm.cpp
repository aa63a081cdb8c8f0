#include "epinfer/bpm.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "epinfer/oracles.hpp"
#include "epinfer/special.hpp"

namespace epinfer {

Index BpmDataset::dim() const {
    if (points.empty()) {
        if (feature_dim < 1) throw Error("empty dataset has no dimension");
        return feature_dim;
    }
    return points.front().size();
}

void BpmDataset::validate() const {
    if (points.size() != labels.size()) throw Error("points and labels differ in length");
    if (!(slack >= 0.0) || !std::isfinite(slack)) throw Error("slack must be finite and >= 0");
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (labels[i] != 1 && labels[i] != -1) throw Error("labels must be -1 or +1");
        if (points[i].size() != points.front().size()) throw Error("inconsistent point dimension");
        if (points[i].isZero(0.0)) throw Error("training point " + std::to_string(i) + " is zero");
    }
}

BpmDataset make_bpm_dataset(const std::vector<Vector>& raw_points, const std::vector<int>& labels,
                            double slack, bool bias, Index raw_dim) {
    BpmDataset data;
    if (raw_dim < 0 && !raw_points.empty()) raw_dim = raw_points.front().size();
    data.feature_dim = raw_dim < 0 ? 0 : raw_dim + (bias ? 1 : 0);
    data.labels = labels;
    data.slack = slack;
    data.bias_augmented = bias;
    data.points.reserve(raw_points.size());
    for (const auto& p : raw_points) {
        if (bias) {
            Vector a(p.size() + 1);
            a << p, 1.0;
            data.points.push_back(std::move(a));
        } else {
            data.points.push_back(p);
        }
    }
    data.validate();
    return data;
}

BpmDataset three_point_dataset() {
    const std::vector<Vector> raw = {(Vector(2) << 1.0, 1.0).finished(),
                                     (Vector(2) << 0.0, -1.0).finished(),
                                     (Vector(2) << -1.0, 0.0).finished()};
    return make_bpm_dataset(raw, {1, -1, -1}, 0.0, true);
}

std::optional<FullGaussian> bpm_cavity(const FullGaussian& posterior, const RankOneSite& site,
                                       OpTally* tally) {
    return divide_out(posterior, site, tally);
}

ProbitMoments bpm_moment_match(const FullGaussian& cavity, const Vector& x, double noise_variance,
                               OpTally* tally) {
    const Index d = cavity.dim();
    const Vector u = cavity.covariance * x;
    tally_matvec(tally, d);
    const double mu = x.dot(cavity.mean);
    const double s2 = x.dot(u);
    tally_vector(tally, d);
    tally_vector(tally, d);
    if (!(s2 > 0.0)) throw Error("degenerate covariance along training point");
    const double total = s2 + noise_variance;
    const double scale = std::sqrt(total);
    const double z = mu / scale;
    const double alpha = probit_ratio(z) / scale;
    tally_scalar(tally);
    // d/dmu log Z = alpha, d^2/dmu^2 log Z = -alpha (alpha + mu / total).
    const double beta = alpha * (alpha + mu / total);

    ProbitMoments out;
    out.z = z;
    out.alpha = alpha;
    out.log_normalizer = log_probit(z);
    out.normalizer = std::exp(out.log_normalizer);
    out.cavity_mean = mu;
    out.cavity_variance = s2;
    out.mean = mu + s2 * alpha;
    out.variance = s2 - s2 * s2 * beta;
    out.posterior.mean = cavity.mean + alpha * u;
    tally_vector(tally, d);
    out.posterior.covariance = cavity.covariance;
    out.posterior.covariance.noalias() -= beta * u * u.transpose();
    tally_rank_one(tally, d);
    symmetrize(out.posterior.covariance);
    tally_symmetrize(tally, d);
    return out;
}

// ---------------------------------------------------------------------------

BpmBinding::BpmBinding(const BpmDataset& data)
    : noise_variance_(data.slack * data.slack), dim_(data.dim()) {
    data.validate();
    directions_.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        directions_.push_back(static_cast<double>(data.labels[i]) * data.points[i]);
    }
}

FullGaussian BpmBinding::prior() const {
    return FullGaussian{Vector::Zero(dim_), Matrix::Identity(dim_, dim_)};
}

std::optional<FullGaussian> BpmBinding::cavity(const FullGaussian& q,
                                               std::span<const RankOneSite> sites, std::size_t i,
                                               OpTally& tally) const {
    return bpm_cavity(q, sites[i], &tally);
}

SiteUpdate<FullGaussian, RankOneSite> BpmBinding::update(const FullGaussian& cavity,
                                                         std::size_t i, OpTally& tally) const {
    auto mm = bpm_moment_match(cavity, directions_[i], noise_variance_, &tally);
    RankOneSite site = site_from_ratio(directions_[i], mm.mean, mm.variance, mm.cavity_mean,
                                       mm.cavity_variance, mm.log_normalizer);
    return {std::move(mm.posterior), std::move(site), mm.log_normalizer};
}

FullGaussian BpmBinding::include(const FullGaussian& cavity, const RankOneSite& site,
                                 OpTally& tally) const {
    return multiply(cavity, site, &tally);
}

double BpmBinding::site_change(const RankOneSite& a, const RankOneSite& b) const {
    return std::max(std::abs(a.precision - b.precision), std::abs(a.shift - b.shift));
}

double BpmBinding::log_evidence(const FullGaussian&, std::span<const RankOneSite> sites) const {
    return combine_sites(prior(), sites).log_normalizer;
}

Vector BpmBinding::natural(const FullGaussian& q) const {
    const Index d = q.dim();
    const Matrix precision = q.covariance.llt().solve(Matrix::Identity(d, d));
    Vector eta(d + d * d);
    eta.head(d) = precision * q.mean;
    eta.tail(d * d) = -0.5 * precision.reshaped();
    return eta;
}

Vector BpmBinding::site_natural(const RankOneSite& s) const {
    const Index d = s.direction.size();
    Vector eta(d + d * d);
    eta.head(d) = s.shift * s.direction;
    const Matrix outer = s.direction * s.direction.transpose();
    eta.tail(d * d) = -0.5 * s.precision * outer.reshaped();
    return eta;
}

std::optional<double> BpmBinding::log_prior_integral(const Vector& eta) const {
    // Prior N(0, I): int N(w; 0, I) exp(h.w - w^T L w / 2) dw with L = -2 * mat(eta).
    const Index d = dim_;
    const Vector h = eta.head(d);
    Matrix precision = Matrix::Identity(d, d) - 2.0 * eta.tail(d * d).reshaped(d, d);
    symmetrize(precision);
    Eigen::LLT<Matrix> llt(precision);
    if (llt.info() != Eigen::Success) return std::nullopt;
    double log_det = 0.0;
    const Matrix& L = llt.matrixL();
    for (Index i = 0; i < d; ++i) log_det += 2.0 * std::log(L(i, i));
    return -0.5 * log_det + 0.5 * h.dot(llt.solve(h));
}

Vector BpmBinding::sufficient_statistics(const FullGaussian& q) const {
    const Index d = q.dim();
    Vector s(d + d * d);
    s.head(d) = q.mean;
    const Matrix second = q.covariance + q.mean * q.mean.transpose();
    s.tail(d * d) = second.reshaped();
    return s;
}

Vector BpmBinding::tilted_statistics_quadrature(const FullGaussian& cavity, std::size_t i) const {
    const auto t = probit_tilted_quadrature(cavity, directions_[i], noise_variance_);
    return sufficient_statistics(FullGaussian{t.mean, t.covariance});
}

// ---------------------------------------------------------------------------

BpmModel bpm_train(const BpmDataset& data, const EPOptions& opts,
                   const SweepObserver<BpmBinding>& observer) {
    BpmModel model;
    model.noise_variance = data.slack * data.slack;
    model.bias_augmented = data.bias_augmented;
    const BpmBinding binding(data);
    auto result = run_ep(binding, opts, observer);
    model.posterior = std::move(result.posterior);
    model.sites = std::move(result.sites);
    model.log_evidence = result.log_evidence;
    model.diagnostics = BpmDiagnostics{result.sweeps, result.converged,
                                       result.diagnostics.skipped_sites,
                                       result.diagnostics.improper_cavities,
                                       result.diagnostics.operations};
    return model;
}

Prediction bpm_predict(const BpmModel& model, const Vector& x) {
    if (x.size() != model.posterior.dim()) {
        throw Error("dimension mismatch: model has " + std::to_string(model.posterior.dim()) +
                    " weights, point has " + std::to_string(x.size()));
    }
    const double score = model.posterior.mean.dot(x);
    if (score == 0.0) return Prediction{1, true};
    return Prediction{score > 0.0 ? 1 : -1, false};
}

BatchPrediction bpm_predict(const BpmModel& model, std::span<const Vector> points) {
    BatchPrediction out;
    out.labels.reserve(points.size());
    for (const auto& x : points) {
        const auto p = bpm_predict(model, x);
        out.labels.push_back(p.label);
        out.ties += p.tie ? 1 : 0;
    }
    return out;
}

double bpm_evidence(const BpmModel& model) {
    const Index d = model.posterior.dim();
    if (d == 0) return 0.0;
    Eigen::LLT<Matrix> llt(model.posterior.covariance);
    if (llt.info() != Eigen::Success) throw Error("degenerate covariance");
    double log_det = 0.0;
    const Matrix& L = llt.matrixL();
    for (Index i = 0; i < d; ++i) log_det += 2.0 * std::log(L(i, i));
    double b = model.posterior.mean.dot(llt.solve(model.posterior.mean));
    double sum_log_s = 0.0;
    for (const auto& s : model.sites) {
        if (s.precision == 0.0) {
            sum_log_s += s.log_constant;
            continue;
        }
        const double m = s.mean();
        sum_log_s += s.log_scale();
        b -= m * m * s.precision;
    }
    return 0.5 * log_det + 0.5 * b + sum_log_s;
}

double bpm_training_error(const BpmModel& model, const BpmDataset& data) {
    if (data.size() == 0) return 0.0;
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        wrong += bpm_predict(model, data.points[i]).label != data.labels[i];
    }
    return static_cast<double>(wrong) / static_cast<double>(data.size());
}

nlohmann::json bpm_model_json(const BpmModel& model) {
    const Index d = model.posterior.dim();
    std::vector<double> mean(model.posterior.mean.data(), model.posterior.mean.data() + d);
    std::vector<double> cov;
    cov.reserve(static_cast<std::size_t>(d * d));
    for (Index r = 0; r < d; ++r) {
        for (Index c = 0; c < d; ++c) cov.push_back(model.posterior.covariance(r, c));
    }
    nlohmann::json sites = nlohmann::json::array();
    for (const auto& s : model.sites) {
        nlohmann::json js;
        js["m"] = s.mean();
        if (s.precision == 0.0) {
            js["v"] = nullptr;  // vacuous: infinite variance
        } else {
            js["v"] = s.variance();
        }
        js["log_scale"] = s.log_scale();
        sites.push_back(js);
    }
    return {{"m_w", mean},
            {"V_w", cov},
            {"dim", d},
            {"noise_variance", model.noise_variance},
            {"bias_augmented", model.bias_augmented},
            {"log_evidence", model.log_evidence},
            {"sites", sites},
            {"diagnostics",
             {{"sweeps", model.diagnostics.sweeps},
              {"converged", model.diagnostics.converged},
              {"skipped_sites", model.diagnostics.skipped_sites},
              {"improper_cavities", model.diagnostics.improper_cavities},
              {"operations", model.diagnostics.operations}}}};
}

BpmDataset read_bpm_csv(const std::filesystem::path& path, double slack, bool bias) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw Error("empty dataset " + path.string());
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    if (header.size() < 2 || header.back() != "label") {
        throw Error("dataset header must end with a 'label' column");
    }
    const std::size_t d = header.size() - 1;
    std::vector<Vector> points;
    std::vector<int> labels;
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
        if (values.size() != d + 1) throw Error("wrong column count on row " + std::to_string(row));
        points.push_back(Eigen::Map<Vector>(values.data(), static_cast<Index>(d)));
        const double label = values.back();
        if (label != 1.0 && label != -1.0) {
            throw Error("label must be -1 or +1 on row " + std::to_string(row));
        }
        labels.push_back(label > 0 ? 1 : -1);
    }
    return make_bpm_dataset(points, labels, slack, bias, static_cast<Index>(d));
}

void write_bpm_csv(const std::filesystem::path& path, const std::vector<Vector>& raw_points,
                   const std::vector<int>& labels) {
    if (raw_points.empty()) throw Error("cannot write an empty dataset");
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    const Index d = raw_points.front().size();
    for (Index j = 0; j < d; ++j) out << 'x' << (j + 1) << ',';
    out << "label\n";
    out.precision(17);
    for (std::size_t i = 0; i < raw_points.size(); ++i) {
        for (Index j = 0; j < d; ++j) out << raw_points[i](j) << ',';
        out << labels[i] << '\n';
    }
}

}  // namespace epinfer
