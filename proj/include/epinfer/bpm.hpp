#pragma once

// Linear Bayes Point Machine trained by EP: a full-covariance Gaussian over the
// weights, one rank-one probit site per training point.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "epinfer/engine.hpp"
#include "epinfer/gaussian.hpp"

namespace epinfer {

struct BpmDataset {
    std::vector<Vector> points;  // bias-augmented when bias_augmented is set
    std::vector<int> labels;     // -1 or +1
    double slack = 0.0;          // epsilon; 0 is the step likelihood
    bool bias_augmented = false;
    Index feature_dim = 0;  // augmented dimension, kept for empty datasets

    Index dim() const;
    std::size_t size() const { return points.size(); }
    void validate() const;
};

/// Builds a dataset from raw feature vectors, appending a constant 1 coordinate
/// when `bias` is set. raw_dim is only needed when raw_points is empty.
BpmDataset make_bpm_dataset(const std::vector<Vector>& raw_points, const std::vector<int>& labels,
                            double slack, bool bias, Index raw_dim = -1);

/// Three separable 2-D points with a bias coordinate.
BpmDataset three_point_dataset();

struct ProbitMoments {
    FullGaussian posterior;
    double normalizer = 0.0;  // Z = probit(z)
    double log_normalizer = 0.0;
    double z = 0.0;
    double alpha = 0.0;
    // 1-D moments of w.x before and after the update.
    double cavity_mean = 0.0;
    double cavity_variance = 0.0;
    double mean = 0.0;
    double variance = 0.0;
};

/// Cavity posterior / site, or nullopt when improper.
std::optional<FullGaussian> bpm_cavity(const FullGaussian& posterior, const RankOneSite& site,
                                       OpTally* tally = nullptr);

/// Moment-matches cavity(w) * probit(w.x / sqrt(noise_variance)). With
/// noise_variance = 1 this is the unit-noise form where x already carries the
/// label and 1/epsilon scaling; noise_variance = 0 is the step function.
ProbitMoments bpm_moment_match(const FullGaussian& cavity, const Vector& x,
                               double noise_variance = 1.0, OpTally* tally = nullptr);

class BpmBinding {
public:
    using Posterior = FullGaussian;
    using Site = RankOneSite;

    explicit BpmBinding(const BpmDataset& data);

    std::size_t site_count() const { return directions_.size(); }
    FullGaussian prior() const;
    RankOneSite vacuous_site(std::size_t i) const { return RankOneSite::vacuous(directions_[i]); }
    std::optional<FullGaussian> cavity(const FullGaussian& q, std::span<const RankOneSite> sites,
                                       std::size_t i, OpTally& tally) const;
    SiteUpdate<FullGaussian, RankOneSite> update(const FullGaussian& cavity, std::size_t i,
                                                 OpTally& tally) const;
    FullGaussian include(const FullGaussian& cavity, const RankOneSite& site,
                         OpTally& tally) const;
    RankOneSite damp(const RankOneSite& a, const RankOneSite& b, double gamma) const {
        return apply_damping(a, b, gamma);
    }
    double site_change(const RankOneSite& a, const RankOneSite& b) const;
    double log_evidence(const FullGaussian& q, std::span<const RankOneSite> sites) const;
    double log_base_measure() const { return 0.0; }

    // Exponential-family view: f(w) = (w, vec(w w^T)), eta = (h, vec(-Lambda / 2)).
    Vector natural(const FullGaussian& q) const;
    Vector site_natural(const RankOneSite& s) const;
    std::optional<double> log_prior_integral(const Vector& eta) const;
    Vector sufficient_statistics(const FullGaussian& q) const;
    Vector tilted_statistics_quadrature(const FullGaussian& cavity, std::size_t i) const;

    /// Label-scaled training points.
    const std::vector<Vector>& directions() const { return directions_; }
    double noise_variance() const { return noise_variance_; }

private:
    std::vector<Vector> directions_;
    double noise_variance_;
    Index dim_;
};

static_assert(ExponentialFamilyModel<BpmBinding>);

struct BpmDiagnostics {
    int sweeps = 0;
    bool converged = false;
    std::size_t skipped_sites = 0;
    std::size_t improper_cavities = 0;
    std::uint64_t operations = 0;
};

struct BpmModel {
    FullGaussian posterior;
    std::vector<RankOneSite> sites;
    double log_evidence = 0.0;
    BpmDiagnostics diagnostics;
    double noise_variance = 0.0;
    bool bias_augmented = false;
};

BpmModel bpm_train(const BpmDataset& data, const EPOptions& opts,
                   const SweepObserver<BpmBinding>& observer = {});

struct Prediction {
    int label = 1;
    bool tie = false;  // E[w].x was exactly zero; label is +1
};

/// sign(E[w].x). x must already be bias-augmented if the model is.
Prediction bpm_predict(const BpmModel& model, const Vector& x);

struct BatchPrediction {
    std::vector<int> labels;
    std::size_t ties = 0;
};
BatchPrediction bpm_predict(const BpmModel& model, std::span<const Vector> points);

/// log p(D) = log|V_w|/2 + B/2 + sum_i log s_i, B = m_w^T V_w^{-1} m_w - sum_i m_i^2 / v_i.
double bpm_evidence(const BpmModel& model);

/// Fraction of training points misclassified by the posterior mean.
double bpm_training_error(const BpmModel& model, const BpmDataset& data);

nlohmann::json bpm_model_json(const BpmModel& model);

/// CSV with d feature columns followed by a "label" column of -1/+1.
BpmDataset read_bpm_csv(const std::filesystem::path& path, double slack, bool bias);
void write_bpm_csv(const std::filesystem::path& path, const std::vector<Vector>& raw_points,
                   const std::vector<int>& labels);

}  // namespace epinfer
