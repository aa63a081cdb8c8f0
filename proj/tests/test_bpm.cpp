#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "epinfer/bpm.hpp"
#include "epinfer/oracles.hpp"
#include "epinfer/special.hpp"

using namespace epinfer;

namespace {

Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Index>(xs.size()));
    Index i = 0;
    for (double x : xs) v(i++) = x;
    return v;
}

BpmModel one_point_model() {
    const auto data = make_bpm_dataset({vec({1.0})}, {1}, 1.0, false);
    EPOptions opts;
    opts.tolerance = 1e-10;
    return bpm_train(data, opts);
}

FullGaussian random_gaussian(std::mt19937_64& gen, Index d) {
    std::normal_distribution<double> g;
    Matrix a(d, d);
    Vector m(d);
    for (Index r = 0; r < d; ++r) {
        m(r) = g(gen);
        for (Index c = 0; c < d; ++c) a(r, c) = g(gen);
    }
    return FullGaussian{m, a * a.transpose() / static_cast<double>(d) +
                               0.1 * Matrix::Identity(d, d)};
}

BpmDataset random_dataset(std::mt19937_64& gen, Index d, std::size_t n, double slack) {
    std::normal_distribution<double> g;
    Vector truth(d);
    for (Index j = 0; j < d; ++j) truth(j) = g(gen);
    std::vector<Vector> pts;
    std::vector<int> labels;
    for (std::size_t i = 0; i < n; ++i) {
        Vector p(d);
        for (Index j = 0; j < d; ++j) p(j) = g(gen);
        labels.push_back(p.dot(truth) >= 0.0 ? 1 : -1);
        pts.push_back(std::move(p));
    }
    return make_bpm_dataset(pts, labels, slack, false);
}

}  // namespace

TEST_CASE("one-point model") {
    const auto model = one_point_model();
    CHECK(model.posterior.mean(0) == doctest::Approx(0.5641895835477563).epsilon(1e-9));
    CHECK(model.log_evidence == doctest::Approx(std::log(0.5)).epsilon(1e-10));
    CHECK(bpm_evidence(model) == doctest::Approx(std::log(0.5)).epsilon(1e-8));
    CHECK(model.diagnostics.converged);

    CHECK(bpm_predict(model, vec({2.0})).label == 1);
    CHECK(bpm_predict(model, vec({-1.0})).label == -1);
    const auto tie = bpm_predict(model, vec({0.0}));
    CHECK(tie.label == 1);
    CHECK(tie.tie);
    CHECK_THROWS_WITH_AS(bpm_predict(model, vec({1.0, 2.0})),
                         doctest::Contains("dimension mismatch"), Error);

    const std::vector<Vector> batch = {vec({2.0}), vec({-1.0}), vec({0.0})};
    const auto b = bpm_predict(model, std::span<const Vector>(batch));
    CHECK(b.labels == std::vector<int>{1, -1, 1});
    CHECK(b.ties == 1);
}

TEST_CASE("one-point moment match") {
    const FullGaussian cav{vec({0.0}), Matrix::Identity(1, 1)};
    const auto mm = bpm_moment_match(cav, vec({1.0}), 1.0);
    CHECK(mm.z == 0.0);
    CHECK(mm.normalizer == 0.5);
    CHECK(mm.alpha == doctest::Approx(0.5641895835477563).epsilon(1e-14));
    CHECK(mm.posterior.mean(0) == doctest::Approx(0.5641895835477563).epsilon(1e-14));
}

TEST_CASE("saturated term leaves the cavity alone") {
    const FullGaussian cav{vec({50.0, 0.0}), Matrix::Identity(2, 2)};
    const auto mm = bpm_moment_match(cav, vec({1.0, 0.0}), 1.0);
    CHECK(mm.alpha < 1e-200);
    CHECK((mm.posterior.mean - cav.mean).norm() < 1e-200);
    CHECK((mm.posterior.covariance - cav.covariance).norm() < 1e-200);
}

TEST_CASE("empty dataset") {
    const auto data = make_bpm_dataset({}, {}, 0.0, false, 3);
    const auto model = bpm_train(data, EPOptions{});
    CHECK(model.posterior.mean == Vector::Zero(3));
    CHECK(model.posterior.covariance == Matrix::Identity(3, 3));
    CHECK(model.log_evidence == 0.0);
    CHECK(bpm_evidence(model) == 0.0);
}

TEST_CASE("cavity") {
    const FullGaussian q{vec({0.3, -0.1}), (Matrix(2, 2) << 1.0, 0.2, 0.2, 0.5).finished()};
    const Vector x = vec({1.0, 2.0});
    const auto same = bpm_cavity(q, RankOneSite::vacuous(x));
    REQUIRE(same);
    CHECK(same->mean == q.mean);
    CHECK(same->covariance == q.covariance);

    const auto site = RankOneSite::from_scale(x, 0.1, 0.7, 0.0);
    const auto cav = bpm_cavity(q, site);
    REQUIRE(cav);
    // dense natural-parameter arithmetic
    const Matrix P = q.covariance.inverse();
    const Matrix Pc = P - site.precision * x * x.transpose();
    const Vector hc = P * q.mean - site.shift * x;
    const Matrix Vc = Pc.inverse();
    CHECK((cav->covariance - Vc).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((cav->mean - Vc * hc).cwiseAbs().maxCoeff() < 1e-12);

    const auto back = multiply(*cav, site);
    CHECK((back.mean - q.mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.covariance - q.covariance).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("moment match agrees with directional quadrature") {
    std::mt19937_64 gen(13);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(0.0, 2.0);
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
        const Index d = 1 + t % 5;
        const auto cav = random_gaussian(gen, d);
        Vector x(d);
        for (Index j = 0; j < d; ++j) x(j) = g(gen);
        const double noise = t % 3 == 0 ? 0.0 : u(gen);
        const auto mm = bpm_moment_match(cav, x, noise);
        const auto q = probit_tilted_quadrature(cav, x, noise);
        const double scale = std::sqrt(cav.covariance.diagonal().maxCoeff());
        worst = std::max(worst, std::abs(mm.normalizer - q.z) / q.z);
        worst = std::max(worst, (mm.posterior.mean - q.mean).norm() /
                                    std::max(q.mean.norm(), scale));
        worst = std::max(worst, (mm.posterior.covariance - q.covariance).norm() /
                                    q.covariance.norm());
    }
    CHECK(worst < 1e-8);
}

TEST_CASE("covariance stays symmetric positive definite") {
    std::mt19937_64 gen(17);
    const auto data = random_dataset(gen, 4, 30, 0.0);
    bool ok = true;
    const auto model =
        bpm_train(data, EPOptions{}, [&](const SweepSnapshot<BpmBinding>& s) {
            const Matrix& V = s.posterior.covariance;
            ok = ok && (V - V.transpose()).norm() == 0.0;
            ok = ok && Eigen::SelfAdjointEigenSolver<Matrix>(V).eigenvalues().minCoeff() > 0.0;
        });
    CHECK(ok);
    CHECK(bpm_training_error(model, data) == 0.0);
}

TEST_CASE("scale equivariance") {
    std::mt19937_64 gen(19);
    const auto base = random_dataset(gen, 3, 15, 0.5);
    const double c = 3.7;
    BpmDataset scaled = base;
    for (auto& p : scaled.points) p *= c;
    scaled.slack *= c;
    EPOptions opts;
    opts.tolerance = 1e-12;
    opts.max_sweeps = 500;
    const auto a = bpm_train(base, opts);
    const auto b = bpm_train(scaled, opts);
    CHECK((a.posterior.mean - b.posterior.mean).norm() < 1e-10);
    CHECK(std::abs(a.log_evidence - b.log_evidence) < 1e-10);
    std::normal_distribution<double> g;
    for (int t = 0; t < 50; ++t) {
        const Vector x = vec({g(gen), g(gen), g(gen)});
        CHECK(bpm_predict(a, x).label == bpm_predict(b, c * x).label);
    }
}

TEST_CASE("first sweep equals ADF") {
    std::mt19937_64 gen(23);
    for (int t = 0; t < 10; ++t) {
        const auto data = random_dataset(gen, 1 + t % 4, 5 + t, t % 2 ? 0.0 : 0.3);
        const BpmBinding b(data);
        const auto adf = run_adf(b);
        EPOptions opts;
        opts.max_sweeps = 1;
        const auto ep = run_ep(b, opts);
        CHECK((ep.posterior.mean - adf.posterior.mean).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((ep.posterior.covariance - adf.posterior.covariance).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(ep.log_evidence == doctest::Approx(adf.log_evidence).epsilon(1e-12));
    }
}

TEST_CASE("evidence display matches the site product") {
    std::mt19937_64 gen(29);
    const auto data = random_dataset(gen, 3, 12, 0.2);
    EPOptions opts;
    opts.tolerance = 1e-10;
    const auto model = bpm_train(data, opts);
    CHECK(bpm_evidence(model) == doctest::Approx(model.log_evidence).epsilon(1e-10));
}

TEST_CASE("per-site cost is quadratic in d") {
    auto site_cost = [](Index d) {
        std::mt19937_64 gen(31);
        const auto cav = random_gaussian(gen, d);
        const Vector x = Vector::Ones(d);
        const auto site = RankOneSite::from_scale(x, 0.01, 0.1, 0.0);
        OpTally tally;
        const auto c = bpm_cavity(cav, site, &tally);
        REQUIRE(c);
        bpm_moment_match(*c, x, 0.0, &tally);
        return static_cast<double>(tally.count);
    };
    const double ratio = site_cost(20) / site_cost(10);
    CHECK(ratio >= 3.5);
    CHECK(ratio <= 4.5);
}

TEST_CASE("three-point set") {
    const auto data = three_point_dataset();
    CHECK(data.dim() == 3);
    CHECK(data.bias_augmented);
    EPOptions opts;
    opts.tolerance = 1e-8;
    const auto model = bpm_train(data, opts);
    CHECK(model.diagnostics.converged);
    CHECK(bpm_training_error(model, data) == 0.0);

    // evidence against 10^6 prior samples
    const BpmBinding b(data);
    const auto is = importance_sampler(
        [&](const Vector& w) {
            for (const auto& x : b.directions()) {
                if (!(w.dot(x) > 0.0)) return -std::numeric_limits<double>::infinity();
            }
            return 0.0;
        },
        b.prior(), 1'000'000, 5);
    const double se = is.evidence_relative_se * is.evidence.value(0);
    CHECK(std::abs(std::exp(model.log_evidence) - is.evidence.value(0)) <= 3.0 * se);
}

TEST_CASE("dataset validation") {
    CHECK_THROWS_AS(make_bpm_dataset({vec({1.0})}, {0}, 0.0, false), Error);
    CHECK_THROWS_AS(make_bpm_dataset({vec({1.0})}, {1, -1}, 0.0, false), Error);
    CHECK_THROWS_AS(make_bpm_dataset({vec({1.0})}, {1}, -1.0, false), Error);
    CHECK_THROWS_AS(make_bpm_dataset({vec({1.0}), vec({1.0, 2.0})}, {1, 1}, 0.0, false), Error);
    const auto biased = make_bpm_dataset({vec({2.0, 3.0})}, {1}, 0.0, true);
    CHECK(biased.points[0] == vec({2.0, 3.0, 1.0}));
}

TEST_CASE("CSV and model export") {
    const auto path = std::filesystem::temp_directory_path() / "epinfer_bpm_test.csv";
    write_bpm_csv(path, {vec({1.0, 1.0}), vec({0.0, -1.0})}, {1, -1});
    const auto data = read_bpm_csv(path, 0.0, true);
    std::filesystem::remove(path);
    REQUIRE(data.size() == 2);
    CHECK(data.points[1] == vec({0.0, -1.0, 1.0}));
    CHECK(data.labels == std::vector<int>{1, -1});

    const auto model = bpm_train(data, EPOptions{});
    const auto j = bpm_model_json(model);
    CHECK(j.at("m_w").size() == 3);
    CHECK(j.at("V_w").size() == 9);
    CHECK(j.at("sites").size() == 2);
    CHECK(j.at("diagnostics").contains("converged"));

    const auto bad = std::filesystem::temp_directory_path() / "epinfer_bpm_bad.csv";
    {
        std::ofstream out(bad);
        out << "x1,label\n1.0,2\n";
    }
    CHECK_THROWS_AS(read_bpm_csv(bad, 0.0, false), Error);
    std::filesystem::remove(bad);
}
