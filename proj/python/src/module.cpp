// Python bindings. Documents cross the boundary as JSON text; vectors and
// matrices as numpy arrays.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "epinfer/bpm.hpp"
#include "epinfer/clutter.hpp"
#include "epinfer/factor_graph.hpp"
#include "epinfer/harness.hpp"
#include "epinfer/oracles.hpp"
#include "epinfer/special.hpp"

namespace py = pybind11;
using namespace epinfer;

namespace {

EPOptions make_options(double tolerance, int max_sweeps, double damping,
                       const std::string& schedule, std::uint64_t seed) {
    EPOptions opts;
    opts.tolerance = tolerance;
    opts.max_sweeps = max_sweeps;
    opts.damping = damping;
    opts.schedule = parse_schedule(schedule, seed);
    opts.validate();
    return opts;
}

ClutterModel clutter_model(const std::vector<Vector>& data, double w, double prior_variance,
                           double clutter_variance) {
    ClutterModel m;
    m.data = data;
    m.w = w;
    m.prior_variance = prior_variance;
    m.clutter_variance = clutter_variance;
    m.d = data.empty() ? 1 : data.front().size();
    m.validate();
    return m;
}

template <class Result>
py::dict run_summary(const Result& r) {
    py::dict out;
    out["log_evidence"] = r.log_evidence;
    out["sweeps"] = r.sweeps;
    out["converged"] = r.converged;
    out["operations"] = r.diagnostics.operations;
    out["skipped_sites"] = r.diagnostics.skipped_sites;
    return out;
}

py::dict clutter_result(const EPResult<SphericalGaussian, NaturalSpherical>& r) {
    auto out = run_summary(r);
    out["mean"] = r.posterior.mean;
    out["variance"] = r.posterior.variance;
    return out;
}

py::dict summary_dict(const ExactPosteriorSummary& s) {
    py::dict out;
    out["log_evidence"] = s.log_evidence;
    out["mean"] = s.mean;
    out["covariance"] = s.covariance;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "EP / ADF moment matching for the clutter problem, the Bayes Point Machine "
              "and discrete networks";
    m.attr("__version__") = EPINFER_VERSION;

    py::register_exception<Error>(m, "EpinferError", PyExc_ValueError);

    m.def("probit", &probit, py::arg("z"));
    m.def("log_probit", &log_probit, py::arg("z"));
    m.def("probit_ratio", &probit_ratio, py::arg("z"),
          "N(z) / Phi(z), stable far into the lower tail");

    m.def(
        "generate_clutter",
        [](double x_true, std::size_t n, double w, Index d, std::uint64_t seed) {
            ClutterDataSpec spec;
            spec.x_true = Vector::Constant(d, x_true);
            spec.n = n;
            spec.w = w;
            spec.d = d;
            spec.seed = seed;
            return generate_clutter_data(spec).data;
        },
        py::arg("x_true") = 2.0, py::arg("n") = 12, py::arg("w") = 0.5, py::arg("d") = 1,
        py::arg("seed") = 0);

    m.def(
        "clutter_adf",
        [](const std::vector<Vector>& data, double w, double prior_variance,
           double clutter_variance) {
            const auto model = clutter_model(data, w, prior_variance, clutter_variance);
            return clutter_result(run_adf(ClutterBinding(model)));
        },
        py::arg("data"), py::arg("w") = 0.5, py::arg("prior_variance") = 100.0,
        py::arg("clutter_variance") = 10.0);

    m.def(
        "clutter_ep",
        [](const std::vector<Vector>& data, double w, double prior_variance,
           double clutter_variance, double tolerance, int max_sweeps, double damping,
           const std::string& schedule, std::uint64_t seed) {
            const auto model = clutter_model(data, w, prior_variance, clutter_variance);
            return clutter_result(run_ep(ClutterBinding(model),
                                         make_options(tolerance, max_sweeps, damping, schedule,
                                                      seed)));
        },
        py::arg("data"), py::arg("w") = 0.5, py::arg("prior_variance") = 100.0,
        py::arg("clutter_variance") = 10.0, py::arg("tolerance") = 1e-4,
        py::arg("max_sweeps") = 100, py::arg("damping") = 1.0,
        py::arg("schedule") = "sequential", py::arg("seed") = 0);

    m.def(
        "clutter_exact",
        [](const std::vector<Vector>& data, double w, double prior_variance,
           double clutter_variance) {
            return summary_dict(
                exact_clutter(clutter_model(data, w, prior_variance, clutter_variance)));
        },
        py::arg("data"), py::arg("w") = 0.5, py::arg("prior_variance") = 100.0,
        py::arg("clutter_variance") = 10.0, "Enumeration of all 2^n assignments (n <= 20)");

    m.def(
        "bpm_train",
        [](const std::vector<Vector>& points, const std::vector<int>& labels, double slack,
           bool bias, double tolerance, int max_sweeps, double damping) {
            const Index raw_dim = points.empty() ? 1 : points.front().size();
            const auto data = make_bpm_dataset(points, labels, slack, bias, raw_dim);
            const auto model =
                bpm_train(data, make_options(tolerance, max_sweeps, damping, "sequential", 0));
            py::dict out;
            out["mean"] = model.posterior.mean;
            out["covariance"] = model.posterior.covariance;
            out["log_evidence"] = model.log_evidence;
            out["sweeps"] = model.diagnostics.sweeps;
            out["converged"] = model.diagnostics.converged;
            out["training_error"] = bpm_training_error(model, data);
            out["model_json"] = bpm_model_json(model).dump();
            return out;
        },
        py::arg("points"), py::arg("labels"), py::arg("slack") = 0.0, py::arg("bias") = true,
        py::arg("tolerance") = 1e-4, py::arg("max_sweeps") = 100, py::arg("damping") = 1.0);

    m.def(
        "loopy_ep",
        [](const std::string& network_json, double tolerance, int max_sweeps, double damping) {
            const auto net = load_network(nlohmann::json::parse(network_json));
            const auto r = loopy_ep(net, make_options(tolerance, max_sweeps, damping,
                                                      "sequential", 0));
            py::dict out;
            out["beliefs"] = r.beliefs;
            out["log_evidence"] = r.log_evidence;
            out["evidence_approximate"] = r.evidence_approximate;
            out["sweeps"] = r.sweeps;
            out["converged"] = r.converged;
            return out;
        },
        py::arg("network_json"), py::arg("tolerance") = 1e-4, py::arg("max_sweeps") = 100,
        py::arg("damping") = 1.0);

    m.def(
        "boyen_koller",
        [](const std::string& network_json) {
            const auto r = bk_adf(load_network(nlohmann::json::parse(network_json)));
            py::dict out;
            out["beliefs"] = r.beliefs;
            out["log_evidence"] = r.log_evidence;
            return out;
        },
        py::arg("network_json"));

    m.def(
        "enumerate_network",
        [](const std::string& network_json) {
            const auto r = enumerate_discrete(load_network(nlohmann::json::parse(network_json)));
            py::dict out;
            out["beliefs"] = r.marginals;
            out["log_evidence"] = r.log_partition;
            return out;
        },
        py::arg("network_json"));

    m.def(
        "run_experiment",
        [](const std::string& kind, const std::string& config_json) {
            const auto config = config_from_json(nlohmann::json::parse(config_json),
                                                 parse_experiment_kind(kind));
            config.validate();
            return rows_to_csv(run_experiment(config));
        },
        py::arg("kind"), py::arg("config_json") = "{}",
        "Runs an experiment and returns the result CSV text");

    m.def(
        "oracle_check",
        [](std::uint64_t seed, std::size_t cases) {
            std::vector<py::dict> out;
            for (const auto& c : run_oracle_checks(seed, cases)) {
                py::dict d;
                d["name"] = c.name;
                d["cases"] = c.cases;
                d["max_error"] = c.max_error;
                d["tolerance"] = c.tolerance;
                d["passed"] = c.passed;
                out.push_back(d);
            }
            return out;
        },
        py::arg("seed") = 2024, py::arg("cases") = 200);
}
