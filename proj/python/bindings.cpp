#include "driftlab/cli.hpp"
#include "driftlab/dynamics.hpp"
#include "driftlab/errors.hpp"
#include "driftlab/moment_oracle.hpp"
#include "driftlab/risk_models.hpp"
#include "driftlab/theory.hpp"
#include "driftlab/topology.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace driftlab;

namespace {

CombinationMatrix combination(const std::string& kind, int agents, double edge_probability, std::uint64_t seed,
                              std::optional<Matrix> matrix) {
    CombinationSpec spec;
    spec.kind = parse_combination_kind(kind);
    spec.agents = agents;
    if (spec.kind == CombinationKind::metropolis) {
        Rng rng(seed);
        spec.graph = random_connected_graph(agents, edge_probability, rng);
    }
    spec.matrix = std::move(matrix);
    return build_combination_matrix(spec);
}

MinimumSelector parse_selector(const std::string& s) {
    if (s == "plus") return MinimumSelector::plus;
    if (s == "minus") return MinimumSelector::minus;
    if (s == "auto" || s == "automatic") return MinimumSelector::automatic;
    throw ValidationError("minimum", "expected plus, minus or auto, got '" + s + "'");
}

py::dict ensemble_dict(const EnsembleStats& s) {
    std::vector<int> steps;
    std::vector<double> er, se, cd, esc;
    for (const auto& row : s.steps) {
        steps.push_back(row.step);
        er.push_back(row.er_mean);
        se.push_back(row.er_stderr);
        cd.push_back(row.consensus_distance_mean);
        esc.push_back(row.escaped_fraction);
    }
    py::dict d;
    d["step"] = steps;
    d["er_mean"] = er;
    d["er_stderr"] = se;
    d["consensus_distance"] = cd;
    d["escaped_fraction"] = esc;
    d["reps"] = s.reps;
    d["diverged_reps"] = s.diverged_reps;
    return d;
}

}  // namespace

PYBIND11_MODULE(_driftlab, m) {
    m.doc() = "Decentralized SGD excess-risk simulation, theory and exact moments";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<ConvergenceError>(m, "ConvergenceError", PyExc_RuntimeError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

    py::class_<CombinationMatrix>(m, "CombinationMatrix")
        .def_readonly("weights", &CombinationMatrix::weights)
        .def_property_readonly("agents", &CombinationMatrix::agents)
        .def_property_readonly("kind", [](const CombinationMatrix& a) { return to_string(a.kind); });

    m.def("combination_matrix", &combination, py::arg("kind"), py::arg("agents") = 4,
          py::arg("edge_probability") = 0.3, py::arg("seed") = 0, py::arg("matrix") = py::none(),
          "Build a ring, metropolis (random connected graph), centralized or custom combination matrix.");
    m.def("validate", [](const CombinationMatrix& a) {
        py::dict d;
        for (const auto& c : validate(a).checks) d[py::str(c.name)] = py::make_tuple(c.passed, c.detail);
        return d;
    });
    m.def("perron_vector", [](const CombinationMatrix& a) { return perron_vector(a); });
    m.def("spectral_decompose", [](const CombinationMatrix& a) {
        const SpectralDecomposition s = spectral_decompose(a);
        return py::make_tuple(s.eigenvalues, s.basis);
    }, "Returns (eigenvalues, orthogonal basis), lambda_1 = 1 first.");

    py::class_<NetworkRiskModel>(m, "NetworkRiskModel")
        .def_property_readonly("agents", &NetworkRiskModel::agents)
        .def_property_readonly("dim", &NetworkRiskModel::dim)
        .def_property_readonly("family", [](const NetworkRiskModel& r) { return to_string(r.family()); })
        .def("agent_risk", &NetworkRiskModel::agent_risk)
        .def("agent_gradient", &NetworkRiskModel::agent_gradient)
        .def("agent_hessian", &NetworkRiskModel::agent_hessian)
        .def("noise_covariance", &NetworkRiskModel::noise_covariance)
        .def("global_risk", [](const NetworkRiskModel& r, const Vector& w) { return global_eval(r, w).value; });

    m.def("quadratic_network",
          [](int agents, int dim, std::vector<double> eigenvalues, double spread, const std::string& noise_mode,
             double noise_scale, int dataset_size, bool heterogeneous, double jitter, std::uint64_t seed) {
              QuadraticSpec s;
              s.agents = agents;
              s.dim = dim;
              s.hessian_eigenvalues = std::move(eigenvalues);
              s.minimizer_spread = spread;
              if (noise_mode == "dataset") s.noise_mode = NoiseMode::dataset;
              else if (noise_mode != "additive") throw ValidationError("noise_mode", "expected additive or dataset");
              s.noise_scale = noise_scale;
              s.dataset_size = dataset_size;
              s.hessian_mode = heterogeneous ? HessianMode::heterogeneous : HessianMode::common;
              s.hessian_jitter = jitter;
              s.seed = seed;
              return make_quadratic_network(s);
          },
          py::arg("agents") = 4, py::arg("dim") = 2, py::arg("hessian_eigenvalues") = std::vector<double>{},
          py::arg("minimizer_spread") = 1.0, py::arg("noise_mode") = "additive", py::arg("noise_scale") = 1.0,
          py::arg("dataset_size") = 64, py::arg("heterogeneous_hessians") = false, py::arg("hessian_jitter") = 0.1,
          py::arg("seed") = 0);
    m.def("double_well_network",
          [](std::vector<double> tilts, double noise_scale, int dataset_size, std::uint64_t seed) {
              DoubleWellSpec s;
              s.tilts = std::move(tilts);
              s.noise_scale = noise_scale;
              s.dataset_size = dataset_size;
              s.seed = seed;
              return make_double_well_network(s);
          },
          py::arg("tilts"), py::arg("noise_scale") = 1.0, py::arg("dataset_size") = 64, py::arg("seed") = 0);

    py::class_<Basin>(m, "Basin")
        .def_readonly("lower", &Basin::lower)
        .def_readonly("upper", &Basin::upper)
        .def_readonly("barrier", &Basin::barrier);
    py::class_<LocalMinimumInfo>(m, "LocalMinimumInfo")
        .def_readonly("w_star", &LocalMinimumInfo::w_star)
        .def_readonly("h_bar", &LocalMinimumInfo::h_bar)
        .def_readonly("r_bar", &LocalMinimumInfo::r_bar)
        .def_readonly("d", &LocalMinimumInfo::d)
        .def_readonly("epsilon", &LocalMinimumInfo::epsilon)
        .def_readonly("basin", &LocalMinimumInfo::basin);
    m.def("minimizer_summary",
          [](const NetworkRiskModel& r, const std::string& which) { return minimizer_summary(r, parse_selector(which)); },
          py::arg("model"), py::arg("minimum") = "auto");

    py::class_<TheoryInputs>(m, "TheoryInputs")
        .def_readonly("mu", &TheoryInputs::mu)
        .def_readonly("batch", &TheoryInputs::batch);
    m.def("theory_inputs", &make_theory_inputs, py::arg("info"), py::arg("a"), py::arg("mu"), py::arg("batch"));
    m.def("predict_er", [](const TheoryInputs& in, const std::string& alg, int n) {
        const ERPrediction p = predict_er(in, parse_algorithm(alg), n);
        py::dict d;
        d["e"] = p.e;
        d["f"] = p.f;
        d["e_term"] = p.e_term;
        d["f_term"] = p.f_term;
        d["total"] = p.total;
        return d;
    });
    m.def("predict_steady_state",
          [](const TheoryInputs& in, const std::string& alg) { return predict_steady_state(in, parse_algorithm(alg)); });
    m.def("upper_bound",
          [](const TheoryInputs& in, const std::string& alg, int n) { return upper_bound(in, parse_algorithm(alg), n); });
    m.def("in_large_batch_regime", [](const TheoryInputs& in, const std::string& alg, int n) {
        return in_large_batch_regime(in, parse_algorithm(alg), n);
    });

    m.def("oracle_er",
          [](const LocalMinimumInfo& info, const CombinationMatrix& a, const std::string& alg, double mu, int batch,
             int n_max, int record_every) {
              OracleOptions opts;
              opts.record_every = record_every;
              const OracleSeries s = propagate(info, a, parse_algorithm(alg), mu, batch, n_max, opts);
              std::vector<int> n;
              std::vector<double> er;
              for (const auto& row : s.rows) {
                  n.push_back(row.n);
                  er.push_back(row.er_exact);
              }
              return py::make_tuple(n, er);
          },
          py::arg("info"), py::arg("a"), py::arg("alg"), py::arg("mu"), py::arg("batch"), py::arg("n_max"),
          py::arg("record_every") = 1, "Exact ER_n from first/second moments; returns (steps, er).");
    m.def("oracle_steady_state",
          [](const LocalMinimumInfo& info, const CombinationMatrix& a, const std::string& alg, double mu, int batch) {
              return steady_state(info, a, parse_algorithm(alg), mu, batch).er;
          });

    m.def("ensemble_er",
          [](const NetworkRiskModel& model, const LocalMinimumInfo& info, const CombinationMatrix& a,
             const std::string& alg, double mu, int batch, int n_steps, int reps, std::uint64_t seed,
             int record_every, unsigned workers) {
              RunConfig cfg;
              cfg.mu = mu;
              cfg.batch = batch;
              cfg.n_steps = n_steps;
              cfg.seed = seed;
              cfg.record_every = record_every;
              EnsembleStats s;
              {
                  py::gil_scoped_release release;
                  s = ensemble_excess_risk(model, info, a, parse_algorithm(alg), cfg, reps, workers);
              }
              return ensemble_dict(s);
          },
          py::arg("model"), py::arg("info"), py::arg("a"), py::arg("alg"), py::arg("mu"), py::arg("batch"),
          py::arg("n_steps"), py::arg("reps"), py::arg("seed") = 0, py::arg("record_every") = 1,
          py::arg("workers") = 0);
    m.def("escape_fraction",
          [](const NetworkRiskModel& model, const LocalMinimumInfo& info, const CombinationMatrix& a,
             const std::string& alg, double mu, int batch, int n_steps, int reps, std::uint64_t seed,
             unsigned workers) {
              RunConfig cfg;
              cfg.mu = mu;
              cfg.batch = batch;
              cfg.n_steps = n_steps;
              cfg.seed = seed;
              cfg.record_every = n_steps;
              EscapeStats s;
              {
                  py::gil_scoped_release release;
                  s = escape_statistics(model, info, a, parse_algorithm(alg), cfg, reps, workers);
              }
              return s.escape_fraction_by_step.back();
          },
          py::arg("model"), py::arg("info"), py::arg("a"), py::arg("alg"), py::arg("mu"), py::arg("batch"),
          py::arg("n_steps"), py::arg("reps"), py::arg("seed") = 0, py::arg("workers") = 0,
          "Fraction of replications whose centroid left the basin by the final step.");

    m.def("run_cli",
          [](std::vector<std::string> args) {
              args.insert(args.begin(), "driftlab");
              std::vector<const char*> argv;
              for (const auto& s : args) argv.push_back(s.c_str());
              std::ostringstream out, err;
              const int code = parse_and_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
              return py::make_tuple(code, out.str(), err.str());
          },
          py::arg("args"), "Run the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
