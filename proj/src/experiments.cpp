#include "driftlab/experiments.hpp"

#include "driftlab/errors.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <limits>

namespace driftlab {

namespace {

bool recorded(int n, int stride, int last) { return n % stride == 0 || n == last; }

std::vector<double> mu_values(const ExperimentConfig& cfg) {
    return cfg.mu_grid.empty() ? std::vector<double>{cfg.run.mu} : cfg.mu_grid;
}

std::vector<int> batch_values(const ExperimentConfig& cfg) {
    return cfg.batches.empty() ? std::vector<int>{cfg.run.batch} : cfg.batches;
}

void require_oracle_regime(const NetworkRiskModel& model) {
    if (model.family() != RiskFamily::quadratic || model.noise_mode() != NoiseMode::additive) {
        throw ValidationError("model", "this experiment needs an additive-noise quadratic model");
    }
}

void require_common_hessian(const ExperimentConfig& cfg) {
    if (cfg.model.quadratic.hessian_mode != HessianMode::common && !cfg.model.quadratic.hessians) {
        throw ValidationError("model.hessian_mode", "this experiment needs a common Hessian");
    }
}

}  // namespace

void ExperimentConfig::check() const {
    run.check();
    if (topology.agents < 1) throw ValidationError("topology.K", "K must be at least 1");
    if (reps < 2) throw ValidationError("experiment.reps", "reps must be at least 2");
    if (algorithms.empty()) throw ValidationError("experiment.algorithms", "need at least one algorithm");
    for (std::size_t i = 0; i < mu_grid.size(); ++i) {
        if (!(mu_grid[i] > 0.0)) throw ValidationError("experiment.mu_grid", "grid values must be positive");
        if (i > 0 && !(mu_grid[i] < mu_grid[i - 1])) {
            throw ValidationError("experiment.mu_grid", "mu grid must be strictly decreasing");
        }
    }
    for (int b : batches) {
        if (b < 1) throw ValidationError("experiment.batches", "batch sizes must be at least 1");
    }
    if (eta < 0.0) throw ValidationError("experiment.eta", "eta must be non-negative");
    if (batch_scale && !(*batch_scale > 0.0)) throw ValidationError("experiment.batch_scale", "c must be positive");
    if (n_max && *n_max < 0) throw ValidationError("experiment.n_max", "n_max must be non-negative");
    if (n_dirs < 1) throw ValidationError("experiment.n_dirs", "n_dirs must be at least 1");
    for (std::size_t i = 0; i < alpha_grid.size(); ++i) {
        if (std::abs(alpha_grid[i] + alpha_grid[alpha_grid.size() - 1 - i]) > 1e-12) {
            throw ValidationError("experiment.alpha_grid", "alpha grid must be symmetric around 0");
        }
    }
    if (model.family == RiskFamily::double_well &&
        static_cast<int>(model.double_well.tilts.size()) != topology.agents) {
        throw ValidationError("model.tilts", "need one tilt per agent (topology.K)");
    }
}

int ExperimentConfig::horizon() const { return n_max ? *n_max : validity_horizon(run.mu); }

CombinationMatrix build_topology(const ExperimentConfig& cfg) {
    const TopologyConfig& t = cfg.topology;
    CombinationSpec spec;
    spec.kind = t.kind;
    spec.agents = t.agents;
    if (t.kind == CombinationKind::metropolis) {
        if (!t.edges.empty()) {
            spec.graph = Graph::from_edges(t.agents, t.edges);
        } else {
            Rng rng(t.graph_seed ? *t.graph_seed : derive_seed(cfg.seed, 0x67726170ULL));
            spec.graph = random_connected_graph(t.agents, t.edge_probability, rng);
        }
    }
    if (t.kind == CombinationKind::custom) {
        if (!t.matrix) throw ValidationError("topology.matrix", "custom topology needs a matrix");
        spec.matrix = t.matrix;
    }
    return build_combination_matrix(spec);
}

NetworkRiskModel build_model(const ExperimentConfig& cfg) {
    if (cfg.model.family == RiskFamily::quadratic) {
        QuadraticSpec spec = cfg.model.quadratic;
        spec.agents = cfg.topology.agents;
        return make_quadratic_network(spec);
    }
    return make_double_well_network(cfg.model.double_well);
}

std::uint64_t cell_seed(std::uint64_t seed, AlgorithmKind alg, double mu, int batch) {
    std::uint64_t h = splitmix64(static_cast<std::uint64_t>(alg) + 1);
    h = splitmix64(h ^ std::bit_cast<std::uint64_t>(mu));
    h = splitmix64(h ^ static_cast<std::uint64_t>(batch));
    return derive_seed(seed, h);
}

std::string format_number(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_csv_atomic(const std::filesystem::path& path, const CsvTable& table, bool deterministic) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        if (!deterministic) {
            const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
            char stamp[32];
            std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
            out << "# generated " << stamp << '\n';
        }
        auto write_row = [&](const std::vector<std::string>& row) {
            for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
            out << '\n';
        };
        write_row(table.header);
        for (const auto& row : table.rows) write_row(row);
        if (!out.flush()) throw std::runtime_error("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

ProportionTest two_proportion_z(double p1, int n1, double p2, int n2) {
    if (n1 < 1 || n2 < 1) throw ValidationError("reps", "proportion test needs positive sample sizes");
    ProportionTest t;
    t.difference = p1 - p2;
    t.stderr_ = std::sqrt(p1 * (1.0 - p1) / n1 + p2 * (1.0 - p2) / n2);
    if (t.stderr_ > 0.0) {
        t.z = t.difference / t.stderr_;
    } else {
        t.z = t.difference == 0.0 ? 0.0
                                  : std::copysign(std::numeric_limits<double>::infinity(), t.difference);
    }
    return t;
}

double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ValidationError("slope", "need at least two points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lx = std::log(x[i]);
        const double ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::vector<CompareRow> compare_experiment(const ExperimentConfig& cfg) {
    cfg.check();
    require_common_hessian(cfg);
    const CombinationMatrix a = build_topology(cfg);
    const NetworkRiskModel model = build_model(cfg);
    require_oracle_regime(model);
    const LocalMinimumInfo info = minimizer_summary(model, cfg.model.minimum);
    const int n_max = cfg.horizon();
    const TheoryInputs inputs = make_theory_inputs(info, a, cfg.run.mu, cfg.run.batch);

    OracleOptions opts;
    opts.init = cfg.run.init;
    opts.sigma0 = cfg.run.sigma0;
    opts.record_every = cfg.run.record_every;

    std::vector<CompareRow> rows;
    for (AlgorithmKind alg : cfg.algorithms) {
        const OracleSeries oracle = propagate(info, a, alg, cfg.run.mu, cfg.run.batch, n_max, opts);
        RunConfig run = cfg.run;
        run.n_steps = n_max + 1;
        run.seed = cell_seed(cfg.seed, alg, run.mu, run.batch);
        const EnsembleStats mc = ensemble_excess_risk(model, info, a, alg, run, cfg.reps, cfg.workers);
        if (mc.steps.size() != oracle.rows.size()) throw std::logic_error("oracle and ensemble grids differ");
        for (std::size_t i = 0; i < oracle.rows.size(); ++i) {
            const int n = oracle.rows[i].n;
            rows.push_back({n, alg, predict_er(inputs, alg, n).total, oracle.rows[i].er_exact, mc.steps[i].er_mean,
                            mc.steps[i].er_stderr});
        }
    }
    return rows;
}

CsvTable to_table(const std::vector<CompareRow>& rows) {
    CsvTable t{{"n", "alg", "er_theory", "er_oracle", "er_mc", "er_mc_stderr"}, {}};
    for (const auto& r : rows) {
        t.add({std::to_string(r.n), to_string(r.alg), format_number(r.er_theory), format_number(r.er_oracle),
               format_number(r.er_mc), format_number(r.er_mc_stderr)});
    }
    return t;
}

SweepResult mu_sweep(const ExperimentConfig& cfg) {
    cfg.check();
    if (cfg.mu_grid.size() < 3) throw ValidationError("experiment.mu_grid", "sweep needs at least 3 mu values");
    const CombinationMatrix a = build_topology(cfg);
    const NetworkRiskModel model = build_model(cfg);
    require_oracle_regime(model);
    const LocalMinimumInfo info = minimizer_summary(model, cfg.model.minimum);
    const double c = cfg.batch_scale ? *cfg.batch_scale : static_cast<double>(cfg.run.batch);

    OracleOptions opts;
    opts.init = cfg.run.init;
    opts.sigma0 = cfg.run.sigma0;

    SweepResult out;
    for (AlgorithmKind alg : cfg.algorithms) {
        std::vector<double> mus, errs, rels;
        for (double mu : cfg.mu_grid) {
            const int batch = std::max(1, static_cast<int>(std::ceil(c * std::pow(mu, -cfg.eta) - 1e-9)));
            const int n_eval = static_cast<int>(std::ceil(1.0 / mu - 1e-9));
            const TheoryInputs inputs = make_theory_inputs(info, a, mu, batch);
            const double theory = predict_er(inputs, alg, n_eval).total;
            opts.record_every = std::max(1, n_eval);
            const double oracle = propagate(info, a, alg, mu, batch, n_eval, opts).rows.back().er_exact;
            const double abs_err = std::abs(theory - oracle);
            out.rows.push_back({mu, batch, n_eval, alg, theory, oracle, abs_err / oracle});
            mus.push_back(mu);
            errs.push_back(abs_err);
            rels.push_back(abs_err / oracle);
        }
        const bool fit = std::all_of(errs.begin(), errs.end(), [](double e) { return e > 0.0; });
        const double nan = std::numeric_limits<double>::quiet_NaN();
        out.slopes.push_back({alg, fit ? log_log_slope(mus, errs) : nan, fit ? log_log_slope(mus, rels) : nan});
    }
    return out;
}

CsvTable to_table(const std::vector<SweepRow>& rows) {
    CsvTable t{{"mu", "B", "n_eval", "alg", "er_theory", "er_oracle", "rel_err_theory_vs_oracle"}, {}};
    for (const auto& r : rows) {
        t.add({format_number(r.mu), std::to_string(r.batch), std::to_string(r.n_eval), to_string(r.alg),
               format_number(r.er_theory), format_number(r.er_oracle), format_number(r.rel_err)});
    }
    return t;
}

std::vector<EscapeCell> escape_study(const ExperimentConfig& cfg) {
    cfg.check();
    const CombinationMatrix a = build_topology(cfg);
    const NetworkRiskModel model = build_model(cfg);
    if (model.family() != RiskFamily::double_well) {
        throw ValidationError("model.family", "escape study needs the double_well family");
    }
    const LocalMinimumInfo info = minimizer_summary(model, cfg.model.minimum);
    std::vector<EscapeCell> cells;
    for (double mu : mu_values(cfg)) {
        for (int batch : batch_values(cfg)) {
            for (AlgorithmKind alg : cfg.algorithms) {
                RunConfig run = cfg.run;
                run.mu = mu;
                run.batch = batch;
                run.seed = cell_seed(cfg.seed, alg, mu, batch);
                EscapeCell cell;
                cell.alg = alg;
                cell.mu = mu;
                cell.batch = batch;
                cell.stats = escape_statistics(model, info, a, alg, run, cfg.reps, cfg.workers);
                if (alg != AlgorithmKind::centralized) {
                    try {
                        const TheoryInputs inputs = make_theory_inputs(info, a, mu, batch);
                        cell.large_batch = in_large_batch_regime(inputs, alg, run.n_steps - 1);
                    } catch (const ValidationError&) {
                        cell.large_batch = false;
                    }
                }
                cells.push_back(std::move(cell));
            }
        }
    }
    return cells;
}

CsvTable to_table(const std::vector<EscapeCell>& cells) {
    CsvTable t{{"alg", "mu", "B", "step", "escape_fraction", "er_mean"}, {}};
    for (const auto& c : cells) {
        for (std::size_t i = 0; i < c.stats.steps.size(); ++i) {
            t.add({to_string(c.alg), format_number(c.mu), std::to_string(c.batch), std::to_string(c.stats.steps[i]),
                   format_number(c.stats.escape_fraction_by_step[i]), format_number(c.stats.er_mean_by_step[i])});
        }
    }
    return t;
}

CsvTable escape_summary(const std::vector<EscapeCell>& cells) {
    CsvTable t{{"alg", "mu", "B", "reps", "escaped", "final_escape_fraction", "mean_escape_time", "er_crossing_step",
                "large_batch"},
               {}};
    for (const auto& c : cells) {
        const double final_fraction =
            c.stats.escape_fraction_by_step.empty() ? 0.0 : c.stats.escape_fraction_by_step.back();
        t.add({to_string(c.alg), format_number(c.mu), std::to_string(c.batch), std::to_string(c.stats.reps),
               std::to_string(c.stats.escaped), format_number(final_fraction), format_number(c.stats.mean_escape_time),
               c.stats.er_crossing_step ? std::to_string(*c.stats.er_crossing_step) : "",
               c.large_batch ? "1" : "0"});
    }
    return t;
}

FlatnessProfile flatness_profile(const NetworkRiskModel& model, const Vector& w, int n_dirs,
                                 const std::vector<double>& alpha_grid, Rng& rng) {
    if (n_dirs < 1) throw ValidationError("experiment.n_dirs", "n_dirs must be at least 1");
    if (w.size() != model.dim()) throw ValidationError("experiment.point", "point has the wrong dimension");
    const double scale = w.norm() > 0.0 ? w.norm() : 1.0;
    FlatnessProfile out;
    for (int i = 0; i < n_dirs; ++i) {
        Vector v = standard_normal_vector(model.dim(), rng);
        v *= scale / v.norm();
        out.directions.push_back(std::move(v));
    }
    for (double alpha : alpha_grid) {
        double mean = 0.0, m2 = 0.0;
        for (int i = 0; i < n_dirs; ++i) {
            const double j = global_eval(model, w + alpha * out.directions[static_cast<std::size_t>(i)]).value;
            const double delta = j - mean;
            mean += delta / (i + 1);
            m2 += delta * (j - mean);
        }
        const double se = n_dirs > 1 ? std::sqrt(m2 / (n_dirs - 1) / n_dirs) : 0.0;
        out.rows.push_back({alpha, mean, se});
    }
    return out;
}

CsvTable to_table(const FlatnessProfile& profile) {
    CsvTable t{{"alpha", "j_mean", "j_stderr"}, {}};
    for (const auto& r : profile.rows) t.add({format_number(r.alpha), format_number(r.j_mean), format_number(r.j_stderr)});
    return t;
}

std::vector<SteadyStateRow> steady_state_experiment(const ExperimentConfig& cfg) {
    cfg.check();
    const CombinationMatrix a = build_topology(cfg);
    const NetworkRiskModel model = build_model(cfg);
    const LocalMinimumInfo info = minimizer_summary(model, cfg.model.minimum);
    std::vector<SteadyStateRow> rows;
    for (double mu : mu_values(cfg)) {
        for (int batch : batch_values(cfg)) {
            const TheoryInputs inputs = make_theory_inputs(info, a, mu, batch);
            for (AlgorithmKind alg : cfg.algorithms) {
                const double theory = predict_steady_state(inputs, alg);
                const double oracle = steady_state(info, a, alg, mu, batch).er;
                rows.push_back({alg, mu, batch, theory, oracle, std::abs(theory - oracle) / oracle});
            }
        }
    }
    return rows;
}

CsvTable to_table(const std::vector<SteadyStateRow>& rows) {
    CsvTable t{{"alg", "mu", "B", "er_theory", "er_oracle", "rel_err"}, {}};
    for (const auto& r : rows) {
        t.add({to_string(r.alg), format_number(r.mu), std::to_string(r.batch), format_number(r.er_theory),
               format_number(r.er_oracle), format_number(r.rel_err)});
    }
    return t;
}

CsvTable theory_table(const ExperimentConfig& cfg) {
    cfg.check();
    const CombinationMatrix a = build_topology(cfg);
    const NetworkRiskModel model = build_model(cfg);
    const LocalMinimumInfo info = minimizer_summary(model, cfg.model.minimum);
    const TheoryInputs inputs = make_theory_inputs(info, a, cfg.run.mu, cfg.run.batch);
    const int n_max = cfg.horizon();
    CsvTable t{{"n", "alg", "e_term", "f_term", "total", "upper_bound", "steady_state"}, {}};
    for (AlgorithmKind alg : cfg.algorithms) {
        const double steady = predict_steady_state(inputs, alg);
        for (int n = 0; n <= n_max; ++n) {
            if (!recorded(n, cfg.run.record_every, n_max)) continue;
            const ERPrediction p = predict_er(inputs, alg, n);
            t.add({std::to_string(n), to_string(alg), format_number(p.e_term), format_number(p.f_term),
                   format_number(p.total), format_number(upper_bound(inputs, alg, n)), format_number(steady)});
        }
    }
    return t;
}

CsvTable oracle_table(const ExperimentConfig& cfg) {
    cfg.check();
    const CombinationMatrix a = build_topology(cfg);
    const NetworkRiskModel model = build_model(cfg);
    const LocalMinimumInfo info = minimizer_summary(model, cfg.model.minimum);
    OracleOptions opts;
    opts.init = cfg.run.init;
    opts.sigma0 = cfg.run.sigma0;
    opts.record_every = cfg.run.record_every;
    CsvTable t{{"n", "alg", "er_oracle", "spectral_radius"}, {}};
    for (AlgorithmKind alg : cfg.algorithms) {
        const OracleSeries s = propagate(info, a, alg, cfg.run.mu, cfg.run.batch, cfg.horizon(), opts);
        for (const auto& r : s.rows) {
            t.add({std::to_string(r.n), to_string(alg), format_number(r.er_exact), format_number(s.spectral_radius)});
        }
    }
    return t;
}

CsvTable simulate_table(const ExperimentConfig& cfg) {
    cfg.check();
    const CombinationMatrix a = build_topology(cfg);
    const NetworkRiskModel model = build_model(cfg);
    const LocalMinimumInfo info = minimizer_summary(model, cfg.model.minimum);
    CsvTable t{{"alg", "step", "er_mean", "er_stderr", "consensus_distance_mean", "escaped_fraction",
                "diverged_fraction"},
               {}};
    for (AlgorithmKind alg : cfg.algorithms) {
        RunConfig run = cfg.run;
        run.seed = cell_seed(cfg.seed, alg, run.mu, run.batch);
        const EnsembleStats stats = ensemble_excess_risk(model, info, a, alg, run, cfg.reps, cfg.workers);
        for (const auto& s : stats.steps) {
            t.add({to_string(alg), std::to_string(s.step), format_number(s.er_mean), format_number(s.er_stderr),
                   format_number(s.consensus_distance_mean), format_number(s.escaped_fraction),
                   format_number(s.diverged_fraction)});
        }
    }
    return t;
}

}  // namespace driftlab
