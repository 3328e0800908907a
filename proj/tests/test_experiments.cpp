#include "driftlab/errors.hpp"
#include "driftlab/experiments.hpp"

#include "support.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

using namespace driftlab;
using namespace testing;

namespace {

ExperimentConfig small_quadratic(double spread) {
    ExperimentConfig cfg;
    cfg.seed = 42;
    cfg.topology.kind = CombinationKind::ring;
    cfg.topology.agents = 4;
    cfg.model.quadratic.dim = 2;
    cfg.model.quadratic.minimizer_spread = spread;
    cfg.model.quadratic.seed = 3;
    cfg.run.mu = 0.05;
    cfg.run.batch = 2;
    cfg.run.record_every = 10;
    cfg.reps = 300;
    cfg.n_max = 60;
    return cfg;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("config validation") {
    ExperimentConfig cfg = small_quadratic(1.0);
    cfg.mu_grid = {0.1, 0.1};
    CHECK_THROWS_AS(cfg.check(), ValidationError);
    cfg = small_quadratic(1.0);
    cfg.reps = 1;
    CHECK_THROWS_AS(cfg.check(), ValidationError);
    cfg = small_quadratic(1.0);
    cfg.alpha_grid = {-1.0, 0.0, 2.0};
    CHECK_THROWS_AS(cfg.check(), ValidationError);
    cfg = small_quadratic(1.0);
    cfg.topology.agents = 0;
    try {
        cfg.check();
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(e.key() == "topology.K");
    }
}

TEST_CASE("compare experiment: homogeneous agreement and heterogeneous ordering") {
    const auto homog = compare_experiment(small_quadratic(0.0));
    std::map<int, std::vector<double>> by_n;
    for (const auto& r : homog) by_n[r.n].push_back(r.er_theory);
    for (const auto& [n, values] : by_n) {
        CHECK(values.size() == 3);
        CHECK(values[0] == values[1]);
        CHECK(values[1] == values[2]);
    }

    const auto rows = compare_experiment(small_quadratic(1.0));
    std::map<std::pair<int, AlgorithmKind>, CompareRow> index;
    std::set<std::pair<int, AlgorithmKind>> keys;
    for (const auto& r : rows) {
        CHECK(keys.insert({r.n, r.alg}).second);
        index[{r.n, r.alg}] = r;
        CHECK(std::abs(r.er_mc - r.er_oracle) <= 4.0 * r.er_mc_stderr);
    }
    for (int n = 0; n <= 60; n += 10) {
        CHECK(index[{n, AlgorithmKind::consensus}].er_oracle >= index[{n, AlgorithmKind::diffusion}].er_oracle);
        CHECK(index[{n, AlgorithmKind::diffusion}].er_oracle >= index[{n, AlgorithmKind::centralized}].er_oracle);
    }
}

TEST_CASE("compare experiment refuses models the oracle cannot treat exactly") {
    ExperimentConfig cfg = small_quadratic(1.0);
    cfg.model.quadratic.noise_mode = NoiseMode::dataset;
    CHECK_THROWS_AS(compare_experiment(cfg), ValidationError);
}

TEST_CASE("mu sweep: relative error shrinks with mu, e-term halves") {
    ExperimentConfig cfg = small_quadratic(0.0);
    cfg.mu_grid = {0.08, 0.04, 0.02, 0.01};
    const SweepResult r = mu_sweep(cfg);
    for (AlgorithmKind alg : kAllAlgorithms) {
        std::vector<double> errs;
        for (const auto& row : r.rows)
            if (row.alg == alg) errs.push_back(row.rel_err);
        for (std::size_t i = 1; i < errs.size(); ++i) CHECK(errs[i] < errs[i - 1]);
    }
    // ER itself is O(μ), so an O(μ) relative error is an O(μ²) absolute one.
    for (const auto& s : r.slopes) {
        CHECK(s.relative == doctest::Approx(1.0).epsilon(0.15));
        CHECK(s.absolute == doctest::Approx(2.0).epsilon(0.15));
    }

    const CombinationMatrix a = build_topology(cfg);
    const LocalMinimumInfo info = minimizer_summary(build_model(cfg));
    const TheoryInputs big = make_theory_inputs(info, a, 0.02, 2);
    const TheoryInputs small = make_theory_inputs(info, a, 0.01, 2);
    const double e1 = predict_er(big, AlgorithmKind::centralized, 50).e_term;
    const double e2 = predict_er(small, AlgorithmKind::centralized, 50).e_term;
    CHECK(e2 / e1 == doctest::Approx(0.5 * e_n(small, 50) / e_n(big, 50)).epsilon(1e-14));
    const int late = 20000;  // e(n) saturated, so only the prefactor is left
    CHECK(predict_er(small, AlgorithmKind::centralized, late).e_term /
              predict_er(big, AlgorithmKind::centralized, late).e_term ==
          doctest::Approx(0.5).epsilon(1e-12));
    cfg.mu_grid = {0.1, 0.05};
    CHECK_THROWS_AS(mu_sweep(cfg), ValidationError);
}

TEST_CASE("steady-state experiment ordering") {
    ExperimentConfig cfg = small_quadratic(1.0);
    cfg.batches = {200};
    const auto rows = steady_state_experiment(cfg);
    REQUIRE(rows.size() == 3);
    std::map<AlgorithmKind, double> er;
    for (const auto& r : rows) er[r.alg] = r.er_oracle;
    CHECK(er[AlgorithmKind::centralized] <= er[AlgorithmKind::diffusion]);
    CHECK(er[AlgorithmKind::diffusion] <= er[AlgorithmKind::consensus]);
}

TEST_CASE("escape study: noiseless homogeneous run never escapes") {
    ExperimentConfig cfg;
    cfg.topology.agents = 3;
    cfg.model.family = RiskFamily::double_well;
    cfg.model.double_well.tilts = {0, 0, 0};
    cfg.model.double_well.noise_scale = 0.0;
    cfg.run.mu = 0.05;
    cfg.run.n_steps = 100;
    cfg.run.record_every = 20;
    cfg.reps = 8;
    for (const auto& cell : escape_study(cfg)) CHECK(cell.stats.escaped == 0);
    CHECK(escape_summary(escape_study(cfg)).rows.size() == 3);
    cfg.model.family = RiskFamily::quadratic;
    CHECK_THROWS_AS(escape_study(cfg), ValidationError);
}

TEST_CASE("flatness profile") {
    const auto quad = hetero_quadratic(3, 3, 1.0, 4);
    const LocalMinimumInfo info = minimizer_summary(quad);
    Rng rng(1);
    const std::vector<double> grid{-1.0, -0.5, 0.0, 0.5, 1.0};
    const FlatnessProfile p = flatness_profile(quad, info.w_star, 200, grid, rng);
    CHECK(p.rows[2].j_mean == global_eval(quad, info.w_star).value);
    CHECK(p.rows[2].j_stderr == 0.0);
    CHECK(p.rows[3].j_mean > p.rows[2].j_mean);
    CHECK(p.rows[4].j_mean > p.rows[3].j_mean);
    // mean of ½α²vᵀH̄v over the sampled directions
    double curvature = 0;
    for (const Vector& v : p.directions) {
        CHECK(v.norm() == doctest::Approx(info.w_star.norm()));
        curvature += v.dot(info.h_bar * v);
    }
    curvature /= static_cast<double>(p.directions.size());
    CHECK(p.rows[4].j_mean == doctest::Approx(info.risk_at_minimum + 0.5 * curvature).epsilon(1e-12));

    DoubleWellSpec spec;
    spec.tilts = {0.5, -0.5};
    const auto dw = make_double_well_network(spec);
    std::vector<double> wide;
    for (int i = -20; i <= 20; ++i) wide.push_back(0.1 * i);
    const FlatnessProfile d = flatness_profile(dw, vec1(1.0), 1, wide, rng);
    const double s = d.directions[0](0);
    for (std::size_t i = 0; i < wide.size(); ++i) {
        const double x = 1.0 + wide[i] * s;
        CHECK(std::abs(d.rows[i].j_mean - (x * x - 1) * (x * x - 1)) <= 1e-12);
    }
    // the barrier between the wells shows up as an interior local maximum of the profile
    bool bump = false;
    for (std::size_t i = 1; i + 1 < wide.size(); ++i)
        bump |= d.rows[i].j_mean > d.rows[i - 1].j_mean && d.rows[i].j_mean > d.rows[i + 1].j_mean;
    CHECK(bump);

    Rng r0(3);
    const FlatnessProfile origin = flatness_profile(quad, Vector::Zero(3), 5, grid, r0);
    for (const Vector& v : origin.directions) CHECK(v.norm() == doctest::Approx(1.0));
}

TEST_CASE("z test and slope helpers") {
    const ProportionTest t = two_proportion_z(0.6, 100, 0.5, 100);
    CHECK(t.stderr_ == doctest::Approx(std::sqrt(0.24 / 100 + 0.25 / 100)));
    CHECK(t.z == doctest::Approx(0.1 / t.stderr_));
    CHECK(two_proportion_z(1.0, 10, 0.0, 10).z == std::numeric_limits<double>::infinity());
    CHECK(two_proportion_z(0.0, 10, 0.0, 10).z == 0.0);
    CHECK(log_log_slope({1, 2, 4}, {3, 12, 48}) == doctest::Approx(2.0));
}

TEST_CASE("csv output is atomic and deterministic") {
    const auto dir = std::filesystem::temp_directory_path() / "driftlab_csv_test";
    std::filesystem::remove_all(dir);
    CsvTable t{{"a", "b"}, {{"1", "2"}}};
    write_csv_atomic(dir / "x.csv", t, true);
    CHECK(slurp(dir / "x.csv") == "a,b\n1,2\n");
    CHECK_FALSE(std::filesystem::exists(dir / "x.csv.tmp"));
    write_csv_atomic(dir / "y.csv", t, false);
    CHECK(slurp(dir / "y.csv").rfind("# generated ", 0) == 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("cell seeds depend on content only") {
    CHECK(cell_seed(1, AlgorithmKind::consensus, 0.01, 4) == cell_seed(1, AlgorithmKind::consensus, 0.01, 4));
    CHECK(cell_seed(1, AlgorithmKind::consensus, 0.01, 4) != cell_seed(1, AlgorithmKind::diffusion, 0.01, 4));
    CHECK(cell_seed(1, AlgorithmKind::consensus, 0.01, 4) != cell_seed(1, AlgorithmKind::consensus, 0.01, 8));
}
