#include "driftlab/dynamics.hpp"
#include "driftlab/errors.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace driftlab;
using namespace testing;

namespace {

RunConfig quick(double mu, int batch, int steps, std::uint64_t seed = 1) {
    RunConfig cfg;
    cfg.mu = mu;
    cfg.batch = batch;
    cfg.n_steps = steps;
    cfg.seed = seed;
    return cfg;
}

NetworkRiskModel noiseless_scalar(double h, int agents) {
    QuadraticSpec spec;
    spec.agents = agents;
    spec.dim = 1;
    spec.hessians = std::vector<Matrix>(static_cast<std::size_t>(agents), scalar(h));
    spec.minimizers = std::vector<Vector>(static_cast<std::size_t>(agents), vec1(0.0));
    spec.noise_scale = 0.0;
    return make_quadratic_network(spec);
}

}  // namespace

TEST_CASE("mixing pairs multiply to A") {
    const Matrix a = ring(5).weights;
    for (AlgorithmKind alg : {AlgorithmKind::consensus, AlgorithmKind::diffusion}) {
        const MixingPair p = mixing_pair(alg, a);
        CHECK((p.first * p.second - a).norm() < 1e-15);
    }
    const MixingPair c = mixing_pair(AlgorithmKind::centralized, a);
    CHECK((c.second * Vector::Ones(5) - Vector::Ones(5)).norm() < 1e-15);
    CHECK(parse_algorithm(to_string(AlgorithmKind::diffusion)) == AlgorithmKind::diffusion);
    CHECK_THROWS_AS(parse_algorithm("gossip"), ValidationError);
}

TEST_CASE("run config validation and the two-drop schedule") {
    RunConfig cfg = quick(0.1, 1, 100);
    cfg.lr_drops = true;
    CHECK(cfg.step_size(49) == 0.1);
    CHECK(cfg.step_size(50) == doctest::Approx(0.01));
    CHECK(cfg.step_size(75) == doctest::Approx(0.001));
    cfg.batch = 0;
    CHECK_THROWS_AS(cfg.check(), ValidationError);
    cfg = quick(-1, 1, 10);
    CHECK_THROWS_AS(cfg.check(), ValidationError);
    cfg = quick(0.1, 1, 0);
    CHECK_THROWS_AS(cfg.check(), ValidationError);
}

TEST_CASE("zero step size leaves the state unchanged") {
    const auto model = hetero_quadratic(4, 2, 1.0, 3);
    const LocalMinimumInfo info = minimizer_summary(model);
    RunConfig cfg = quick(0.0, 1, 20);
    cfg.init = InitKind::gaussian;
    cfg.sigma0 = 0.5;
    cfg.keep_states = true;
    for (AlgorithmKind alg : {AlgorithmKind::consensus, AlgorithmKind::diffusion}) {
        Rng rng(4);
        const Trajectory t = run_trajectory(model, info, CombinationMatrix{Matrix::Identity(4, 4)}, alg, cfg, rng);
        for (const Matrix& s : t.states) CHECK(s == t.initial);
    }
}

TEST_CASE("noiseless homogeneous centralized run decays geometrically") {
    const double h = 1.5, mu = 0.1, delta = 0.7;
    const auto model = noiseless_scalar(h, 3);
    LocalMinimumInfo info = minimizer_summary(model);
    info.w_star = vec1(delta);  // start offset δ from the minimizer at 0
    RunConfig cfg = quick(mu, 1, 30);
    cfg.keep_states = true;
    Rng rng(1);
    const Trajectory t = run_trajectory(model, info, centralized_matrix(3), AlgorithmKind::centralized, cfg, rng);
    for (std::size_t n = 0; n < t.states.size(); ++n) {
        const double expected = delta * std::pow(1.0 - mu * h, static_cast<double>(n + 1));
        CHECK(t.states[n](0, 0) == doctest::Approx(expected).epsilon(1e-13));
    }
}

TEST_CASE("per-agent recursions equal the unified error recursion on quadratics") {
    const auto model = hetero_quadratic(5, 3, 1.0, 6);
    const LocalMinimumInfo info = minimizer_summary(model);
    const CombinationMatrix a = ring(5);
    for (AlgorithmKind alg : kAllAlgorithms) {
        RunConfig cfg = quick(0.05, 2, 80, 12);
        cfg.init = InitKind::gaussian;
        cfg.sigma0 = 0.3;
        cfg.keep_states = true;
        cfg.keep_noise = true;
        Rng rng(5);
        const Trajectory t = run_trajectory(model, info, a, alg, cfg, rng);
        const Matrix e0 = (-t.initial).colwise() + info.w_star;
        const auto errors = run_unified_recursion(info, a.weights, alg, cfg, t.noise, e0);
        for (std::size_t n = 0; n < errors.size(); ++n) {
            const Matrix w = (-errors[n]).colwise() + info.w_star;
            CHECK(max_abs(w - t.states[n]) <= 1e-10);
        }
    }
}

TEST_CASE("coupled short-term model reproduces quadratic trajectories") {
    const auto model = hetero_quadratic(4, 2, 1.0, 8);
    const LocalMinimumInfo info = minimizer_summary(model);
    const CombinationMatrix a = ring(4);
    for (AlgorithmKind alg : kAllAlgorithms) {
        RunConfig cfg = quick(0.05, 1, 60, 3);
        cfg.keep_states = true;
        cfg.keep_noise = true;
        Rng rng(9);
        const Trajectory truth = run_trajectory(model, info, a, alg, cfg, rng);
        Rng unused(0);
        const Trajectory st = run_short_term(model, info, a, alg, cfg, unused, ShortTermCoupling::coupled, &truth);
        REQUIRE(st.states.size() == truth.states.size());
        for (std::size_t n = 0; n < st.states.size(); ++n) CHECK(max_abs(st.states[n] - truth.states[n]) <= 1e-10);
    }
    Rng rng(1);
    CHECK_THROWS_AS(run_short_term(model, info, a, AlgorithmKind::consensus, quick(0.1, 1, 5), rng,
                                   ShortTermCoupling::coupled, nullptr),
                    ValidationError);
}

TEST_CASE("standalone short-term run stays at zero without drift or noise") {
    const auto model = noiseless_scalar(2.0, 4);
    const LocalMinimumInfo info = minimizer_summary(model);
    RunConfig cfg = quick(0.1, 1, 25);
    cfg.keep_states = true;
    Rng rng(2);
    const Trajectory t = run_short_term(model, info, ring(4), AlgorithmKind::consensus, cfg, rng,
                                        ShortTermCoupling::standalone);
    for (const Matrix& s : t.states) CHECK(max_abs(s) == 0.0);
}

TEST_CASE("consensus distance by hand") {
    NetworkState s;
    s.w = Matrix(1, 2);
    s.w << 0.0, 2.0;
    CHECK(centroid(s)(0) == 1.0);
    CHECK(consensus_distance(s) == 2.0);
    s.w << 3.0, 3.0;
    CHECK(consensus_distance(s) == 0.0);
}

TEST_CASE("error decomposition holds per realization") {
    const auto model = hetero_quadratic(6, 2, 1.0, 2);
    const LocalMinimumInfo info = minimizer_summary(model);
    RunConfig cfg = quick(0.05, 1, 50, 4);
    cfg.init = InitKind::gaussian;
    cfg.sigma0 = 1.0;
    Rng rng(3);
    const Trajectory t = run_trajectory(model, info, ring(6), AlgorithmKind::diffusion, cfg, rng);
    for (const auto& r : t.records) {
        CHECK(std::abs(r.error_norm_sq - r.centroid_error_sq - r.consensus_distance) <=
              1e-12 * std::max(1.0, r.error_norm_sq));
    }
}

TEST_CASE("diffusion with uniform weights matches the centralized recursion") {
    const auto model = hetero_quadratic(4, 2, 1.0, 5);
    const LocalMinimumInfo info = minimizer_summary(model);
    RunConfig cfg = quick(0.05, 3, 40, 8);
    cfg.keep_states = true;
    Rng r1(10), r2(10);
    const Trajectory dif = run_trajectory(model, info, centralized_matrix(4), AlgorithmKind::diffusion, cfg, r1);
    const Trajectory cen = run_trajectory(model, info, centralized_matrix(4), AlgorithmKind::centralized, cfg, r2);
    for (std::size_t n = 0; n < dif.states.size(); ++n) CHECK(max_abs(dif.states[n] - cen.states[n]) <= 1e-12);
}

TEST_CASE("single agent: all three algorithms are plain SGD") {
    const auto model = hetero_quadratic(1, 3, 0.0, 7);
    const LocalMinimumInfo info = minimizer_summary(model);
    RunConfig cfg = quick(0.1, 2, 30, 2);
    cfg.keep_states = true;
    std::vector<Trajectory> runs;
    for (AlgorithmKind alg : kAllAlgorithms) {
        Rng rng(6);
        runs.push_back(run_trajectory(model, info, ring(1), alg, cfg, rng));
    }
    for (std::size_t n = 0; n < runs[0].states.size(); ++n) {
        CHECK(max_abs(runs[0].states[n] - runs[1].states[n]) == 0.0);
        CHECK(max_abs(runs[0].states[n] - runs[2].states[n]) == 0.0);
    }
}

TEST_CASE("divergence is detected and recorded") {
    const auto model = noiseless_scalar(1.0, 2);
    LocalMinimumInfo info = minimizer_summary(model);
    info.w_star = vec1(1.0);
    Rng rng(1);
    const Trajectory t = run_trajectory(model, info, ring(2), AlgorithmKind::consensus, quick(3.5, 1, 1000), rng);
    REQUIRE(t.diverged());
    CHECK(*t.diverged_step < 1000);
}

TEST_CASE("ensemble: zero excess risk at rest, worker-independent, stderr scaling") {
    const auto rest = noiseless_scalar(1.0, 3);
    const LocalMinimumInfo rinfo = minimizer_summary(rest);
    const EnsembleStats zero = ensemble_excess_risk(rest, rinfo, ring(3), AlgorithmKind::diffusion, quick(0.1, 1, 10), 4);
    for (const auto& s : zero.steps) CHECK(s.er_mean == 0.0);

    const auto model = hetero_quadratic(4, 2, 1.0, 9);
    const LocalMinimumInfo info = minimizer_summary(model);
    RunConfig cfg = quick(0.05, 1, 40, 77);
    cfg.record_every = 10;
    const EnsembleStats a = ensemble_excess_risk(model, info, ring(4), AlgorithmKind::consensus, cfg, 200, 1);
    const EnsembleStats b = ensemble_excess_risk(model, info, ring(4), AlgorithmKind::consensus, cfg, 200, 3);
    REQUIRE(a.steps.size() == b.steps.size());
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        CHECK(a.steps[i].er_mean == b.steps[i].er_mean);
        CHECK(a.steps[i].er_stderr == b.steps[i].er_stderr);
    }
    CHECK(a.steps.back().step == 39);

    const EnsembleStats small = ensemble_excess_risk(model, info, ring(4), AlgorithmKind::consensus, cfg, 2000, 1);
    const EnsembleStats large = ensemble_excess_risk(model, info, ring(4), AlgorithmKind::consensus, cfg, 4000, 1);
    const double ratio = large.steps.back().er_stderr / small.steps.back().er_stderr;
    CHECK(ratio == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.1));
    CHECK_THROWS_AS(ensemble_excess_risk(model, info, ring(4), AlgorithmKind::consensus, cfg, 1), ValidationError);
}

TEST_CASE("escape statistics: rejected for quadratics, silent without noise") {
    const auto quad = hetero_quadratic(2, 1, 1.0, 1);
    CHECK_THROWS_AS(escape_statistics(quad, minimizer_summary(quad), ring(2), AlgorithmKind::consensus,
                                      quick(0.1, 1, 5), 4),
                    ValidationError);
    DoubleWellSpec spec;
    spec.tilts = {0.0, 0.0, 0.0};
    spec.noise_scale = 0.0;
    const auto dw = make_double_well_network(spec);
    const EscapeStats s = escape_statistics(dw, minimizer_summary(dw), ring(3), AlgorithmKind::consensus,
                                            quick(0.05, 1, 200), 16);
    CHECK(s.escaped == 0);
    CHECK(std::isnan(s.mean_escape_time));
    for (double f : s.escape_fraction_by_step) CHECK(f == 0.0);
}

TEST_CASE("escape fraction grows with the step size") {
    DoubleWellSpec spec;
    spec.tilts = {0.0, 0.0, 0.0, 0.0};
    spec.noise_scale = 6.0;
    spec.dataset_size = 200;
    spec.seed = 2;
    const auto dw = make_double_well_network(spec);
    const LocalMinimumInfo info = minimizer_summary(dw, MinimumSelector::plus);
    std::vector<double> fractions;
    const int reps = 400;
    for (double mu : {0.01, 0.05, 0.1}) {
        RunConfig cfg = quick(mu, 1, 300, 31);
        cfg.record_every = 300;
        fractions.push_back(escape_statistics(dw, info, ring(4), AlgorithmKind::diffusion, cfg, reps).escape_fraction_by_step.back());
    }
    for (std::size_t i = 1; i < fractions.size(); ++i) {
        const double p = fractions[i], q = fractions[i - 1];
        const double se = std::sqrt((p * (1 - p) + q * (1 - q)) / reps);
        CHECK(p - q >= -3.0 * se);
    }
}

TEST_CASE("short-term approximation improves as the step size shrinks (double-well)") {
    DoubleWellSpec spec;
    spec.tilts = {0.6, 0.2, -0.2, -0.6};
    spec.noise_scale = 1.0;
    spec.dataset_size = 100;
    spec.seed = 4;
    const auto dw = make_double_well_network(spec);
    const LocalMinimumInfo info = minimizer_summary(dw, MinimumSelector::plus);
    std::vector<double> gaps;
    for (double mu : {0.02, 0.01, 0.005}) {
        RunConfig cfg = quick(mu, 1, static_cast<int>(std::ceil(2.0 / mu)), 5);
        cfg.keep_noise = true;
        double true_sum = 0, short_sum = 0;
        for (int r = 0; r < 300; ++r) {
            Rng rng = make_rng(cfg.seed, static_cast<std::uint64_t>(r));
            const Trajectory t = run_trajectory(dw, info, ring(4), AlgorithmKind::consensus, cfg, rng);
            const Trajectory s = run_short_term(dw, info, ring(4), AlgorithmKind::consensus, cfg, rng,
                                                ShortTermCoupling::coupled, &t);
            true_sum += t.records.back().error_norm_sq;
            short_sum += s.records.back().error_norm_sq;
        }
        gaps.push_back(std::abs(short_sum - true_sum) / true_sum);
    }
    CHECK(gaps[1] < gaps[0]);
    CHECK(gaps[2] < gaps[1]);
}
