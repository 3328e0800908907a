#include "driftlab/errors.hpp"
#include "driftlab/moment_oracle.hpp"
#include "driftlab/theory.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace driftlab;
using namespace testing;

namespace {

LocalMinimumInfo scalar_info(double h, double r) {
    QuadraticSpec spec;
    spec.agents = 1;
    spec.dim = 1;
    spec.hessians = std::vector<Matrix>{scalar(h)};
    spec.minimizers = std::vector<Vector>{vec1(0.0)};
    spec.noise_covariances = std::vector<Matrix>{scalar(r)};
    return minimizer_summary(make_quadratic_network(spec));
}

}  // namespace

TEST_CASE("first oracle step") {
    const auto model = hetero_quadratic(4, 2, 1.0, 3);
    const LocalMinimumInfo info = minimizer_summary(model);
    const CombinationMatrix a = ring(4);
    const double mu = 0.05;
    const int batch = 3;
    OracleOptions opts;
    opts.keep_states = true;
    for (AlgorithmKind alg : kAllAlgorithms) {
        const OracleSeries s = propagate(info, a, alg, mu, batch, 0, opts);
        const Matrix a2 = kron_identity(mixing_pair(alg, a.weights).second, 2);
        CHECK((s.states[0].mean - mu * a2 * info.d).norm() < 1e-14);
        const Matrix q = mu * mu / batch * a2 * block_diagonal(info.noise_blocks) * a2.transpose();
        CHECK((s.states[0].cov - q).norm() < 1e-14);
    }
}

TEST_CASE("no drift and no noise means no excess risk") {
    QuadraticSpec spec;
    spec.agents = 3;
    spec.dim = 2;
    spec.minimizer_spread = 0.0;
    spec.noise_scale = 0.0;
    const LocalMinimumInfo info = minimizer_summary(make_quadratic_network(spec));
    for (AlgorithmKind alg : kAllAlgorithms) {
        for (const auto& row : propagate(info, ring(3), alg, 0.1, 1, 50).rows) CHECK(row.er_exact == 0.0);
        CHECK(steady_state(info, ring(3), alg, 0.1, 1).mean.norm() == 0.0);
    }
}

TEST_CASE("scalar closed forms") {
    const double h = 1.0, r = 2.0, mu = 0.01;
    const int batch = 4;
    const LocalMinimumInfo info = scalar_info(h, r);
    const OracleSeries s = propagate(info, ring(1), AlgorithmKind::centralized, mu, batch, 300);
    double sum = 0;
    for (int n = 0; n <= 300; ++n) {
        sum += std::pow(1.0 - mu * h, 2.0 * n);
        CHECK(s.rows[n].er_exact == doctest::Approx(0.5 * h * mu * mu * r / batch * sum).epsilon(1e-12));
    }
    const TheoryInputs in{scalar(h), scalar(r), Vector::Zero(1), spectral_decompose(ring(1)), mu, batch};
    const double theory = predict_er(in, AlgorithmKind::centralized, 300).total;
    CHECK(std::abs(theory - s.rows[300].er_exact) / s.rows[300].er_exact < 0.01);

    const OracleSteadyState ss = steady_state(info, ring(1), AlgorithmKind::centralized, mu, batch);
    const double cov = mu * mu * r / batch / (1.0 - std::pow(1.0 - mu * h, 2));
    CHECK(ss.cov(0, 0) == doctest::Approx(cov).epsilon(1e-12));
    CHECK(ss.er == doctest::Approx(mu * r / (4.0 * batch) / (1.0 - mu * h / 2.0)).epsilon(1e-12));
    CHECK(std::abs(ss.er - predict_steady_state(in, AlgorithmKind::centralized)) / ss.er < mu);
}

TEST_CASE("oracle steady-state ordering on heterogeneous quadratics") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const LocalMinimumInfo info = minimizer_summary(hetero_quadratic(6, 2, 1.0, seed));
        const double cen = steady_state(info, ring(6), AlgorithmKind::centralized, 0.02, 50).er;
        const double dif = steady_state(info, ring(6), AlgorithmKind::diffusion, 0.02, 50).er;
        const double con = steady_state(info, ring(6), AlgorithmKind::consensus, 0.02, 50).er;
        CHECK(cen <= dif);
        CHECK(dif <= con);
    }
}

TEST_CASE("covariances stay symmetric and PSD; propagation converges to the fixed point") {
    const LocalMinimumInfo info = minimizer_summary(hetero_quadratic(4, 2, 0.5, 5));
    OracleOptions opts;
    opts.keep_states = true;
    opts.record_every = 25;
    const OracleSeries s = propagate(info, ring(4), AlgorithmKind::diffusion, 0.1, 2, 600, opts);
    for (const auto& st : s.states) {
        CHECK((st.cov - st.cov.transpose()).norm() <= 1e-12);
        CHECK(min_eigenvalue(st.cov) >= -1e-10);
    }
    const OracleSteadyState ss = steady_state(info, ring(4), AlgorithmKind::diffusion, 0.1, 2);
    CHECK(s.rows.back().er_exact == doctest::Approx(ss.er).epsilon(1e-10));
}

TEST_CASE("geometric approach to the fixed point") {
    // Zero drift: the gap is a pure covariance transient and contracts like ρ².
    // With drift the mean transient dominates and contracts like ρ.
    for (double spread : {0.0, 1.0}) {
        const LocalMinimumInfo info = minimizer_summary(hetero_quadratic(4, 2, spread, 6));
        const double mu = 0.1;
        const OracleSeries s = propagate(info, ring(4), AlgorithmKind::consensus, mu, 1, 120);
        const double er_inf = steady_state(info, ring(4), AlgorithmKind::consensus, mu, 1).er;
        const double rho = s.spectral_radius;
        const double ratio_bound = spread == 0.0 ? rho * rho : rho;
        for (int n = 20; n + 10 <= 120; n += 10) {
            const double g0 = std::abs(s.rows[n].er_exact - er_inf);
            const double g1 = std::abs(s.rows[n + 10].er_exact - er_inf);
            if (g0 < 1e-13) break;
            CHECK(g1 <= g0 * std::pow(ratio_bound, 10) * (1 + 1e-6) + 1e-14);
        }
    }
}

TEST_CASE("spectral radius and non-contractive transitions") {
    Matrix c = Matrix::Zero(3, 3);
    c.diagonal() << 0.5, -0.9, 0.2;
    CHECK(spectral_radius(c) == doctest::Approx(0.9).epsilon(1e-9));
    const LocalMinimumInfo info = scalar_info(1.0, 1.0);
    const OracleSeries s = propagate(info, ring(1), AlgorithmKind::centralized, 2.5, 1, 3);
    CHECK(s.warning.has_value());
    CHECK_THROWS_AS(steady_state(info, ring(1), AlgorithmKind::centralized, 2.5, 1), DivergenceError);
}
