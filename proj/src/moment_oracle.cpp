#include "driftlab/moment_oracle.hpp"

#include "driftlab/errors.hpp"

#include <cmath>
#include <sstream>

namespace driftlab {

LinearErrorModel linear_error_model(const LocalMinimumInfo& info, const CombinationMatrix& a, AlgorithmKind alg,
                                    double mu, int batch) {
    if (batch < 1) throw ValidationError("run.B", "batch size must be at least 1");
    if (!(mu >= 0.0) || !std::isfinite(mu)) throw ValidationError("run.mu", "step size must be finite and non-negative");
    const int k_count = info.agents();
    const int m = info.dim();
    Matrix weights = Matrix::Identity(k_count, k_count);
    if (alg != AlgorithmKind::centralized) {
        if (a.agents() != k_count) throw ValidationError("topology.K", "combination matrix size does not match model K");
        weights = a.weights;
    }
    const MixingPair pair = mixing_pair(alg, weights);
    // W·A in M×K layout is (Aᵀ⊗I) on the stacked vector.
    const Matrix a1 = kron_identity(pair.first.transpose(), m);
    const Matrix a2 = kron_identity(pair.second.transpose(), m);

    LinearErrorModel lin;
    lin.agents = k_count;
    lin.transition = a2 * (a1 - mu * block_diagonal(info.hessians));
    lin.drift = mu * (a2 * info.d);
    lin.noise = symmetrize(mu * mu / batch * (a2 * block_diagonal(info.noise_blocks) * a2.transpose()));
    lin.weight = kron_identity(Matrix::Identity(k_count, k_count), m);
    for (int k = 0; k < k_count; ++k) lin.weight.block(k * m, k * m, m, m) = info.h_bar;
    return lin;
}

double spectral_radius(const Matrix& c, double tolerance, int max_iterations) {
    const Eigen::Index n = c.rows();
    if (n == 0) return 0.0;
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) x(i) = 1.0 + 0.37 * std::sin(1.0 + static_cast<double>(i));
    x.normalize();
    double estimate = 0.0;
    for (int it = 0; it < max_iterations; it += 2) {
        const Vector y = c * (c * x);
        const double norm = y.norm();
        if (norm == 0.0) return 0.0;
        const double next = std::sqrt(norm);
        x = y / norm;
        if (it > 0 && std::abs(next - estimate) <= tolerance * std::max(next, 1e-300)) return next;
        estimate = next;
    }
    // Complex-conjugate dominant pairs of equal modulus can make the ratio oscillate; the last
    // estimate is still within the oscillation band and only feeds a warning or a contraction check.
    return estimate;
}

double exact_excess_risk(const LinearErrorModel& lin, const Vector& mean, const Matrix& cov) {
    const double trace = (lin.weight.cwiseProduct(cov)).sum();
    return (trace + mean.dot(lin.weight * mean)) / (2.0 * lin.agents);
}

OracleSeries propagate(const LocalMinimumInfo& info, const CombinationMatrix& a, AlgorithmKind alg, double mu,
                       int batch, int n_max, const OracleOptions& options) {
    if (n_max < 0) throw ValidationError("n_max", "n_max must be non-negative");
    if (options.record_every < 1) throw ValidationError("run.record_every", "record_every must be at least 1");
    const LinearErrorModel lin = linear_error_model(info, a, alg, mu, batch);
    const int k_count = info.agents();
    const int m = info.dim();
    const Eigen::Index size = static_cast<Eigen::Index>(k_count) * m;

    OracleSeries out;
    out.spectral_radius = spectral_radius(lin.transition);
    if (out.spectral_radius >= 1.0) {
        std::ostringstream msg;
        msg << "transition is not contractive (spectral radius " << out.spectral_radius << ")";
        out.warning = msg.str();
    }

    Vector mean = Vector::Zero(size);
    Matrix cov = Matrix::Zero(size, size);
    if (options.init == InitKind::gaussian) {
        const double var = options.sigma0 * options.sigma0;
        if (alg == AlgorithmKind::centralized) {
            cov = var * kron_identity(Matrix::Ones(k_count, k_count), m);
        } else {
            cov = var * Matrix::Identity(size, size);
        }
    }

    for (int n = 0; n <= n_max; ++n) {
        mean = lin.transition * mean + lin.drift;
        cov = symmetrize(lin.transition * cov * lin.transition.transpose() + lin.noise);
        if (n % options.record_every == 0 || n == n_max) {
            out.rows.push_back({n, exact_excess_risk(lin, mean, cov)});
            if (options.keep_states) out.states.push_back({mean, cov, n});
        }
    }
    return out;
}

OracleSteadyState steady_state(const LocalMinimumInfo& info, const CombinationMatrix& a, AlgorithmKind alg,
                               double mu, int batch) {
    const LinearErrorModel lin = linear_error_model(info, a, alg, mu, batch);
    OracleSteadyState out;
    out.spectral_radius = spectral_radius(lin.transition);
    if (out.spectral_radius >= 1.0) {
        std::ostringstream msg;
        msg << "transition is not contractive (spectral radius " << out.spectral_radius << ")";
        throw DivergenceError(msg.str());
    }
    const Eigen::Index size = lin.transition.rows();
    out.mean = solve_linear(Matrix::Identity(size, size) - lin.transition, lin.drift);

    Matrix x = lin.noise;
    Matrix power = lin.transition;
    for (int it = 0; it < 64; ++it) {
        const Matrix delta = power * x * power.transpose();
        x = symmetrize(x + delta);
        power = power * power;
        ++out.doublings;
        if (delta.norm() <= 1e-13 * std::max(1.0, x.norm())) break;
        if (it == 63) throw ConvergenceError("steady-state covariance did not settle");
    }
    out.cov = x;
    out.er = exact_excess_risk(lin, out.mean, out.cov);
    return out;
}

}  // namespace driftlab
