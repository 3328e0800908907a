#include "driftlab/theory.hpp"

#include "driftlab/errors.hpp"

#include <cmath>
#include <limits>

namespace driftlab {

namespace {

constexpr int kInfinite = -1;

// Σ_{j=0}^{n} λ^j, or 1/(1−λ) when n is infinite.
double geometric_sum(double lambda, int n) {
    if (n == kInfinite) return 1.0 / (1.0 - lambda);
    if (std::abs(1.0 - lambda) < 1e-8) {
        double s = 0.0, p = 1.0;
        for (int j = 0; j <= n; ++j, p *= lambda) s += p;
        return s;
    }
    return (1.0 - std::pow(lambda, n + 1)) / (1.0 - lambda);
}

double decay_factor(double mu, double sigma, int n) {
    if (n == kInfinite) return 1.0;
    return 1.0 - std::pow(1.0 - mu * sigma, 2.0 * (n + 1));
}

double e_value(const TheoryInputs& in, int n) {
    const SymmetricEigen eig = jacobi_eigen(in.h_bar);
    const Matrix rotated = eig.vectors.transpose() * in.r_bar * eig.vectors;
    double sum = 0.0;
    for (int i = 0; i < in.dim(); ++i) sum += decay_factor(in.mu, eig.values(i), n) * rotated(i, i);
    return 0.25 * sum;
}

// x_k = Σ_l V_{l,k} d_l for k ≥ 2 (columns of the returned M×(K−1) matrix).
Matrix projected_heterogeneity(const TheoryInputs& in) {
    const int m = in.dim();
    const int k_count = in.agents();
    const Eigen::Map<const Matrix> d(in.d.data(), m, k_count);
    return d * in.spectral.v_alpha();
}

template <class Weight>
double f_sum(const TheoryInputs& in, AlgorithmKind alg, int n, Weight weight) {
    if (alg == AlgorithmKind::centralized) return 0.0;
    const Matrix x = projected_heterogeneity(in);
    const Vector lambdas = in.spectral.p_alpha();
    double sum = 0.0;
    for (Eigen::Index k = 0; k < lambdas.size(); ++k) {
        const double g = geometric_sum(lambdas(k), n);
        double term = g * g * weight(Vector(x.col(k)));
        if (alg == AlgorithmKind::diffusion) term *= lambdas(k) * lambdas(k);
        sum += term;
    }
    return sum;
}

double f_value(const TheoryInputs& in, AlgorithmKind alg, int n) {
    const double sum = f_sum(in, alg, n, [&](const Vector& x) { return x.dot(in.h_bar * x); });
    return sum / (2.0 * in.agents());
}

void check_n(int n) {
    if (n < 0) throw ValidationError("n", "iteration index must be non-negative");
}

}  // namespace

void TheoryInputs::check() const {
    const int m = dim();
    if (m < 1 || h_bar.cols() != m) throw ValidationError("h_bar", "H_bar must be square");
    if (r_bar.rows() != m || r_bar.cols() != m) throw ValidationError("r_bar", "R_bar must match H_bar");
    if (d.size() != static_cast<Eigen::Index>(agents()) * m) throw ValidationError("d", "d must have length K*M");
    if (!(mu >= 0.0) || !std::isfinite(mu)) throw ValidationError("run.mu", "step size must be finite and non-negative");
    if (batch < 1) throw ValidationError("run.B", "batch size must be at least 1");
    if (!is_positive_definite(h_bar)) throw ValidationError("h_bar", "H_bar must be positive definite");
    const double norm = max_eigenvalue(h_bar);
    if (mu * norm >= 1.0) {
        throw ValidationError("run.mu", "mu*||H_bar|| = " + std::to_string(mu * norm) + " must be below 1");
    }
    const Vector p = spectral.p_alpha();
    if (p.size() && p.cwiseAbs().maxCoeff() >= 1.0) {
        throw ValidationError("topology", "combination matrix has a second eigenvalue of magnitude 1");
    }
}

TheoryInputs make_theory_inputs(const LocalMinimumInfo& info, const CombinationMatrix& a, double mu, int batch) {
    if (a.agents() != info.agents()) throw ValidationError("topology.K", "combination matrix size does not match model K");
    TheoryInputs in{info.h_bar, info.r_bar, info.d, spectral_decompose(a), mu, batch};
    in.check();
    return in;
}

double e_n(const TheoryInputs& in, int n) {
    in.check();
    check_n(n);
    return e_value(in, n);
}

double f_n(const TheoryInputs& in, AlgorithmKind alg, int n) {
    in.check();
    check_n(n);
    return f_value(in, alg, n);
}

ERPrediction predict_er(const TheoryInputs& in, AlgorithmKind alg, int n) {
    ERPrediction p;
    p.n = n;
    p.e = e_n(in, n);
    p.f = f_value(in, alg, n);
    p.e_term = in.mu / in.batch * p.e;
    p.f_term = in.mu * in.mu * p.f;
    p.total = p.e_term + p.f_term;
    return p;
}

double e_infinity(const TheoryInputs& in) {
    in.check();
    return 0.25 * in.r_bar.trace();
}

double f_infinity(const TheoryInputs& in, AlgorithmKind alg) {
    in.check();
    return f_value(in, alg, kInfinite);
}

double predict_steady_state(const TheoryInputs& in, AlgorithmKind alg) {
    return in.mu / in.batch * e_infinity(in) + in.mu * in.mu * f_infinity(in, alg);
}

double upper_bound(const TheoryInputs& in, AlgorithmKind alg, int n) {
    in.check();
    check_n(n);
    const SymmetricEigen eig = jacobi_eigen(in.h_bar);
    double e_sum = 0.0;
    for (int i = 0; i < in.dim(); ++i) e_sum += decay_factor(in.mu, eig.values(i), n);
    const double e_bound = 0.25 * max_eigenvalue(in.r_bar) * e_sum;
    const double f_bound = 0.5 * in.h_bar.trace() * f_sum(in, alg, n, [](const Vector& x) { return x.squaredNorm(); });
    return in.mu / in.batch * e_bound + in.mu * in.mu * f_bound;
}

double markov_stay_probability(double upper, double barrier) {
    if (!(barrier > 0.0)) throw ValidationError("h", "risk barrier must be positive");
    if (!(upper >= 0.0)) throw ValidationError("U", "upper bound must be non-negative");
    return std::max(0.0, 1.0 - upper / barrier);
}

bool in_large_batch_regime(const TheoryInputs& in, AlgorithmKind alg, int n, double factor) {
    const ERPrediction p = predict_er(in, alg, n);
    return p.f_term >= factor * p.e_term;
}

int validity_horizon(double mu) {
    if (!(mu > 0.0)) throw ValidationError("run.mu", "validity window needs mu > 0");
    return static_cast<int>(std::ceil(5.0 / mu));
}

}  // namespace driftlab
