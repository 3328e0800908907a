#pragma once

#include "driftlab/dynamics.hpp"
#include "driftlab/linalg.hpp"
#include "driftlab/risk_models.hpp"
#include "driftlab/topology.hpp"

#include <optional>
#include <string>
#include <vector>

namespace driftlab {

// First and second moments of the stacked error vector W̃ (column-major view of the M×K error).
struct MomentState {
    Vector mean;
    Matrix cov;
    int step = -1;
};

struct OracleOptions {
    InitKind init = InitKind::exact;
    double sigma0 = 0.0;
    int record_every = 1;
    bool keep_states = false;
};

struct OracleRow {
    int n = 0;
    double er_exact = 0.0;
};

struct OracleSeries {
    std::vector<OracleRow> rows;
    std::vector<MomentState> states;  // when OracleOptions::keep_states
    double spectral_radius = 0.0;
    std::optional<std::string> warning;  // set when C is not contractive
};

// C = (A₂⊗I)(A₁⊗I − μ·blockdiag{H_k}) and the per-step noise covariance μ²(A₂⊗I)(R/B)(A₂⊗I)ᵀ.
struct LinearErrorModel {
    Matrix transition;
    Vector drift;  // μ(A₂⊗I)d
    Matrix noise;
    Matrix weight;  // I_K⊗H̄
    int agents = 0;
};

LinearErrorModel linear_error_model(const LocalMinimumInfo& info, const CombinationMatrix& a, AlgorithmKind alg,
                                    double mu, int batch);

// Power iteration on C, ρ ≈ sqrt(‖C²x‖/‖x‖), relative tolerance 1e-10.
double spectral_radius(const Matrix& c, double tolerance = 1e-10, int max_iterations = 200000);

double exact_excess_risk(const LinearErrorModel& lin, const Vector& mean, const Matrix& cov);

/// Exact moment propagation of the linear error recursion for n = 0 … n_max.
/// Noise covariances are the B = 1 blocks at w⋆ scaled by 1/B.
OracleSeries propagate(const LocalMinimumInfo& info, const CombinationMatrix& a, AlgorithmKind alg, double mu,
                       int batch, int n_max, const OracleOptions& options = {});

struct OracleSteadyState {
    double er = 0.0;
    Vector mean;
    Matrix cov;
    double spectral_radius = 0.0;
    int doublings = 0;
};

/// Fixed point of the moment recursion. The mean solves (I − C)m = μA₂d by
/// Gaussian elimination; the covariance series Σ_j CʲQCʲᵀ is summed by
/// repeated doubling until the Frobenius change drops to 1e-13 (relative).
/// Throws DivergenceError when C is not contractive.
OracleSteadyState steady_state(const LocalMinimumInfo& info, const CombinationMatrix& a, AlgorithmKind alg,
                               double mu, int batch);

}  // namespace driftlab
