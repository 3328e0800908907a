#pragma once

#include "driftlab/dynamics.hpp"
#include "driftlab/linalg.hpp"
#include "driftlab/risk_models.hpp"
#include "driftlab/topology.hpp"

#include <string>

namespace driftlab {

struct TheoryInputs {
    Matrix h_bar;
    Matrix r_bar;  // (1/K²)ΣR_{s,k}, B = 1
    Vector d;      // length K·M
    SpectralDecomposition spectral;
    double mu = 0.0;
    int batch = 1;

    int agents() const noexcept { return spectral.agents(); }
    int dim() const noexcept { return static_cast<int>(h_bar.rows()); }
    void check() const;
};

TheoryInputs make_theory_inputs(const LocalMinimumInfo& info, const CombinationMatrix& a, double mu, int batch);

struct ERPrediction {
    int n = 0;
    double e = 0.0;       // e(n)
    double f = 0.0;       // f_alg(n)
    double e_term = 0.0;  // (μ/B)e(n)
    double f_term = 0.0;  // μ²f(n)
    double total = 0.0;
};

double e_n(const TheoryInputs& in, int n);
double f_n(const TheoryInputs& in, AlgorithmKind alg, int n);
ERPrediction predict_er(const TheoryInputs& in, AlgorithmKind alg, int n);

double e_infinity(const TheoryInputs& in);
double f_infinity(const TheoryInputs& in, AlgorithmKind alg);
double predict_steady_state(const TheoryInputs& in, AlgorithmKind alg);

double upper_bound(const TheoryInputs& in, AlgorithmKind alg, int n);

double markov_stay_probability(double upper, double barrier);

// μ²f_alg(n) ≥ 10·(μ/B)e(n).
bool in_large_batch_regime(const TheoryInputs& in, AlgorithmKind alg, int n, double factor = 10.0);

// Last step at which the finite-horizon prediction is evaluated by default: ⌈5/μ⌉.
int validity_horizon(double mu);

}  // namespace driftlab
