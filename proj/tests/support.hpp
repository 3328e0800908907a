#pragma once

#include "driftlab/dynamics.hpp"
#include "driftlab/risk_models.hpp"
#include "driftlab/topology.hpp"

#include <cmath>
#include <vector>

namespace testing {

using namespace driftlab;

inline CombinationMatrix ring(int k) {
    CombinationSpec spec;
    spec.kind = CombinationKind::ring;
    spec.agents = k;
    return build_combination_matrix(spec);
}

inline CombinationMatrix centralized_matrix(int k) {
    CombinationSpec spec;
    spec.kind = CombinationKind::centralized;
    spec.agents = k;
    return build_combination_matrix(spec);
}

inline Matrix scalar(double x) { return Matrix::Constant(1, 1, x); }
inline Vector vec1(double x) { return Vector::Constant(1, x); }

// Additive-noise quadratic with a common rotated Hessian and spread-out minimizers.
inline NetworkRiskModel hetero_quadratic(int k, int m, double spread, std::uint64_t seed, double noise = 1.0) {
    QuadraticSpec spec;
    spec.agents = k;
    spec.dim = m;
    spec.minimizer_spread = spread;
    spec.noise_scale = noise;
    spec.seed = seed;
    return make_quadratic_network(spec);
}

inline double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace testing
