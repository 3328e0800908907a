#pragma once

#include "driftlab/linalg.hpp"
#include "driftlab/risk_models.hpp"
#include "driftlab/rng.hpp"
#include "driftlab/topology.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace driftlab {

enum class AlgorithmKind { centralized, consensus, diffusion };

std::string to_string(AlgorithmKind alg);
AlgorithmKind parse_algorithm(const std::string& name);
inline constexpr AlgorithmKind kAllAlgorithms[] = {AlgorithmKind::centralized, AlgorithmKind::consensus,
                                                   AlgorithmKind::diffusion};

// (A₁, A₂) of the unified error recursion: consensus (A, I), diffusion (I, A),
// centralized (I, (1/K)11ᵀ).
struct MixingPair {
    Matrix first;
    Matrix second;
};
MixingPair mixing_pair(AlgorithmKind alg, const Matrix& a);

enum class InitKind { exact, gaussian };

struct RunConfig {
    double mu = 0.01;
    int batch = 1;
    int n_steps = 100;
    InitKind init = InitKind::exact;
    double sigma0 = 0.0;
    std::uint64_t seed = 0;
    int record_every = 1;
    // Step size divided by 10 at 50% and again at 75% of the horizon.
    bool lr_drops = false;
    // Keep the full network state at every recorded step.
    bool keep_states = false;
    // Keep the gradient-noise realization of every step (needed for coupled runs).
    bool keep_noise = false;

    double step_size(int n) const;
    void check() const;
};

// Agents' iterates as columns of an M×K matrix; the stacked vector col{w_k} is its column-major view.
struct NetworkState {
    Matrix w;
    int step = -1;
};

double consensus_distance(const NetworkState& state);
Vector centroid(const NetworkState& state);

struct TrajectoryRecord {
    int step = 0;
    double excess_risk = 0.0;         // (1/K)Σ_k J(w_k) − J(w⋆)
    double consensus_distance = 0.0;  // ‖W − 1⊗w_c‖²
    double error_norm_sq = 0.0;       // ‖W̃‖²
    double centroid_error_sq = 0.0;   // K‖w̃_c‖²
    Vector centroid;
};

struct Trajectory {
    std::vector<TrajectoryRecord> records;
    Matrix initial;              // W_{-1}
    std::vector<Matrix> states;  // when RunConfig::keep_states
    std::vector<Matrix> noise;   // per step, M×K, when RunConfig::keep_noise
    std::optional<int> escape_step;
    std::optional<int> diverged_step;

    bool diverged() const noexcept { return diverged_step.has_value(); }
};

inline constexpr double kDivergenceThreshold = 1e12;

/// One realization of the centralized, consensus or diffusion recursion.
///
/// Every step draws one minibatch per agent, in agent order, at that agent's
/// previous iterate; the centralized update averages the K draws taken at the
/// shared iterate. A run whose entries exceed 1e12 in magnitude stops and
/// reports the step in `diverged_step`.
Trajectory run_trajectory(const NetworkRiskModel& model, const LocalMinimumInfo& info, const CombinationMatrix& a,
                          AlgorithmKind alg, const RunConfig& cfg, Rng& rng);

/// Unified error recursion
///   W̃_n = A₂(A₁ − μH)W̃_{n−1} + μA₂d + μA₂s_n
/// with H = diag{H_k⋆} and s_n supplied per step as M×K matrices.
/// Returns the error states W̃_0, …, W̃_{N−1} (M×K each).
std::vector<Matrix> run_unified_recursion(const LocalMinimumInfo& info, const Matrix& a, AlgorithmKind alg,
                                          const RunConfig& cfg, const std::vector<Matrix>& noise,
                                          const Matrix& initial_error);

enum class ShortTermCoupling { standalone, coupled };

/// Short-term model (Hessian frozen at w⋆). Standalone runs sample the noise at
/// w⋆; coupled runs replay `paired->noise` from a true run made with
/// keep_noise. States are reported as w′ = w⋆ − W̃′.
Trajectory run_short_term(const NetworkRiskModel& model, const LocalMinimumInfo& info, const CombinationMatrix& a,
                          AlgorithmKind alg, const RunConfig& cfg, Rng& rng, ShortTermCoupling coupling,
                          const Trajectory* paired = nullptr);

struct EnsembleStep {
    int step = 0;
    double er_mean = 0.0;
    double er_stderr = 0.0;
    double consensus_distance_mean = 0.0;
    double escaped_fraction = 0.0;
    double diverged_fraction = 0.0;
};

struct EnsembleStats {
    std::vector<EnsembleStep> steps;
    std::vector<std::optional<int>> escape_steps;  // per replication
    int reps = 0;
    int diverged_reps = 0;

    double diverged_fraction() const { return reps ? static_cast<double>(diverged_reps) / reps : 0.0; }
};

/// Monte Carlo estimate of ER_n over `reps` replications. Replication r runs on
/// the stream derive_seed(cfg.seed, r); results do not depend on `workers`.
/// Diverged replications are left out of the ER averages.
EnsembleStats ensemble_excess_risk(const NetworkRiskModel& model, const LocalMinimumInfo& info,
                                   const CombinationMatrix& a, AlgorithmKind alg, const RunConfig& cfg, int reps,
                                   unsigned workers = 0);

struct EscapeStats {
    std::vector<int> steps;
    std::vector<double> escape_fraction_by_step;
    std::vector<double> er_mean_by_step;
    double mean_escape_time = 0.0;  // NaN when nothing escaped
    int escaped = 0;
    int reps = 0;
    std::optional<int> er_crossing_step;  // first recorded step with ER ≥ h
};

EscapeStats escape_statistics(const NetworkRiskModel& model, const LocalMinimumInfo& info,
                              const CombinationMatrix& a, AlgorithmKind alg, const RunConfig& cfg, int reps,
                              unsigned workers = 0);

}  // namespace driftlab
