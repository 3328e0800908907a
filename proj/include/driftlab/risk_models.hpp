#pragma once

#include "driftlab/linalg.hpp"
#include "driftlab/rng.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace driftlab {

enum class RiskFamily { quadratic, double_well };
enum class NoiseMode { dataset, additive };
enum class HessianMode { common, heterogeneous };

std::string to_string(RiskFamily family);
std::string to_string(NoiseMode mode);

/// Local samples of one agent. Quadratic family: rows of `features` are γ_i
/// and `labels` holds h_i. Double-well family: `features` is N×1 holding the
/// scalar samples x_i and `labels` is empty.
struct AgentDataset {
    Matrix features;
    Vector labels;

    Eigen::Index size() const noexcept { return features.rows(); }
};

struct QuadraticSpec {
    int agents = 4;
    int dim = 2;
    HessianMode hessian_mode = HessianMode::common;
    // Spectrum of the shared Hessian; empty means evenly spaced on [0.5, 1.5].
    std::vector<double> hessian_eigenvalues;
    // Heterogeneous mode: H_k = H + jitter·(random symmetric, unit spectral norm).
    double hessian_jitter = 0.1;
    double minimizer_spread = 1.0;
    int dataset_size = 64;
    NoiseMode noise_mode = NoiseMode::additive;
    // Additive mode: R_{s,k} has eigenvalues noise_scale²·[0.5, 1.5].
    // Dataset mode: standard deviation of the label noise.
    double noise_scale = 1.0;
    std::uint64_t seed = 0;

    // Explicit per-agent values override the generated ones.
    std::optional<std::vector<Matrix>> hessians;
    std::optional<std::vector<Vector>> minimizers;
    std::optional<std::vector<Matrix>> noise_covariances;
};

struct DoubleWellSpec {
    std::vector<double> tilts;  // b_k, must sum to zero; size fixes K
    int dataset_size = 64;
    double noise_scale = 1.0;
    std::uint64_t seed = 0;
};

/// K agent risks J_k sharing one family. Immutable after construction.
class NetworkRiskModel {
public:
    RiskFamily family() const noexcept { return family_; }
    NoiseMode noise_mode() const noexcept { return noise_mode_; }
    int agents() const noexcept { return agents_; }
    int dim() const noexcept { return dim_; }
    double lipschitz_bound() const noexcept { return lipschitz_; }

    double agent_risk(int k, const Vector& w) const;
    Vector agent_gradient(int k, const Vector& w) const;
    Matrix agent_hessian(int k, const Vector& w) const;

    // ∇Q_k(w; x_i) for one stored sample (dataset mode).
    Vector sample_gradient(int k, const Vector& w, Eigen::Index i) const;

    // Exact B = 1 gradient-noise covariance at w: enumeration over the dataset,
    // or the configured covariance in additive mode.
    Matrix noise_covariance(int k, const Vector& w) const;

    const AgentDataset& dataset(int k) const { return datasets_.at(static_cast<std::size_t>(k)); }
    const std::vector<Matrix>& quadratic_hessians() const noexcept { return hessians_; }
    const std::vector<Vector>& agent_minimizers() const noexcept { return minimizers_; }
    const std::vector<double>& tilts() const noexcept { return tilts_; }

    // Internal: draws the additive noise vector with covariance R_{s,k}/B.
    Vector additive_noise(int k, int batch, Rng& rng) const;

private:
    friend NetworkRiskModel make_quadratic_network(const QuadraticSpec&);
    friend NetworkRiskModel make_double_well_network(const DoubleWellSpec&);

    void check_agent(int k) const;

    RiskFamily family_ = RiskFamily::quadratic;
    NoiseMode noise_mode_ = NoiseMode::additive;
    int agents_ = 0;
    int dim_ = 0;
    double lipschitz_ = 0.0;
    std::vector<AgentDataset> datasets_;
    std::vector<Matrix> hessians_;        // quadratic
    std::vector<Vector> minimizers_;      // quadratic
    std::vector<Matrix> noise_cov_;       // additive
    std::vector<Matrix> noise_factor_;    // additive, symmetric square roots
    std::vector<double> tilts_;           // double-well
    std::vector<double> sample_mean_;     // double-well, mean of x (zero up to rounding)
};

NetworkRiskModel make_quadratic_network(const QuadraticSpec& spec);
NetworkRiskModel make_double_well_network(const DoubleWellSpec& spec);

struct RiskValue {
    double value = 0.0;
    Vector gradient;
};

// Exact aggregate J(w) = (1/K)ΣJ_k(w) and its gradient.
RiskValue global_eval(const NetworkRiskModel& model, const Vector& w);

/// (1/B)Σ_b ∇Q_k(w; x_b) with B uniform draws with replacement (dataset mode),
/// or ∇J_k(w) plus zero-mean Gaussian noise of covariance R_{s,k}/B (additive).
Vector minibatch_gradient(const NetworkRiskModel& model, int k, const Vector& w, int batch, Rng& rng);

struct Flatness {
    double trace = 0.0;
    double spectral_norm = 0.0;
    double frobenius_norm = 0.0;
};

Flatness flatness_of(const Matrix& hessian);

// (1/M)Tr ≤ ‖·‖₂ ≤ ‖·‖_F ≤ Tr ≤ M‖·‖₂, each compared with a relative slack.
bool flatness_chain_holds(const Flatness& f, int dim, double slack = 1e-12);

// Basin of a 1-D minimizer: open interval between the neighbouring stationary
// points of J (±infinity when there is none) and the risk barrier h.
struct Basin {
    double lower = 0.0;
    double upper = 0.0;
    double barrier = 0.0;

    bool contains(double w) const noexcept { return w > lower && w < upper; }
};

struct LocalMinimumInfo {
    Vector w_star;
    double risk_at_minimum = 0.0;
    std::vector<Matrix> hessians;     // H_k⋆
    Matrix h_bar;                     // (1/K)ΣH_k⋆
    Vector d;                         // col{∇J_k(w⋆)}, length K·M
    double epsilon = 0.0;             // max_k ‖H_k⋆ − H̄‖₂
    std::vector<Matrix> noise_blocks; // R_{s,k} at w⋆, B = 1
    Matrix r_bar;                     // (1/K²)ΣR_{s,k}
    Flatness flatness;
    std::optional<Basin> basin;       // double-well only

    int agents() const noexcept { return static_cast<int>(hessians.size()); }
    int dim() const noexcept { return static_cast<int>(w_star.size()); }
    Vector agent_heterogeneity(int k) const { return d.segment(static_cast<Eigen::Index>(k) * dim(), dim()); }
};

enum class MinimumSelector { plus, minus, automatic };

LocalMinimumInfo minimizer_summary(const NetworkRiskModel& model,
                                   MinimumSelector which = MinimumSelector::automatic);

struct NoiseMoments {
    Vector mean;
    Matrix covariance;
    Vector mean_stderr;
    Matrix covariance_stderr;
    int reps = 0;
};

// Sample moments of minibatch_gradient(...) − ∇J_k(w) over `reps` independent draws.
NoiseMoments estimate_noise_moments(const NetworkRiskModel& model, int k, const Vector& w, int batch,
                                    int reps, Rng& rng);

}  // namespace driftlab
