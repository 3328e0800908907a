#pragma once

#include "driftlab/dynamics.hpp"
#include "driftlab/moment_oracle.hpp"
#include "driftlab/risk_models.hpp"
#include "driftlab/theory.hpp"
#include "driftlab/topology.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace driftlab {

struct TopologyConfig {
    CombinationKind kind = CombinationKind::ring;
    int agents = 4;
    double edge_probability = 0.3;  // metropolis without explicit edges
    std::optional<std::uint64_t> graph_seed;
    std::vector<std::pair<int, int>> edges;
    std::optional<Matrix> matrix;  // custom
};

struct ModelConfig {
    RiskFamily family = RiskFamily::quadratic;
    QuadraticSpec quadratic;  // `agents` is taken from the topology
    DoubleWellSpec double_well;
    MinimumSelector minimum = MinimumSelector::automatic;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    TopologyConfig topology;
    ModelConfig model;
    RunConfig run;
    std::vector<AlgorithmKind> algorithms{kAllAlgorithms[0], kAllAlgorithms[1], kAllAlgorithms[2]};
    int reps = 1000;
    std::vector<double> mu_grid;   // sweep / escape; empty means {run.mu}
    std::vector<int> batches;      // escape; empty means {run.B}
    double eta = 0.0;              // sweep: B = ⌈c·μ^{−η}⌉
    std::optional<double> batch_scale;  // c, defaults to run.B
    std::optional<int> n_max;      // compare/theory/oracle horizon, default ⌈5/μ⌉
    int n_dirs = 16;
    std::vector<double> alpha_grid;
    std::optional<Vector> point;   // flatness; default w⋆
    unsigned workers = 0;
    bool deterministic = false;

    void check() const;
    int horizon() const;
};

CombinationMatrix build_topology(const ExperimentConfig& cfg);
NetworkRiskModel build_model(const ExperimentConfig& cfg);

// Seed of one experiment cell; depends on the cell's content, never on its grid position.
std::uint64_t cell_seed(std::uint64_t seed, AlgorithmKind alg, double mu, int batch);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add(std::vector<std::string> row) { rows.push_back(std::move(row)); }
};

std::string format_number(double x);

/// Writes to `<path>.tmp` and renames over `path`. Without `deterministic` a
/// commented timestamp line precedes the header.
void write_csv_atomic(const std::filesystem::path& path, const CsvTable& table, bool deterministic);

struct ProportionTest {
    double difference = 0.0;
    double stderr_ = 0.0;
    double z = 0.0;
};

// p₁ − p₂ with the unpooled standard error sqrt(p₁(1−p₁)/n₁ + p₂(1−p₂)/n₂).
ProportionTest two_proportion_z(double p1, int n1, double p2, int n2);

double log_log_slope(const std::vector<double>& x, const std::vector<double>& y);

struct CompareRow {
    int n = 0;
    AlgorithmKind alg = AlgorithmKind::centralized;
    double er_theory = 0.0;
    double er_oracle = 0.0;
    double er_mc = 0.0;
    double er_mc_stderr = 0.0;
};

std::vector<CompareRow> compare_experiment(const ExperimentConfig& cfg);
CsvTable to_table(const std::vector<CompareRow>& rows);

struct SweepRow {
    double mu = 0.0;
    int batch = 1;
    int n_eval = 0;
    AlgorithmKind alg = AlgorithmKind::centralized;
    double er_theory = 0.0;
    double er_oracle = 0.0;
    double rel_err = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    struct Slope {
        AlgorithmKind alg;
        double absolute;  // log-log slope of |theory − oracle| against μ
        double relative;  // same for |theory − oracle| / oracle
    };
    std::vector<Slope> slopes;
};

SweepResult mu_sweep(const ExperimentConfig& cfg);
CsvTable to_table(const std::vector<SweepRow>& rows);

struct EscapeCell {
    AlgorithmKind alg = AlgorithmKind::centralized;
    double mu = 0.0;
    int batch = 1;
    EscapeStats stats;
    bool large_batch = false;  // μ²f ≥ 10(μ/B)e at the final step
};

std::vector<EscapeCell> escape_study(const ExperimentConfig& cfg);
CsvTable to_table(const std::vector<EscapeCell>& cells);
CsvTable escape_summary(const std::vector<EscapeCell>& cells);

struct FlatnessRow {
    double alpha = 0.0;
    double j_mean = 0.0;
    double j_stderr = 0.0;
};

struct FlatnessProfile {
    std::vector<FlatnessRow> rows;
    std::vector<Vector> directions;
};

FlatnessProfile flatness_profile(const NetworkRiskModel& model, const Vector& w, int n_dirs,
                                 const std::vector<double>& alpha_grid, Rng& rng);
CsvTable to_table(const FlatnessProfile& profile);

struct SteadyStateRow {
    AlgorithmKind alg = AlgorithmKind::centralized;
    double mu = 0.0;
    int batch = 1;
    double er_theory = 0.0;
    double er_oracle = 0.0;
    double rel_err = 0.0;
};

std::vector<SteadyStateRow> steady_state_experiment(const ExperimentConfig& cfg);
CsvTable to_table(const std::vector<SteadyStateRow>& rows);

// Theory predictions over n = 0 … horizon (stride run.record_every).
CsvTable theory_table(const ExperimentConfig& cfg);
CsvTable oracle_table(const ExperimentConfig& cfg);
// Ensemble statistics of the true recursion for each algorithm.
CsvTable simulate_table(const ExperimentConfig& cfg);

}  // namespace driftlab
