#pragma once

#include "driftlab/linalg.hpp"
#include "driftlab/rng.hpp"

#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace driftlab {

/// Undirected graph over K agents. Self-loops may be present but are not
/// required: the Metropolis construction always counts a node as its own
/// neighbor.
class Graph {
public:
    explicit Graph(int agents);
    static Graph from_edges(int agents, const std::vector<std::pair<int, int>>& edges);
    static Graph cycle(int agents);

    int size() const noexcept { return agents_; }
    void connect(int a, int b);
    bool adjacent(int a, int b) const;
    // Number of neighbors of k, counting k itself once.
    int closed_degree(int k) const;
    bool connected() const;

private:
    int agents_;
    std::vector<char> adjacency_;
};

/// Erdős–Rényi-style graph with edge probability p, resampled until connected.
Graph random_connected_graph(int agents, double edge_probability, Rng& rng, int max_attempts = 10000);

enum class CombinationKind { metropolis, ring, centralized, custom };

std::string to_string(CombinationKind kind);
CombinationKind parse_combination_kind(const std::string& name);

struct CombinationSpec {
    CombinationKind kind = CombinationKind::ring;
    int agents = 0;
    std::optional<Graph> graph;    // required for metropolis
    std::optional<Matrix> matrix;  // required for custom
};

struct CombinationMatrix {
    Matrix weights;
    CombinationKind kind = CombinationKind::custom;

    int agents() const noexcept { return static_cast<int>(weights.rows()); }
};

struct ValidationCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct ValidationReport {
    std::vector<ValidationCheck> checks;

    bool ok() const;
    const ValidationCheck* find(const std::string& name) const;
};

struct SpectralDecomposition {
    Vector eigenvalues;  // λ₁ = 1 first, then descending magnitude (ties: descending value)
    Matrix basis;        // V, orthogonal; first column (1/√K)·1

    int agents() const noexcept { return static_cast<int>(eigenvalues.size()); }
    // V_α: the K−1 columns after the first.
    Matrix v_alpha() const { return basis.rightCols(basis.cols() - 1); }
    // Diagonal of P_α.
    Vector p_alpha() const { return eigenvalues.tail(eigenvalues.size() - 1); }
    double second_magnitude() const;
};

CombinationMatrix build_combination_matrix(const CombinationSpec& spec);
Matrix metropolis_weights(const Graph& graph);

ValidationReport validate(const CombinationMatrix& a);

/// Perron vector of a valid combination matrix, obtained by power iteration
/// from a non-uniform start. Throws ConvergenceError when the iteration does
/// not settle within the budget, which happens for matrices violating the
/// strong-connectivity / self-loop conditions.
Vector perron_vector(const CombinationMatrix& a, int max_iterations = 1000000);

SpectralDecomposition spectral_decompose(const CombinationMatrix& a);

/// Replaces V_α by another orthonormal completion: every group of (numerically)
/// repeated eigenvalues gets its basis rotated by a random orthogonal matrix.
SpectralDecomposition rotate_degenerate_eigenspaces(const SpectralDecomposition& s, Rng& rng,
                                                    double tie_tolerance = 1e-9);

// Row-major, 17 significant digits, no header.
void write_matrix_csv(std::ostream& out, const Matrix& m);

}  // namespace driftlab
