#include "driftlab/topology.hpp"

#include "driftlab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <numeric>

namespace driftlab {

Graph::Graph(int agents) : agents_(agents) {
    if (agents < 1) throw ValidationError("K", "graph needs at least one agent");
    adjacency_.assign(static_cast<std::size_t>(agents) * static_cast<std::size_t>(agents), 0);
}

Graph Graph::from_edges(int agents, const std::vector<std::pair<int, int>>& edges) {
    Graph g(agents);
    for (const auto& [a, b] : edges) g.connect(a, b);
    return g;
}

Graph Graph::cycle(int agents) {
    Graph g(agents);
    for (int k = 0; k + 1 < agents; ++k) g.connect(k, k + 1);
    if (agents > 2) g.connect(agents - 1, 0);
    return g;
}

void Graph::connect(int a, int b) {
    if (a < 0 || b < 0 || a >= agents_ || b >= agents_) {
        throw ValidationError("edges", "edge (" + std::to_string(a) + ", " + std::to_string(b) +
                                           ") references an agent outside [0, K)");
    }
    const auto n = static_cast<std::size_t>(agents_);
    adjacency_[static_cast<std::size_t>(a) * n + static_cast<std::size_t>(b)] = 1;
    adjacency_[static_cast<std::size_t>(b) * n + static_cast<std::size_t>(a)] = 1;
}

bool Graph::adjacent(int a, int b) const {
    const auto n = static_cast<std::size_t>(agents_);
    return adjacency_[static_cast<std::size_t>(a) * n + static_cast<std::size_t>(b)] != 0;
}

int Graph::closed_degree(int k) const {
    int degree = 1;
    for (int l = 0; l < agents_; ++l) {
        if (l != k && adjacent(k, l)) ++degree;
    }
    return degree;
}

bool Graph::connected() const {
    std::vector<char> seen(static_cast<std::size_t>(agents_), 0);
    std::deque<int> queue{0};
    seen[0] = 1;
    int visited = 1;
    while (!queue.empty()) {
        const int k = queue.front();
        queue.pop_front();
        for (int l = 0; l < agents_; ++l) {
            if (!seen[static_cast<std::size_t>(l)] && adjacent(k, l)) {
                seen[static_cast<std::size_t>(l)] = 1;
                ++visited;
                queue.push_back(l);
            }
        }
    }
    return visited == agents_;
}

Graph random_connected_graph(int agents, double edge_probability, Rng& rng, int max_attempts) {
    if (!(edge_probability > 0.0 && edge_probability <= 1.0)) {
        throw ValidationError("edge_probability", "edge probability must lie in (0, 1]");
    }
    std::bernoulli_distribution coin(edge_probability);
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        Graph g(agents);
        for (int a = 0; a < agents; ++a) {
            for (int b = a + 1; b < agents; ++b) {
                if (coin(rng)) g.connect(a, b);
            }
        }
        if (g.connected()) return g;
    }
    throw ConvergenceError("random_connected_graph: no connected sample within the attempt budget");
}

std::string to_string(CombinationKind kind) {
    switch (kind) {
        case CombinationKind::metropolis: return "metropolis";
        case CombinationKind::ring: return "ring";
        case CombinationKind::centralized: return "centralized";
        case CombinationKind::custom: return "custom";
    }
    return "custom";
}

CombinationKind parse_combination_kind(const std::string& name) {
    if (name == "metropolis") return CombinationKind::metropolis;
    if (name == "ring") return CombinationKind::ring;
    if (name == "centralized") return CombinationKind::centralized;
    if (name == "custom") return CombinationKind::custom;
    throw ValidationError("topology.kind", "unknown combination kind '" + name + "'");
}

bool ValidationReport::ok() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

const ValidationCheck* ValidationReport::find(const std::string& name) const {
    for (const auto& c : checks) {
        if (c.name == name) return &c;
    }
    return nullptr;
}

double SpectralDecomposition::second_magnitude() const {
    return eigenvalues.size() > 1 ? std::abs(eigenvalues(1)) : 0.0;
}

Matrix metropolis_weights(const Graph& graph) {
    const int k_count = graph.size();
    std::vector<int> degree(static_cast<std::size_t>(k_count));
    for (int k = 0; k < k_count; ++k) degree[static_cast<std::size_t>(k)] = graph.closed_degree(k);

    Matrix a = Matrix::Zero(k_count, k_count);
    for (int l = 0; l < k_count; ++l) {
        for (int k = 0; k < k_count; ++k) {
            if (l != k && graph.adjacent(l, k)) {
                a(l, k) = 1.0 / std::max(degree[static_cast<std::size_t>(l)],
                                         degree[static_cast<std::size_t>(k)]);
            }
        }
    }
    for (int k = 0; k < k_count; ++k) {
        double off = 0.0;
        for (int l = 0; l < k_count; ++l) {
            if (l != k) off += a(l, k);
        }
        a(k, k) = 1.0 - off;
    }
    return a;
}

CombinationMatrix build_combination_matrix(const CombinationSpec& spec) {
    if (spec.agents < 1) throw ValidationError("K", "K must be at least 1, got " + std::to_string(spec.agents));
    CombinationMatrix out;
    out.kind = spec.kind;
    switch (spec.kind) {
        case CombinationKind::metropolis: {
            if (!spec.graph) throw ValidationError("edges", "metropolis combination requires a graph");
            if (spec.graph->size() != spec.agents) {
                throw ValidationError("K", "graph size does not match K");
            }
            if (!spec.graph->connected()) throw ValidationError("edges", "graph is disconnected");
            out.weights = metropolis_weights(*spec.graph);
            break;
        }
        case CombinationKind::ring:
            out.weights = metropolis_weights(Graph::cycle(spec.agents));
            break;
        case CombinationKind::centralized:
            out.weights = Matrix::Constant(spec.agents, spec.agents, 1.0 / spec.agents);
            break;
        case CombinationKind::custom: {
            if (!spec.matrix) throw ValidationError("matrix", "custom combination requires a matrix");
            out.weights = *spec.matrix;
            if (out.weights.rows() != spec.agents || out.weights.cols() != spec.agents) {
                throw ValidationError("matrix", "custom matrix must be K×K");
            }
            const auto report = validate(out);
            if (!report.ok()) {
                for (const auto& c : report.checks) {
                    if (!c.passed) throw ValidationError("matrix", "custom matrix fails " + c.name + ": " + c.detail);
                }
            }
            break;
        }
    }
    return out;
}

ValidationReport validate(const CombinationMatrix& a) {
    const Matrix& w = a.weights;
    ValidationReport report;
    const Eigen::Index k = w.rows();
    if (w.cols() != k || k == 0) {
        report.checks.push_back({"square", false, "matrix is not square and non-empty"});
        return report;
    }
    constexpr double tol = 1e-12;

    const double asym = (w - w.transpose()).cwiseAbs().maxCoeff();
    report.checks.push_back({"symmetric", asym <= tol, "max |a_lk - a_kl| = " + std::to_string(asym)});

    const double row_err = (w.rowwise().sum().array() - 1.0).abs().maxCoeff();
    const double col_err = (w.colwise().sum().array() - 1.0).abs().maxCoeff();
    report.checks.push_back({"doubly_stochastic", std::max(row_err, col_err) <= tol,
                             "max row/column sum error = " + std::to_string(std::max(row_err, col_err))});

    const bool in_range = (w.array() >= 0.0).all() && (w.array() <= 1.0).all();
    report.checks.push_back({"entries_in_unit_interval", in_range, in_range ? "" : "entry outside [0, 1]"});

    // breadth-first reachability over positive entries, in both directions
    auto reach_all = [&](bool transpose) {
        std::vector<char> seen(static_cast<std::size_t>(k), 0);
        std::deque<Eigen::Index> queue{0};
        seen[0] = 1;
        Eigen::Index count = 1;
        while (!queue.empty()) {
            const Eigen::Index i = queue.front();
            queue.pop_front();
            for (Eigen::Index j = 0; j < k; ++j) {
                const double weight = transpose ? w(j, i) : w(i, j);
                if (weight > 0.0 && !seen[static_cast<std::size_t>(j)]) {
                    seen[static_cast<std::size_t>(j)] = 1;
                    ++count;
                    queue.push_back(j);
                }
            }
        }
        return count == k;
    };
    const bool strong = reach_all(false) && reach_all(true);
    report.checks.push_back({"strongly_connected", strong, strong ? "" : "some agent is unreachable"});

    const bool self_loop = (w.diagonal().array() > 0.0).any();
    report.checks.push_back({"self_loop", self_loop, self_loop ? "" : "no agent has a_kk > 0"});
    return report;
}

Vector perron_vector(const CombinationMatrix& a, int max_iterations) {
    const auto report = validate(a);
    if (!report.ok()) throw ValidationError("matrix", "perron_vector: matrix is not a valid combination policy");
    const Eigen::Index k = a.weights.rows();
    Vector x(k);
    for (Eigen::Index i = 0; i < k; ++i) x(i) = static_cast<double>(i + 1);
    x /= x.sum();
    for (int it = 0; it < max_iterations; ++it) {
        Vector next = a.weights * x;
        next /= next.sum();
        const double change = (next - x).cwiseAbs().maxCoeff();
        x = std::move(next);
        if (change <= 1e-15) {
            if ((x.array() <= 0.0).any()) break;
            return x;
        }
    }
    throw ConvergenceError("perron_vector: power iteration did not converge; matrix is not a valid combination policy");
}

SpectralDecomposition spectral_decompose(const CombinationMatrix& a) {
    const auto report = validate(a);
    if (!report.ok()) {
        for (const auto& c : report.checks) {
            if (!c.passed) throw ValidationError("matrix", "spectral_decompose: matrix fails " + c.name);
        }
    }
    const Eigen::Index k = a.weights.rows();
    const auto eig = jacobi_eigen(a.weights);

    Eigen::Index perron = 0;
    for (Eigen::Index i = 1; i < k; ++i) {
        if (std::abs(eig.values(i) - 1.0) < std::abs(eig.values(perron) - 1.0)) perron = i;
    }

    std::vector<Eigen::Index> order;
    for (Eigen::Index i = 0; i < k; ++i) {
        if (i != perron) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index lhs, Eigen::Index rhs) {
        const double ml = std::abs(eig.values(lhs));
        const double mr = std::abs(eig.values(rhs));
        if (ml != mr) return ml > mr;
        return eig.values(lhs) > eig.values(rhs);
    });
    // Magnitudes that differ only by rounding count as ties: within each such run, larger value first.
    for (std::size_t start = 0; start < order.size();) {
        std::size_t end = start + 1;
        const double lead = std::abs(eig.values(order[start]));
        while (end < order.size() && lead - std::abs(eig.values(order[end])) <= 1e-12) ++end;
        std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end),
                         [&](Eigen::Index lhs, Eigen::Index rhs) { return eig.values(lhs) > eig.values(rhs); });
        start = end;
    }

    SpectralDecomposition out;
    out.eigenvalues.resize(k);
    out.basis.resize(k, k);
    out.eigenvalues(0) = 1.0;
    out.basis.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(k)));
    for (std::size_t j = 0; j < order.size(); ++j) {
        const auto col = static_cast<Eigen::Index>(j + 1);
        out.eigenvalues(col) = eig.values(order[j]);
        Vector v = eig.vectors.col(order[j]);
        // re-orthogonalize against the columns already placed (modified Gram-Schmidt)
        for (Eigen::Index prev = 0; prev < col; ++prev) v -= out.basis.col(prev).dot(v) * out.basis.col(prev);
        out.basis.col(col) = v.normalized();
    }
    return out;
}

SpectralDecomposition rotate_degenerate_eigenspaces(const SpectralDecomposition& s, Rng& rng, double tie_tolerance) {
    SpectralDecomposition out = s;
    const Eigen::Index k = s.eigenvalues.size();
    Eigen::Index start = 1;
    while (start < k) {
        Eigen::Index end = start + 1;
        while (end < k && std::abs(s.eigenvalues(end) - s.eigenvalues(start)) <= tie_tolerance) ++end;
        const Eigen::Index width = end - start;
        if (width > 1) {
            const Matrix q = random_orthogonal(width, rng);
            out.basis.middleCols(start, width) = s.basis.middleCols(start, width) * q;
        }
        start = end;
    }
    return out;
}

void write_matrix_csv(std::ostream& out, const Matrix& m) {
    char buffer[40];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            std::snprintf(buffer, sizeof buffer, "%.17g", m(i, j));
            out << (j ? "," : "") << buffer;
        }
        out << '\n';
    }
}

}  // namespace driftlab
