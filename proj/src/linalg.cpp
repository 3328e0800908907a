#include "driftlab/linalg.hpp"

#include "driftlab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

namespace driftlab {

namespace {

double off_diagonal_norm(const Matrix& a) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            if (i != j) sum += a(i, j) * a(i, j);
        }
    }
    return std::sqrt(sum);
}

}  // namespace

SymmetricEigen jacobi_eigen(const Matrix& symmetric, const JacobiOptions& options) {
    if (symmetric.rows() != symmetric.cols()) {
        throw ValidationError("jacobi_eigen: matrix must be square");
    }
    const Eigen::Index n = symmetric.rows();
    Matrix a = symmetrize(symmetric);
    Matrix v = Matrix::Identity(n, n);
    const double threshold = options.off_diagonal_tolerance * std::max(1.0, a.norm());

    SymmetricEigen result;
    int sweep = 0;
    while (off_diagonal_norm(a) > threshold) {
        if (sweep >= options.max_sweeps) {
            throw ConvergenceError("jacobi_eigen: no convergence after " +
                                   std::to_string(options.max_sweeps) + " sweeps");
        }
        ++sweep;
        for (Eigen::Index p = 0; p < n - 1; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                // A <- Jᵀ A J with J the (p, q) Givens rotation
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    result.values = a.diagonal();
    result.vectors = std::move(v);
    result.sweeps = sweep;
    return result;
}

Matrix psd_sqrt(const Matrix& symmetric, double tolerance) {
    const auto eig = jacobi_eigen(symmetric);
    Vector roots(eig.values.size());
    for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
        const double lambda = eig.values(i);
        if (lambda < -tolerance * std::max(1.0, symmetric.norm())) {
            throw ValidationError("psd_sqrt: matrix is not positive semi-definite");
        }
        roots(i) = std::sqrt(std::max(lambda, 0.0));
    }
    return eig.vectors * roots.asDiagonal() * eig.vectors.transpose();
}

Matrix spd_inverse_sqrt(const Matrix& spd) {
    const auto eig = jacobi_eigen(spd);
    Vector roots(eig.values.size());
    for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
        if (eig.values(i) <= 0.0) {
            throw ValidationError("spd_inverse_sqrt: matrix is not positive definite");
        }
        roots(i) = 1.0 / std::sqrt(eig.values(i));
    }
    return eig.vectors * roots.asDiagonal() * eig.vectors.transpose();
}

double min_eigenvalue(const Matrix& symmetric) {
    if (symmetric.size() == 0) return 0.0;
    return jacobi_eigen(symmetric).values.minCoeff();
}

double max_eigenvalue(const Matrix& symmetric) {
    if (symmetric.size() == 0) return 0.0;
    return jacobi_eigen(symmetric).values.maxCoeff();
}

bool is_positive_definite(const Matrix& symmetric) {
    if (symmetric.rows() != symmetric.cols() || symmetric.size() == 0) return false;
    if ((symmetric - symmetric.transpose()).norm() > 1e-12 * std::max(1.0, symmetric.norm())) {
        return false;
    }
    return min_eigenvalue(symmetric) > 0.0;
}

double spectral_norm(const Matrix& m, double tolerance, int max_iterations) {
    if (m.size() == 0) return 0.0;
    const Matrix gram = m.transpose() * m;
    if (gram.norm() == 0.0) return 0.0;

    // fixed irregular start so the dominant direction is not missed by symmetry
    Vector x(gram.cols());
    std::uint64_t state = 0x9e3779b97f4a7c15ULL;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        state = state * 6364136223846793005ULL + 1442695040888963407ULL;
        x(i) = 1.0 + static_cast<double>(state >> 11) * 0x1.0p-53;
    }
    x.normalize();

    double estimate = x.dot(gram * x);
    for (int it = 0; it < max_iterations; ++it) {
        Vector y = gram * x;
        const double norm = y.norm();
        if (norm == 0.0) return 0.0;
        x = y / norm;
        const double next = x.dot(gram * x);
        if (std::abs(next - estimate) <= tolerance * std::max(1.0, std::abs(next))) {
            return std::sqrt(next);
        }
        estimate = next;
    }
    throw ConvergenceError("spectral_norm: power iteration did not converge");
}

Vector solve_linear(const Matrix& a, const Vector& b) {
    const Eigen::Index n = a.rows();
    if (a.cols() != n || b.size() != n) {
        throw ValidationError("solve_linear: dimension mismatch");
    }
    Matrix lu = a;
    Vector rhs = b;
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    for (Eigen::Index col = 0; col < n; ++col) {
        Eigen::Index pivot = col;
        for (Eigen::Index r = col + 1; r < n; ++r) {
            if (std::abs(lu(r, col)) > std::abs(lu(pivot, col))) pivot = r;
        }
        if (std::abs(lu(pivot, col)) <= 1e-300 * scale) {
            throw ValidationError("solve_linear: singular matrix");
        }
        if (pivot != col) {
            lu.row(pivot).swap(lu.row(col));
            std::swap(rhs(pivot), rhs(col));
        }
        for (Eigen::Index r = col + 1; r < n; ++r) {
            const double factor = lu(r, col) / lu(col, col);
            if (factor == 0.0) continue;
            lu.row(r).tail(n - col) -= factor * lu.row(col).tail(n - col);
            rhs(r) -= factor * rhs(col);
        }
    }
    Vector x(n);
    for (Eigen::Index r = n - 1; r >= 0; --r) {
        double acc = rhs(r);
        for (Eigen::Index c = r + 1; c < n; ++c) acc -= lu(r, c) * x(c);
        x(r) = acc / lu(r, r);
    }
    return x;
}

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

Matrix random_orthogonal(Eigen::Index n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix g(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) g(i, j) = normal(rng);
    }
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();
    const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < n; ++j) {
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    }
    return q;
}

Vector standard_normal_vector(Eigen::Index n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
    return z;
}


Matrix kron_identity(const Matrix& a, Eigen::Index m) {
    Matrix out = Matrix::Zero(a.rows() * m, a.cols() * m);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            if (a(i, j) != 0.0) {
                out.block(i * m, j * m, m, m).diagonal().setConstant(a(i, j));
            }
        }
    }
    return out;
}

Matrix block_diagonal(const std::vector<Matrix>& blocks) {
    if (blocks.empty()) return Matrix();
    const Eigen::Index m = blocks.front().rows();
    const auto k = static_cast<Eigen::Index>(blocks.size());
    Matrix out = Matrix::Zero(k * m, k * m);
    for (Eigen::Index i = 0; i < k; ++i) {
        out.block(i * m, i * m, m, m) = blocks[static_cast<std::size_t>(i)];
    }
    return out;
}

}  // namespace driftlab
