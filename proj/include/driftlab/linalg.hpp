#pragma once

#include "driftlab/rng.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace driftlab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct SymmetricEigen {
    Vector values;   // unsorted, in the order produced by the sweeps
    Matrix vectors;  // columns are orthonormal eigenvectors
    int sweeps = 0;
};

struct JacobiOptions {
    double off_diagonal_tolerance = 1e-13;
    int max_sweeps = 100;
};

/// Cyclic Jacobi eigensolver for symmetric matrices.
///
/// Sweeps until the off-diagonal Frobenius norm drops below
/// `off_diagonal_tolerance * max(1, ||S||_F)`; throws ConvergenceError when the
/// sweep budget is exhausted.
SymmetricEigen jacobi_eigen(const Matrix& symmetric, const JacobiOptions& options = {});

// Principal square root of a symmetric positive semi-definite matrix. Negative
// eigenvalues above -tolerance are clamped to zero.
Matrix psd_sqrt(const Matrix& symmetric, double tolerance = 1e-10);
Matrix spd_inverse_sqrt(const Matrix& spd);

bool is_positive_definite(const Matrix& symmetric);
double min_eigenvalue(const Matrix& symmetric);
double max_eigenvalue(const Matrix& symmetric);

/// Largest singular value by power iteration on SᵀS. For symmetric input this
/// is the spectral norm. Throws ConvergenceError after `max_iterations`.
double spectral_norm(const Matrix& m, double tolerance = 1e-12, int max_iterations = 100000);

// Gaussian elimination with partial pivoting. Throws ValidationError on a singular system.
Vector solve_linear(const Matrix& a, const Vector& b);

Matrix symmetrize(const Matrix& m);

// Uniformly distributed (Haar) orthogonal matrix.
Matrix random_orthogonal(Eigen::Index n, Rng& rng);

Vector standard_normal_vector(Eigen::Index n, Rng& rng);

// Kronecker product with the M×M identity.
Matrix kron_identity(const Matrix& a, Eigen::Index m);

// Block diagonal matrix from equally sized square blocks.
Matrix block_diagonal(const std::vector<Matrix>& blocks);

}  // namespace driftlab
