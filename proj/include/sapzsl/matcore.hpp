#pragma once

// Dense symmetric eigendecomposition and the Sylvester solver used by
// projection learning.

#include <sapzsl/core.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <string>

namespace sapzsl {

/// Eigenvalues in ascending order with orthonormal eigenvectors in columns.
struct EigenPair {
  Vector values;
  Matrix vectors;

  Index size() const { return values.size(); }
};

inline constexpr double kSymmetryTolerance = 1e-10;

/// Largest elementwise |S - S^T|, relative to max(1, max|S|).
inline double asymmetry(const Matrix& s) {
  if (s.size() == 0) return 0.0;
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  return (s - s.transpose()).cwiseAbs().maxCoeff() / scale;
}

/// Eigendecomposition of a symmetric matrix.
///
/// The input is symmetrized as (S + S^T) / 2 before decomposition, which
/// removes accumulation noise from products such as Y Y^T. Throws DataError
/// for non-square input or asymmetry above kSymmetryTolerance.
inline EigenPair sym_eig(const Matrix& s) {
  if (s.rows() != s.cols()) {
    throw DataError("sym_eig: matrix is not square (" + shape_str(s) + ")");
  }
  require_finite(s, "sym_eig");
  const double asym = asymmetry(s);
  if (asym > kSymmetryTolerance) {
    throw DataError("sym_eig: matrix is not symmetric (max relative asymmetry " +
                    std::to_string(asym) + ")");
  }
  const Matrix sym = 0.5 * (s + s.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) {
    throw DataError("sym_eig: eigensolver did not converge");
  }
  return {solver.eigenvalues(), solver.eigenvectors()};
}

/// Solves M1 W + W M2 = R given eigendecompositions of the symmetric M1 (k x k)
/// and M2 (d x d).
///
/// In the joint eigenbasis the equation is diagonal:
///   (P^T W Q)_ij = (P^T R Q)_ij / (theta1_i + theta2_j).
/// A pair whose sum is not safely positive raises SingularError naming it.
inline Matrix solve_sylvester(const EigenPair& m1, const EigenPair& m2, const Matrix& r) {
  if (r.rows() != m1.size() || r.cols() != m2.size()) {
    throw DataError("solve_sylvester: right-hand side is " + shape_str(r) + ", expected " +
                    std::to_string(m1.size()) + "x" + std::to_string(m2.size()));
  }
  if (r.size() == 0) return r;

  const double scale = std::max({1.0, m1.values.cwiseAbs().maxCoeff(),
                                 m2.values.cwiseAbs().maxCoeff()});
  const double tol = 1e-13 * scale;

  Matrix rt = m1.vectors.transpose() * r * m2.vectors;
  for (Index j = 0; j < rt.cols(); ++j) {
    for (Index i = 0; i < rt.rows(); ++i) {
      const double denom = m1.values[i] + m2.values[j];
      if (!(denom > tol)) {
        throw SingularError("solve_sylvester: eigenvalue pair (" + std::to_string(i) + ", " +
                                std::to_string(j) + ") sums to " + std::to_string(denom) +
                                "; operator is singular",
                            i, j);
      }
      rt(i, j) /= denom;
    }
  }
  return m1.vectors * rt * m2.vectors.transpose();
}

/// Solves M1 W + W M2 = R for symmetric positive semidefinite M1, M2 with
/// min eig(M1) + min eig(M2) > 0.
inline Matrix solve_sylvester(const Matrix& m1, const Matrix& m2, const Matrix& r) {
  return solve_sylvester(sym_eig(m1), sym_eig(m2), r);
}

inline double sylvester_residual(const Matrix& m1, const Matrix& m2, const Matrix& r,
                                 const Matrix& w) {
  return (m1 * w + w * m2 - r).norm();
}

/// Upper bound on ||W||_F for the projection-learning solution
/// (Y Y^T + lambda4 I) W + W X X^T = 2 Y X^T.
inline double projection_norm_bound(double y_norm, double x_norm, double lambda4) {
  return 2.0 * y_norm * x_norm / lambda4;
}

/// Upper bound on ||dW||_F when Y is perturbed by dY. With c1 = ||Y||_F and
/// c2 = 2 c1 ||X||_F / lambda4:
///   ||dW|| <= ||dY|| (2 ||X|| + c2 (||dY|| + 2 c1)) / lambda4.
/// For unit-norm feature columns ||X||_F = sqrt(N_s).
inline double perturbation_bound(double dy_norm, double y_norm, double x_norm, double lambda4) {
  const double c1 = y_norm;
  const double c2 = projection_norm_bound(c1, x_norm, lambda4);
  return dy_norm * (2.0 * x_norm + c2 * (dy_norm + 2.0 * c1)) / lambda4;
}

}  // namespace sapzsl
