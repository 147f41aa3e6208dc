#pragma once

// Weighted-L1 regularized quadratics
//
//   minimize  1/2 x^T H x + g^T x + sum_i weights_i |x_i|
//
// for symmetric positive-definite H. Least-squares forms map onto this with
// the usual factor of two: ||A x - b||^2 + lambda |x|_1 gives H = 2 A^T A,
// g = -2 A^T b, weights = lambda.

#include <sapzsl/core.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace sapzsl {

inline double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

struct QuadLassoProblem {
  Matrix H;
  Vector g;
  Vector weights;

  Index size() const { return g.size(); }

  void validate() const {
    if (H.rows() != H.cols() || H.rows() != g.size() || weights.size() != g.size()) {
      throw DataError("QuadLassoProblem: inconsistent shapes H=" + shape_str(H) +
                      " g=" + std::to_string(g.size()) +
                      " weights=" + std::to_string(weights.size()));
    }
    if ((weights.array() < 0.0).any()) throw DataError("QuadLassoProblem: negative L1 weight");
    if ((H.diagonal().array() <= 0.0).any()) {
      throw DataError("QuadLassoProblem: H has a non-positive diagonal entry");
    }
  }

  double objective(const Vector& x) const {
    return 0.5 * x.dot(H * x) + g.dot(x) + weights.dot(x.cwiseAbs());
  }
};

struct LassoOptions {
  double tol = 1e-8;
  int max_sweeps = 1000;
};

struct LassoSolution {
  Vector x;
  double kkt_residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Largest KKT violation given the smooth gradient grad = H x + g.
inline double kkt_violation(const Vector& grad, const Vector& weights, const Vector& x) {
  double worst = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    const double v = x[i] != 0.0 ? std::abs(grad[i] + weights[i] * (x[i] > 0.0 ? 1.0 : -1.0))
                                 : std::max(0.0, std::abs(grad[i]) - weights[i]);
    worst = std::max(worst, v);
  }
  return worst;
}

inline double kkt_residual(const QuadLassoProblem& p, const Vector& x) {
  if (x.size() != p.size()) throw DataError("kkt_residual: size mismatch");
  return kkt_violation(p.H * x + p.g, p.weights, x);
}

/// Cyclic coordinate descent with exact per-coordinate minimization, starting
/// from x0. H is taken by reference so one factor can serve many right-hand
/// sides. Coordinates are visited in `order` when given.
inline LassoSolution lasso_cd(const Matrix& H, const Vector& g, const Vector& weights,
                              Vector x0, const LassoOptions& opts = {},
                              const std::vector<Index>* order = nullptr) {
  const Index n = g.size();
  LassoSolution sol;
  sol.x = std::move(x0);
  Vector grad = H * sol.x + g;
  sol.kkt_residual = kkt_violation(grad, weights, sol.x);
  if (sol.kkt_residual <= opts.tol) {
    sol.converged = true;
    return sol;
  }
  for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
    for (Index t = 0; t < n; ++t) {
      const Index i = order ? (*order)[static_cast<std::size_t>(t)] : t;
      const double hii = H(i, i);
      const double old = sol.x[i];
      const double updated = soft_threshold(hii * old - grad[i], weights[i]) / hii;
      if (updated != old) {
        grad += (updated - old) * H.col(i);
        sol.x[i] = updated;
      }
    }
    sol.iterations = sweep;
    // Refresh the gradient to keep incremental drift out of the stopping test.
    grad = H * sol.x + g;
    sol.kkt_residual = kkt_violation(grad, weights, sol.x);
    if (sol.kkt_residual <= opts.tol) {
      sol.converged = true;
      return sol;
    }
  }
  return sol;
}

inline LassoSolution lasso_cd(const QuadLassoProblem& p, double tol = 1e-8, int max_sweeps = 1000) {
  p.validate();
  return lasso_cd(p.H, p.g, p.weights, Vector::Zero(p.size()), LassoOptions{tol, max_sweeps});
}

}  // namespace sapzsl
