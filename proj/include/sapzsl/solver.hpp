#pragma once

// Alternating minimization of
//
//   F(Y, alpha, W) = ||Y - Yt||_F^2 + lambda1 sum_j sum_i sqrt(sigma_i) |alpha_ij|
//                  + lambda2 ||Y - Y0||_1
//                  + lambda3 (||W X - Y||_F^2 + ||X - W^T Y||_F^2 + lambda4 ||W||_F^2)
//
// with Yt = (V_m alpha)^T restricted to the low-frequency Laplacian basis.
// Each outer iteration runs three exact (or KKT-tolerance) block updates:
// graph-smooth sparse coding (alpha), sparse denoising (Y) and bidirectional
// projection learning (W).

#include <sapzsl/core.hpp>
#include <sapzsl/dataio.hpp>
#include <sapzsl/l1solve.hpp>
#include <sapzsl/matcore.hpp>
#include <sapzsl/parallel.hpp>
#include <sapzsl/spectral.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace sapzsl {

enum class EigenMethod { dense, lanczos };

/// Which blocks run. propagate_denoise is the full model; propagate_only
/// replaces the sparse denoising step with Y = Yt.
enum class Variant { propagate_denoise, propagate_only };

struct SolverParams {
  double lambda1 = 0.01;
  double lambda2 = 1e-4;
  double lambda3 = 1e-6;
  double lambda4 = 0.01;
  GraphConfig graph{};
  int max_iters = 5;
  double rel_tol = 1e-4;
  LassoOptions lasso{};
  EigenMethod eigen_method = EigenMethod::dense;
  Variant variant = Variant::propagate_denoise;
  /// Return the projection refit on unit-L1 columns of Y* instead of the last
  /// loop iterate. Propagated columns carry only a fraction of the annotated
  /// mass, which skews the feature-space distances used for prediction.
  bool refit_normalized = true;
  unsigned workers = 1;

  void validate() const {
    auto nonneg = [](double v, const char* name) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw ConfigError(std::string(name) + " must be a finite nonnegative number");
      }
    };
    nonneg(lambda1, "lambda1");
    nonneg(lambda2, "lambda2");
    nonneg(lambda3, "lambda3");
    if (!(lambda4 > 0.0) || !std::isfinite(lambda4)) {
      throw ConfigError("lambda4 must be positive (Sylvester operator must be nonsingular)");
    }
    if (max_iters < 1) throw ConfigError("max_iters must be at least 1");
    nonneg(rel_tol, "rel_tol");
    if (!(lasso.tol > 0.0) || lasso.max_sweeps < 1) throw ConfigError("invalid inner solver options");
  }
};

struct StepRecord {
  int iteration;
  std::string step;  // "init", "sap-i", "sap-ii", "bpl"
  double objective;
};

struct SolverState {
  Matrix Y;      // k x N_s
  Matrix alpha;  // m x k
  Matrix W;      // k x d
  std::vector<double> objective_trace;  // one value per outer iteration
  std::vector<StepRecord> steps;
  int iterations = 0;
  bool converged = false;             // stopped on rel_tol before max_iters
  Index inner_failures = 0;           // sparse-denoising columns that missed the KKT tolerance
  double max_inner_kkt = 0.0;
};

struct ObjectiveTerms {
  double fit = 0.0;         // ||Y - Yt||^2
  double smoothness = 0.0;  // lambda1 * weighted |alpha|
  double sparsity = 0.0;    // lambda2 * ||Y - Y0||_1
  double projection = 0.0;  // lambda3 * (...)

  double total() const { return fit + smoothness + sparsity + projection; }
};

/// Yt = (V_m alpha)^T, k x N_s.
inline Matrix propagated_attributes(const Matrix& alpha, const SpectralBasis& basis) {
  return (basis.eigvecs * alpha).transpose();
}

/// ||W X - Y||^2 + ||X - W^T Y||^2 + lambda4 ||W||^2 (without the lambda3 factor).
inline double projection_loss(const Matrix& w, const Matrix& x, const Matrix& y, double lambda4) {
  return (w * x - y).squaredNorm() + (x - w.transpose() * y).squaredNorm() +
         lambda4 * w.squaredNorm();
}

inline ObjectiveTerms objective_terms(const Matrix& y, const Matrix& alpha, const Matrix& w,
                                      const Dataset& data, const SpectralBasis& basis,
                                      const SolverParams& p) {
  ObjectiveTerms t;
  t.fit = (y - propagated_attributes(alpha, basis)).squaredNorm();
  t.smoothness = p.lambda1 * (basis.penalty_weights.asDiagonal() * alpha.cwiseAbs()).sum();
  t.sparsity = p.lambda2 * (y - data.Y_init).lpNorm<1>();
  t.projection = p.lambda3 * projection_loss(w, data.X, y, p.lambda4);
  return t;
}

/// Restricted objective; the smoothness term uses the per-coefficient
/// weights, which equals ||B Yt^T||_1 because Yt lies in span(V_m).
inline double objective(const SolverState& s, const Dataset& data, const SpectralBasis& basis,
                        const SolverParams& p) {
  return objective_terms(s.Y, s.alpha, s.W, data, basis, p).total();
}

/// Projection learning: solves (Y Y^T + lambda4 I) W + W (X X^T) = 2 Y X^T.
/// This is the stationarity condition of the last three objective terms in W;
/// lambda3 cancels. Pass the eigendecomposition of X X^T to reuse it.
inline Matrix bpl(const Matrix& y, const Matrix& x, double lambda4,
                  const EigenPair* xxt_eig = nullptr) {
  if (y.cols() != x.cols()) {
    throw DataError("bpl: attributes have " + std::to_string(y.cols()) +
                    " columns, features have " + std::to_string(x.cols()));
  }
  Matrix m1 = y * y.transpose();
  m1.diagonal().array() += lambda4;
  const EigenPair e1 = sym_eig(m1);
  const Matrix r = 2.0 * y * x.transpose();
  if (xxt_eig != nullptr) return solve_sylvester(e1, *xxt_eig, r);
  return solve_sylvester(e1, sym_eig(x * x.transpose()), r);
}

inline Matrix init_w(const Matrix& x, const Matrix& y_init, double lambda4) {
  return bpl(y_init, x, lambda4);
}

/// Graph-smooth sparse coding. Because V_m has orthonormal columns,
/// ||V_m a - y||^2 = ||a - V_m^T y||^2 + const, so each coefficient is an
/// independent scalar lasso with closed-form soft-thresholding at
/// lambda1 * sqrt(sigma_i) / 2.
inline Matrix sap_i(const Matrix& y, const SpectralBasis& basis, double lambda1) {
  if (y.cols() != basis.n()) {
    throw DataError("sap_i: attributes have " + std::to_string(y.cols()) +
                    " columns, basis has " + std::to_string(basis.n()) + " nodes");
  }
  Matrix alpha = basis.eigvecs.transpose() * y.transpose();  // m x k
  for (Index j = 0; j < alpha.cols(); ++j) {
    for (Index i = 0; i < alpha.rows(); ++i) {
      alpha(i, j) = soft_threshold(alpha(i, j), 0.5 * lambda1 * basis.penalty_weights[i]);
    }
  }
  return alpha;
}

struct SapIIResult {
  Matrix Y;
  Index failures = 0;
  double max_kkt = 0.0;
};

/// Shared quadratic of the per-image denoising problems,
/// H = 2 [(1 + lambda3) I + lambda3 W W^T].
inline Matrix sap_ii_hessian(const Matrix& w, double lambda3) {
  Matrix h = 2.0 * lambda3 * (w * w.transpose());
  h.diagonal().array() += 2.0 * (1.0 + lambda3);
  return h;
}

/// Linear terms of the denoising problems (one column per image) at
/// Ybar = Y - Y0 = 0.
inline Matrix sap_ii_linear(const Matrix& ytilde, const Matrix& w, const Dataset& data,
                            double lambda3) {
  const Matrix& y0 = data.Y_init;
  return 2.0 * (y0 - ytilde) - 2.0 * lambda3 * (w * data.X - y0) -
         2.0 * lambda3 * w * (data.X - w.transpose() * y0);
}

/// Sparse denoising: for each image solves
///   min_b ||b + y0 - yt||^2 + lambda2 |b|_1 + lambda3 (||W x - b - y0||^2 + ||x - W^T (b + y0)||^2)
/// by coordinate descent and returns Y = b + y0. `y_warm` seeds the descent
/// (pass the current Y so the step never increases the objective).
inline SapIIResult sap_ii(const Matrix& ytilde, const Matrix& w, const Dataset& data,
                          double lambda2, double lambda3, const Matrix* y_warm = nullptr,
                          const LassoOptions& opts = {}, unsigned workers = 1) {
  const Index k = data.k();
  const Index n = data.n();
  if (ytilde.rows() != k || ytilde.cols() != n || w.rows() != k || w.cols() != data.d()) {
    throw DataError("sap_ii: inconsistent shapes");
  }
  const Matrix h = sap_ii_hessian(w, lambda3);
  const Matrix g = sap_ii_linear(ytilde, w, data, lambda3);
  const Vector weights = Vector::Constant(k, lambda2);

  SapIIResult out;
  out.Y.resize(k, n);
  std::vector<Index> failed(static_cast<std::size_t>(n), 0);
  std::vector<double> kkt(static_cast<std::size_t>(n), 0.0);
  parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t b, std::size_t e) {
    for (std::size_t jj = b; jj < e; ++jj) {
      const auto j = static_cast<Index>(jj);
      Vector x0 = y_warm ? Vector(y_warm->col(j) - data.Y_init.col(j)) : Vector::Zero(k);
      const LassoSolution sol = lasso_cd(h, g.col(j), weights, std::move(x0), opts);
      out.Y.col(j) = sol.x + data.Y_init.col(j);
      failed[jj] = sol.converged ? 0 : 1;
      kkt[jj] = sol.kkt_residual;
    }
  });
  for (std::size_t j = 0; j < failed.size(); ++j) {
    out.failures += failed[j];
    out.max_kkt = std::max(out.max_kkt, kkt[j]);
  }
  return out;
}

/// Basis of the training graph as configured in p.
inline SpectralBasis training_basis(const Matrix& x, const SolverParams& p) {
  const AffinityGraph g = build_knn_affinity(x, p.graph, p.workers);
  if (p.eigen_method == EigenMethod::lanczos) {
    return spectral_basis_lanczos(normalized_laplacian_sparse(g), p.graph.m);
  }
  return spectral_basis(normalized_laplacian(g), p.graph.m);
}

struct TrainResult {
  Matrix W;  // projection used for prediction
  SolverState state;
  SpectralBasis basis;
};

inline void check_trainable(const Dataset& data, const SolverParams& p) {
  p.validate();
  data.validate();
  if (data.r() < 1) throw DataError("train: no annotated images");
}

/// Alternating minimization over a precomputed basis.
inline SolverState train_with_basis(const Dataset& data, const SpectralBasis& basis,
                                    const SolverParams& p) {
  check_trainable(data, p);
  if (basis.n() != data.n()) throw DataError("train: basis does not match the training set");

  const EigenPair xxt = sym_eig(data.X * data.X.transpose());
  SolverState s;
  s.Y = data.Y_init;
  s.alpha = Matrix::Zero(basis.m(), data.k());
  s.W = bpl(s.Y, data.X, p.lambda4, &xxt);

  auto record = [&](int it, const char* step) {
    const double f = objective(s, data, basis, p);
    s.steps.push_back({it, step, f});
    return f;
  };
  double prev = record(0, "init");

  for (int it = 1; it <= p.max_iters; ++it) {
    s.alpha = sap_i(s.Y, basis, p.lambda1);
    record(it, "sap-i");

    const Matrix ytilde = propagated_attributes(s.alpha, basis);
    if (p.variant == Variant::propagate_denoise) {
      SapIIResult r = sap_ii(ytilde, s.W, data, p.lambda2, p.lambda3, &s.Y, p.lasso, p.workers);
      s.Y = std::move(r.Y);
      s.inner_failures += r.failures;
      s.max_inner_kkt = std::max(s.max_inner_kkt, r.max_kkt);
    } else {
      s.Y = ytilde;
    }
    record(it, "sap-ii");

    s.W = bpl(s.Y, data.X, p.lambda4, &xxt);
    const double f = record(it, "bpl");
    s.objective_trace.push_back(f);
    s.iterations = it;

    const double decrease = (prev - f) / std::max(std::abs(prev), 1e-300);
    prev = f;
    if (decrease < p.rel_tol) {
      s.converged = true;
      break;
    }
  }
  return s;
}

/// Final projection: the loop's W*, or the refit on unit-L1 attribute columns.
inline Matrix output_projection(const Dataset& data, const SolverState& s, const SolverParams& p) {
  if (!p.refit_normalized) return s.W;
  return bpl(normalize_columns_l1(s.Y), data.X, p.lambda4);
}

inline TrainResult train(const Dataset& data, const SolverParams& p) {
  check_trainable(data, p);
  TrainResult out;
  out.basis = training_basis(data.X, p);
  out.state = train_with_basis(data, out.basis, p);
  out.W = output_projection(data, out.state, p);
  return out;
}

/// Projection learning on the annotated images alone (no propagation).
inline Matrix train_annotated_only(const Dataset& data, double lambda4) {
  if (data.r() < 1) throw DataError("train: no annotated images");
  Matrix x(data.d(), data.r());
  Matrix y(data.k(), data.r());
  Index t = 0;
  for (Index i = 0; i < data.n(); ++i) {
    if (!data.annotated[static_cast<std::size_t>(i)]) continue;
    x.col(t) = data.X.col(i);
    y.col(t) = data.Y_init.col(i);
    ++t;
  }
  return bpl(y, x, lambda4);
}

/// Tag refinement: Y_init holds noisy tags; the refined tags are Y*.
inline Matrix refine_tags(const Dataset& data, const SolverParams& p) {
  return train(data, p).state.Y;
}

}  // namespace sapzsl
