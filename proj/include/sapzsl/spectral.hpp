#pragma once

// k-NN Gaussian affinity graphs, the normalized Laplacian and its low-frequency
// spectral basis.

#include <sapzsl/core.hpp>
#include <sapzsl/matcore.hpp>
#include <sapzsl/parallel.hpp>

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace sapzsl {

using SparseMatrix = Eigen::SparseMatrix<double>;

struct GraphConfig {
  Index k_g = 300;
  double sigma = 1.0;
  Index m = 50;
  /// Connect every pair instead of the k_g nearest neighbours.
  bool dense = false;

  void validate(Index n) const {
    if (n < 2) throw ConfigError("graph: need at least 2 points, got " + std::to_string(n));
    if (!dense && (k_g < 1 || k_g >= n)) {
      throw ConfigError("graph: k_g must satisfy 1 <= k_g < N_s (k_g=" + std::to_string(k_g) +
                        ", N_s=" + std::to_string(n) + ")");
    }
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
      throw ConfigError("graph: sigma must be positive");
    }
    if (m < 1 || m > n) {
      throw ConfigError("graph: m must satisfy 1 <= m <= N_s (m=" + std::to_string(m) +
                        ", N_s=" + std::to_string(n) + ")");
    }
  }
};

/// Symmetric weighted adjacency without self-loops.
struct AffinityGraph {
  SparseMatrix weights;
  Vector degree;

  Index n() const { return weights.rows(); }
};

inline double gaussian_affinity(double squared_distance, double sigma) {
  return std::exp(-squared_distance / (2.0 * sigma * sigma));
}

/// Indices of the k nearest columns to column i (excluding i), ordered by
/// (distance, index). Ties go to the lower index.
inline std::vector<Index> nearest_neighbors(const Matrix& x, Index i, Index k,
                                            std::vector<std::pair<double, Index>>& scratch) {
  const Index n = x.cols();
  scratch.clear();
  for (Index j = 0; j < n; ++j) {
    if (j == i) continue;
    scratch.emplace_back((x.col(i) - x.col(j)).squaredNorm(), j);
  }
  const auto kk = static_cast<std::ptrdiff_t>(std::min<Index>(k, n - 1));
  std::partial_sort(scratch.begin(), scratch.begin() + kk, scratch.end());
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(kk));
  for (std::ptrdiff_t t = 0; t < kk; ++t) out.push_back(scratch[static_cast<std::size_t>(t)].second);
  return out;
}

/// Gaussian affinity over the k_g-NN graph of the columns of x, symmetrized
/// by union: (i, j) is an edge iff j is among i's neighbours or vice versa.
inline AffinityGraph build_knn_affinity(const Matrix& x, const GraphConfig& cfg,
                                        unsigned workers = 1) {
  const Index n = x.cols();
  cfg.validate(n);
  require_finite(x, "build_knn_affinity");

  std::vector<std::vector<Index>> nbrs(static_cast<std::size_t>(n));
  if (cfg.dense) {
    for (Index i = 0; i < n; ++i) {
      auto& row = nbrs[static_cast<std::size_t>(i)];
      for (Index j = 0; j < n; ++j) {
        if (j != i) row.push_back(j);
      }
    }
  } else {
    parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t b, std::size_t e) {
      std::vector<std::pair<double, Index>> scratch;
      for (std::size_t i = b; i < e; ++i) {
        nbrs[i] = nearest_neighbors(x, static_cast<Index>(i), cfg.k_g, scratch);
      }
    });
  }

  std::vector<Eigen::Triplet<double>> trips;
  for (Index i = 0; i < n; ++i) {
    for (Index j : nbrs[static_cast<std::size_t>(i)]) {
      const double w = gaussian_affinity((x.col(i) - x.col(j)).squaredNorm(), cfg.sigma);
      if (w <= 0.0) continue;
      trips.emplace_back(i, j, w);
      trips.emplace_back(j, i, w);
    }
  }
  AffinityGraph g;
  g.weights.resize(n, n);
  // Both directions carry the same weight, so max() realizes the union.
  g.weights.setFromTriplets(trips.begin(), trips.end(),
                            [](double a, double b) { return std::max(a, b); });
  g.weights.makeCompressed();
  g.degree = Vector::Zero(n);
  for (Index c = 0; c < g.weights.outerSize(); ++c) {
    for (SparseMatrix::InnerIterator it(g.weights, c); it; ++it) g.degree[c] += it.value();
  }
  return g;
}

namespace detail {

inline Vector inv_sqrt_degree(const AffinityGraph& g) {
  Vector s(g.n());
  for (Index i = 0; i < g.n(); ++i) {
    if (!(g.degree[i] > 0.0)) {
      throw DataError("normalized_laplacian: node " + std::to_string(i) + " is isolated");
    }
    s[i] = 1.0 / std::sqrt(g.degree[i]);
  }
  return s;
}

}  // namespace detail

/// L = I - D^{-1/2} A D^{-1/2}, dense.
inline Matrix normalized_laplacian(const AffinityGraph& g) {
  const Vector s = detail::inv_sqrt_degree(g);
  Matrix l = Matrix::Identity(g.n(), g.n());
  for (Index c = 0; c < g.weights.outerSize(); ++c) {
    for (SparseMatrix::InnerIterator it(g.weights, c); it; ++it) {
      l(it.row(), it.col()) -= s[it.row()] * it.value() * s[it.col()];
    }
  }
  return l;
}

/// Same operator as normalized_laplacian, kept sparse for the Lanczos path.
inline SparseMatrix normalized_laplacian_sparse(const AffinityGraph& g) {
  const Vector s = detail::inv_sqrt_degree(g);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(g.weights.nonZeros() + g.n()));
  for (Index i = 0; i < g.n(); ++i) trips.emplace_back(i, i, 1.0);
  for (Index c = 0; c < g.weights.outerSize(); ++c) {
    for (SparseMatrix::InnerIterator it(g.weights, c); it; ++it) {
      trips.emplace_back(it.row(), it.col(), -s[it.row()] * it.value() * s[it.col()]);
    }
  }
  SparseMatrix l(g.n(), g.n());
  l.setFromTriplets(trips.begin(), trips.end());
  return l;
}

/// The m lowest-frequency Laplacian eigenvectors with their eigenvalues.
/// penalty_weights[i] = sqrt(eigvals[i]) is the per-coefficient weight of the
/// graph-smoothness L1 term once B = Sigma^{1/2} V^T is folded in.
struct SpectralBasis {
  Matrix eigvecs;  // N_s x m
  Vector eigvals;  // m, ascending
  Vector penalty_weights;

  Index m() const { return eigvecs.cols(); }
  Index n() const { return eigvecs.rows(); }
};

namespace detail {

// Normalized-Laplacian eigenvalues live in [0, 2]; round-off below zero is
// clamped so the square-root weights stay real.
inline double clamp_laplacian_eigenvalue(double v) {
  if (v < -1e-8) {
    throw DataError("spectral_basis: negative Laplacian eigenvalue " + std::to_string(v));
  }
  return std::clamp(v, 0.0, 2.0);
}

// Flips v so that its largest-magnitude component (lowest index on ties) is
// positive.
inline void fix_sign(Eigen::Ref<Vector> v) {
  Index arg = 0;
  double best = -1.0;
  for (Index i = 0; i < v.size(); ++i) {
    const double a = std::abs(v[i]);
    if (a > best + 1e-12) {
      best = a;
      arg = i;
    }
  }
  if (v[arg] < 0.0) v = -v;
}

inline SpectralBasis finish_basis(Matrix vecs, const Vector& vals) {
  SpectralBasis b;
  b.eigvecs = std::move(vecs);
  b.eigvals.resize(vals.size());
  b.penalty_weights.resize(vals.size());
  for (Index i = 0; i < vals.size(); ++i) {
    b.eigvals[i] = clamp_laplacian_eigenvalue(vals[i]);
    b.penalty_weights[i] = std::sqrt(b.eigvals[i]);
    fix_sign(b.eigvecs.col(i));
  }
  return b;
}

}  // namespace detail

/// Dense path: full eigendecomposition, keep the m smallest.
inline SpectralBasis spectral_basis(const Matrix& laplacian, Index m) {
  if (m < 1 || m > laplacian.rows()) {
    throw ConfigError("spectral_basis: m=" + std::to_string(m) + " outside [1, " +
                      std::to_string(laplacian.rows()) + "]");
  }
  const EigenPair eig = sym_eig(laplacian);
  return detail::finish_basis(eig.vectors.leftCols(m), eig.values.head(m));
}

/// Iterative path: shift-invert Krylov expansion on the sparse Laplacian.
/// New directions come from solves with (L + shift I), factored once by sparse
/// LDL^T, so the smallest eigenvalues of L dominate and converge in a few
/// dozen vectors. Rayleigh-Ritz and residuals use L itself, with full
/// reorthogonalization. Once the m smallest Ritz pairs have residual below
/// tol, a random vector probes for eigenvalues the Krylov space missed
/// (repeated eigenvalues, e.g. one zero per connected component); the result
/// is accepted when a probe leaves the m smallest Ritz values unchanged.
inline SpectralBasis spectral_basis_lanczos(const SparseMatrix& laplacian, Index m,
                                            double tol = 1e-10, unsigned seed = 0,
                                            double shift = 1e-3) {
  const Index n = laplacian.rows();
  if (m < 1 || m > n) {
    throw ConfigError("spectral_basis: m=" + std::to_string(m) + " outside [1, " +
                      std::to_string(n) + "]");
  }
  if (!(shift > 0.0)) throw ConfigError("spectral_basis: shift must be positive");
  SparseMatrix shifted = laplacian;
  for (Index i = 0; i < n; ++i) shifted.coeffRef(i, i) += shift;
  Eigen::SimplicialLDLT<SparseMatrix> factor(shifted);
  if (factor.info() != Eigen::Success) {
    throw DataError("spectral_basis_lanczos: factorization of the shifted Laplacian failed");
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;

  Matrix q(n, std::min<Index>(n, 4 * m + 32));
  Matrix lq(n, q.cols());  // L q_j, filled before each Rayleigh-Ritz step
  Index cols = 0;
  Index expanded = 0;  // columns whose solve has been appended
  Index applied = 0;

  // Orthogonalizes v against the basis and appends it; false if v lies in it.
  auto append = [&](Vector v) {
    for (int pass = 0; pass < 2; ++pass) {
      v -= q.leftCols(cols) * (q.leftCols(cols).transpose() * v);
    }
    const double nv = v.norm();
    if (nv <= 1e-10) return false;
    if (cols == q.cols()) {
      const Index grow = std::min<Index>(n, 2 * q.cols());
      q.conservativeResize(Eigen::NoChange, grow);
      lq.conservativeResize(Eigen::NoChange, grow);
    }
    q.col(cols++) = v / nv;
    return true;
  };
  auto append_random = [&] {
    for (int attempt = 0; attempt < 8; ++attempt) {
      Vector v(n);
      for (Index i = 0; i < n; ++i) v[i] = normal(rng);
      if (append(std::move(v))) return;
    }
    throw DataError("spectral_basis_lanczos: could not extend Krylov basis");
  };
  auto expand = [&](Index steps) {
    for (Index s = 0; s < steps && cols < n; ++s) {
      const Vector next = factor.solve(Vector(q.col(expanded)));
      if (!append(next)) append_random();  // invariant subspace reached
      ++expanded;
    }
  };

  append_random();
  expand(std::min<Index>(n - 1, m + 8));
  Vector previous;
  bool probing = false;
  while (true) {
    while (applied < cols) {
      lq.col(applied) = laplacian * q.col(applied);
      ++applied;
    }
    Matrix h = q.leftCols(cols).transpose() * lq.leftCols(cols);
    h = 0.5 * (h + h.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> he(h);
    const Matrix y = he.eigenvectors().leftCols(m);
    const Vector theta = he.eigenvalues().head(m);
    const Matrix resid = lq.leftCols(cols) * y - q.leftCols(cols) * y * theta.asDiagonal();
    const bool converged = cols == n || resid.colwise().norm().maxCoeff() <= tol;

    if (converged) {
      if (cols == n || (probing && (theta - previous).cwiseAbs().maxCoeff() <= tol)) {
        return detail::finish_basis(q.leftCols(cols) * y, theta);
      }
      previous = theta;
      probing = true;
      append_random();
      expanded = cols - 1;
    }
    expand(std::max<Index>(4, m / 2));
  }
}

}  // namespace sapzsl
