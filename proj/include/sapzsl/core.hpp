#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace sapzsl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters or configuration (bad lambda, k_g out of range, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, inconsistent or degenerate input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Sylvester operator with a (numerically) zero eigenvalue sum.
class SingularError : public Error {
 public:
  SingularError(const std::string& what, Index row_index, Index col_index)
      : Error(what), row_(row_index), col_(col_index) {}

  Index row_index() const { return row_; }
  Index col_index() const { return col_; }

 private:
  Index row_;
  Index col_;
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw DataError(std::string(what) + ": non-finite entry");
  }
}

}  // namespace sapzsl
