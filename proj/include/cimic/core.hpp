#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cimic {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;
using Index = Eigen::Index;
using IndexList = std::vector<Index>;

/// Base class of every error raised by the library. The CLI maps the
/// concrete subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad argument or configuration value (exit code 2).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

/// Filesystem failure (exit code 3).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents (exit code 3).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Dataset contents violate an invariant (exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or other numerical breakdown (exit code 4).
class NumericError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

template <typename E, typename... Args>
[[noreturn]] void raise(Args&&... args) {
  throw E(concat(std::forward<Args>(args)...));
}

}  // namespace detail

/// Evaluation mode of a network: batch statistics vs running statistics.
enum class Mode { train, eval };

/// Gathers the listed rows of `m` into a new dense matrix.
template <typename Derived>
Matrix<typename Derived::Scalar> gather_rows(const Eigen::MatrixBase<Derived>& m,
                                             const IndexList& rows) {
  Matrix<typename Derived::Scalar> out(static_cast<Index>(rows.size()), m.cols());
  for (Index i = 0; i < out.rows(); ++i) out.row(i) = m.row(rows[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace cimic
