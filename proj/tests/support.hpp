#pragma once

#include "cimic/core.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace cimic::testing {

template <typename S>
Matrix<S> random_matrix(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix<S> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(n(rng));
  return m;
}

/// Row-wise softmax of Gaussian logits: a batch of soft assignments.
inline MatrixD random_simplex_rows(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
  MatrixD m = random_matrix<double>(rows, cols, seed, scale);
  for (Index r = 0; r < rows; ++r) {
    m.row(r) = (m.row(r).array() - m.row(r).maxCoeff()).exp().matrix();
    m.row(r) /= m.row(r).sum();
  }
  return m;
}

/// Per-coordinate relative error |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradientReport {
  double max_relative_error = 0;
  Index coordinates = 0;
};

/// Central differences of `loss()` over `n` values starting at `values`,
/// compared with `analytic`. Every value is restored afterwards. The
/// denominator floor is 1e-6 scaled by max(1, |loss|), the magnitude at which
/// rounding of the loss itself dominates a difference quotient.
template <typename Loss>
GradientReport check_gradient(double* values, const double* analytic, Index n, Loss&& loss, double step = 1e-5) {
  GradientReport report;
  const double floor = 1e-6 * std::max(1.0, std::abs(loss()));
  for (Index i = 0; i < n; ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double up = loss();
    values[i] = saved - step;
    const double down = loss();
    values[i] = saved;
    const double numeric = (up - down) / (2 * step);
    report.max_relative_error = std::max(report.max_relative_error, relative_error(analytic[i], numeric, floor));
    ++report.coordinates;
  }
  return report;
}

inline GradientReport merge(GradientReport a, const GradientReport& b) {
  a.max_relative_error = std::max(a.max_relative_error, b.max_relative_error);
  a.coordinates += b.coordinates;
  return a;
}

}  // namespace cimic::testing
