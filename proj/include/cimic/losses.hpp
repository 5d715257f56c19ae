#pragma once

// Loss families of the composite objective. Every loss is a pure function of
// its inputs and optionally writes its gradient with respect to those inputs.

#include "cimic/core.hpp"
#include "cimic/networks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace cimic {

using PresenceBits = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct LossWeights {
  double alpha = 0.1;  // reconstruction
  double beta = 0.1;   // contrastive prediction
  double gamma = 9.0;  // entropy regularization inside the consistency loss

  void validate() const {
    if (!(alpha >= 0) || !(beta >= 0) || !(gamma >= 0))
      detail::raise<ArgumentError>("loss weights must be non-negative (alpha=", alpha,
                                   ", beta=", beta, ", gamma=", gamma, ")");
  }
};

inline constexpr double kJointEps = 1e-9;
inline constexpr double kProbabilityClamp = 1e-7;

/// Σ_v mean over present rows of ‖x − x̂‖². An empty `presence` means all
/// rows are present. Absent rows are never read.
template <typename Scalar>
Scalar reconstruction_loss(const std::vector<Matrix<Scalar>>& x,
                           const std::vector<Matrix<Scalar>>& x_hat,
                           const PresenceBits& presence = {},
                           std::vector<Matrix<Scalar>>* grad_x_hat = nullptr) {
  if (x.size() != x_hat.size())
    detail::raise<ArgumentError>("reconstruction: ", x.size(), " views vs ", x_hat.size(),
                                 " reconstructions");
  const bool masked = presence.size() > 0;
  if (grad_x_hat) grad_x_hat->resize(x.size());
  Scalar total = 0;
  for (std::size_t v = 0; v < x.size(); ++v) {
    if (x[v].rows() != x_hat[v].rows() || x[v].cols() != x_hat[v].cols())
      detail::raise<ArgumentError>("reconstruction: view ", v, " shape ", x[v].rows(), "x",
                                   x[v].cols(), " vs ", x_hat[v].rows(), "x", x_hat[v].cols());
    if (masked && (presence.rows() != x[v].rows() || presence.cols() != static_cast<Index>(x.size())))
      detail::raise<ArgumentError>("reconstruction: presence shape does not match the views");
    Index count = 0;
    for (Index r = 0; r < x[v].rows(); ++r)
      if (!masked || presence(r, static_cast<Index>(v))) ++count;
    if (grad_x_hat) (*grad_x_hat)[v] = Matrix<Scalar>::Zero(x[v].rows(), x[v].cols());
    if (count == 0) continue;
    const Scalar inv = Scalar(1) / static_cast<Scalar>(count);
    Scalar sum = 0;
    for (Index r = 0; r < x[v].rows(); ++r) {
      if (masked && !presence(r, static_cast<Index>(v))) continue;
      const RowVector<Scalar> diff = x_hat[v].row(r) - x[v].row(r);
      sum += diff.squaredNorm();
      if (grad_x_hat) (*grad_x_hat)[v].row(r) = (2 * inv) * diff;
    }
    total += sum * inv;
  }
  return total;
}

/// Mean over rows of 2 − 2·cos(q, t). `t` is a constant: only dL/dq is
/// produced.
template <typename Scalar>
Scalar prediction_direction_loss(const Matrix<Scalar>& q, const Matrix<Scalar>& t,
                                 Matrix<Scalar>* grad_q = nullptr) {
  if (q.rows() != t.rows() || q.cols() != t.cols())
    detail::raise<ArgumentError>("direction loss: shapes ", q.rows(), "x", q.cols(), " vs ",
                                 t.rows(), "x", t.cols());
  if (q.rows() == 0) detail::raise<ArgumentError>("direction loss: empty batch");
  const Index n = q.rows();
  if (grad_q) grad_q->resize(q.rows(), q.cols());
  double total = 0;
  for (Index r = 0; r < n; ++r) {
    const Scalar qn = q.row(r).norm();
    const Scalar tn = t.row(r).norm();
    if (!(qn > 0) || !(tn > 0))
      detail::raise<NumericError>("direction loss: row ", r, " has zero norm");
    const Scalar dot = q.row(r).dot(t.row(r));
    const Scalar cos = dot / (qn * tn);
    total += 2.0 - 2.0 * static_cast<double>(cos);
    if (grad_q) {
      // d/dq [-2 q·t/(|q||t|)] = -2/(|q||t|) (t - (q·t)/|q|² q)
      const Scalar s = Scalar(-2) / (qn * tn * static_cast<Scalar>(n));
      grad_q->row(r) = s * (t.row(r) - (dot / (qn * qn)) * q.row(r));
    }
  }
  return static_cast<Scalar>(total / static_cast<double>(n));
}

/// Symmetrized, clamped, renormalized joint distribution of two soft
/// assignments. Computed in double precision regardless of input type.
struct JointDistribution {
  MatrixD p;                 // final C x C joint
  Eigen::VectorXd row, col;  // marginals of `p`
  MatrixD raw;               // symmetrized, before clamping
  double clamp_sum = 1.0;    // sum of the clamped matrix before renormalizing

  Index classes() const { return p.rows(); }

  /// Wraps an explicit matrix: clamps at ε and renormalizes.
  static JointDistribution from_matrix(const MatrixD& m) {
    if (m.rows() != m.cols() || m.rows() == 0)
      detail::raise<ArgumentError>("joint distribution must be a non-empty square matrix");
    if (!m.allFinite() || (m.array() < 0).any())
      detail::raise<ArgumentError>("joint distribution entries must be finite and non-negative");
    JointDistribution jd;
    jd.raw = m;
    const MatrixD clamped = m.cwiseMax(kJointEps);
    jd.clamp_sum = clamped.sum();
    jd.p = clamped / jd.clamp_sum;
    jd.row = jd.p.rowwise().sum();
    jd.col = jd.p.colwise().sum().transpose();
    return jd;
  }
};

namespace detail {

template <typename Scalar>
void check_assignments(const Matrix<Scalar>& q, const char* name) {
  for (Index r = 0; r < q.rows(); ++r) {
    const double s = static_cast<double>(q.row(r).sum());
    if (std::abs(s - 1.0) > 1e-4 || (q.row(r).array() < 0).any())
      raise<ArgumentError>("joint distribution: row ", r, " of ", name,
                           " is not a probability vector (sum ", s, ")");
  }
}

}  // namespace detail

/// P = (1/N) Σₙ q1ₙ q2ₙᵀ, then P ← (P + Pᵀ)/2, clamp at ε, renormalize.
template <typename Scalar>
JointDistribution joint_distribution(const Matrix<Scalar>& q1, const Matrix<Scalar>& q2) {
  if (q1.rows() != q2.rows() || q1.cols() != q2.cols())
    detail::raise<ArgumentError>("joint distribution: assignment shapes differ");
  if (q1.rows() == 0) detail::raise<ArgumentError>("joint distribution: empty batch");
  detail::check_assignments(q1, "Q1");
  detail::check_assignments(q2, "Q2");
  const MatrixD a = q1.template cast<double>();
  const MatrixD b = q2.template cast<double>();
  MatrixD p = a.transpose() * b / static_cast<double>(q1.rows());
  p = 0.5 * (p + p.transpose()).eval();
  return JointDistribution::from_matrix(p);
}

/// Back-propagates dL/dP (w.r.t. the final, renormalized P) to the two
/// assignment matrices.
template <typename Scalar>
void joint_distribution_backward(const Matrix<Scalar>& q1, const Matrix<Scalar>& q2,
                                 const JointDistribution& jd, const MatrixD& grad_p,
                                 Matrix<Scalar>* grad_q1, Matrix<Scalar>* grad_q2) {
  const double n = static_cast<double>(q1.rows());
  // renormalization
  MatrixD g = (grad_p.array() - (grad_p.array() * jd.p.array()).sum()).matrix() / jd.clamp_sum;
  // clamp
  g = (jd.raw.array() >= kJointEps).select(g, 0.0);
  // symmetrization
  g = 0.5 * (g + g.transpose()).eval();
  if (grad_q1) *grad_q1 = (q2.template cast<double>() * g.transpose() / n).template cast<Scalar>();
  if (grad_q2) *grad_q2 = (q1.template cast<double>() * g / n).template cast<Scalar>();
}

/// −Σᵢⱼ Pᵢⱼ [log Pᵢⱼ − (γ+1)(log Pᵢ + log Pⱼ)] = −(MI(P) + γ(H(Pᵢ) + H(Pⱼ))).
inline double consistency_loss(const JointDistribution& jd, double gamma,
                               MatrixD* grad_p = nullptr) {
  const auto& p = jd.p;
  const Eigen::ArrayXd log_row = jd.row.array().log();
  const Eigen::ArrayXd log_col = jd.col.array().log();
  const double g1 = gamma + 1.0;
  double loss = 0;
  for (Index j = 0; j < p.cols(); ++j)
    for (Index i = 0; i < p.rows(); ++i)
      loss -= p(i, j) * (std::log(p(i, j)) - g1 * (log_row(i) + log_col(j)));
  if (grad_p) {
    grad_p->resize(p.rows(), p.cols());
    for (Index j = 0; j < p.cols(); ++j)
      for (Index i = 0; i < p.rows(); ++i)
        (*grad_p)(i, j) = -(std::log(p(i, j)) + 1.0) + g1 * (log_row(i) + log_col(j) + 2.0);
  }
  return loss;
}

/// Consistency loss straight from two soft-assignment batches.
template <typename Scalar>
double consistency_loss(const Matrix<Scalar>& q1, const Matrix<Scalar>& q2, double gamma,
                        Matrix<Scalar>* grad_q1 = nullptr, Matrix<Scalar>* grad_q2 = nullptr) {
  const JointDistribution jd = joint_distribution(q1, q2);
  if (!grad_q1 && !grad_q2) return consistency_loss(jd, gamma);
  MatrixD gp;
  const double loss = consistency_loss(jd, gamma, &gp);
  joint_distribution_backward(q1, q2, jd, gp, grad_q1, grad_q2);
  return loss;
}

namespace detail {

template <typename Scalar>
Scalar clamp_probability(Scalar p) {
  const Scalar lo = static_cast<Scalar>(kProbabilityClamp);
  return std::clamp(p, lo, Scalar(1) - lo);
}

template <typename Scalar>
void check_probabilities(const Vector<Scalar>& p, const char* name) {
  if (p.size() == 0) raise<ArgumentError>(name, ": empty batch");
  for (Index i = 0; i < p.size(); ++i) {
    if (!std::isfinite(static_cast<double>(p(i)))) raise<NumericError>(name, ": non-finite value ", p(i));
    if (!(p(i) >= 0 && p(i) <= 1)) raise<ArgumentError>(name, ": value ", p(i), " is not a probability");
  }
}

}  // namespace detail

/// −mean(log p_real) − mean(log(1 − p_fake)); probabilities are clamped to
/// [1e-7, 1 − 1e-7]. Gradients are taken at the clamped values.
template <typename Scalar>
Scalar discriminator_loss(const Vector<Scalar>& p_real, const Vector<Scalar>& p_fake,
                          Vector<Scalar>* grad_real = nullptr, Vector<Scalar>* grad_fake = nullptr) {
  detail::check_probabilities(p_real, "discriminator loss (real)");
  detail::check_probabilities(p_fake, "discriminator loss (fake)");
  const Scalar nr = static_cast<Scalar>(p_real.size());
  const Scalar nf = static_cast<Scalar>(p_fake.size());
  Scalar loss = 0;
  if (grad_real) grad_real->resize(p_real.size());
  if (grad_fake) grad_fake->resize(p_fake.size());
  for (Index i = 0; i < p_real.size(); ++i) {
    const Scalar p = detail::clamp_probability(p_real(i));
    loss -= std::log(p) / nr;
    if (grad_real) (*grad_real)(i) = Scalar(-1) / (p * nr);
  }
  for (Index i = 0; i < p_fake.size(); ++i) {
    const Scalar p = detail::clamp_probability(p_fake(i));
    loss -= std::log(1 - p) / nf;
    if (grad_fake) (*grad_fake)(i) = Scalar(1) / ((1 - p) * nf);
  }
  return loss;
}

enum class GeneratorMode { nonsaturating, minimax };

inline const char* to_string(GeneratorMode m) {
  return m == GeneratorMode::nonsaturating ? "nonsaturating" : "minimax";
}

/// nonsaturating: −mean(log p_fake); minimax: mean(log(1 − p_fake)).
template <typename Scalar>
Scalar generator_loss(const Vector<Scalar>& p_fake, GeneratorMode mode,
                      Vector<Scalar>* grad_fake = nullptr) {
  detail::check_probabilities(p_fake, "generator loss");
  const Scalar n = static_cast<Scalar>(p_fake.size());
  Scalar loss = 0;
  if (grad_fake) grad_fake->resize(p_fake.size());
  for (Index i = 0; i < p_fake.size(); ++i) {
    const Scalar p = detail::clamp_probability(p_fake(i));
    if (mode == GeneratorMode::nonsaturating) {
      loss -= std::log(p) / n;
      if (grad_fake) (*grad_fake)(i) = Scalar(-1) / (p * n);
    } else {
      loss += std::log(1 - p) / n;
      if (grad_fake) (*grad_fake)(i) = Scalar(-1) / ((1 - p) * n);
    }
  }
  return loss;
}

/// Component values of the network-1 objective.
struct Network1Parts {
  double cc = 0;
  double rec = 0;
  double pre = 0;
};

/// L = L_cc + α·L_rec + β·L_pre.
inline double composite_network1_loss(const Network1Parts& parts, const LossWeights& w) {
  const auto check = [](double v, const char* name) {
    if (!std::isfinite(v)) detail::raise<NumericError>("composite loss: component ", name, " is ", v);
  };
  check(parts.cc, "L_cc");
  check(parts.rec, "L_rec");
  check(parts.pre, "L_pre");
  return parts.cc + w.alpha * parts.rec + w.beta * parts.pre;
}

/// Number of direction terms summed per prediction pair.
enum class PredictionTerms { four = 4, two = 2 };

/// Sum over the pairs of dl(hᵒpᵒdᵒ(Z_src), pᵗdᵗ(Z_tgt)) and, with four
/// terms, also dl(hᵒpᵒdᵒ(Z_tgt), pᵗdᵗ(Z_src)). `latents[v]` is view v.
template <typename Scalar>
Scalar prediction_loss(std::vector<PredictionPair<Scalar>>& pairs,
                       const std::vector<Matrix<Scalar>>& latents, Mode mode,
                       PredictionTerms terms = PredictionTerms::four) {
  Scalar total = 0;
  for (auto& pair : pairs) {
    const auto s = static_cast<std::size_t>(pair.source_view);
    const auto t = static_cast<std::size_t>(pair.target_view);
    if (s >= latents.size() || t >= latents.size())
      detail::raise<ArgumentError>("prediction loss: pair refers to a missing view");
    if (latents[s].rows() != latents[t].rows() || latents[s].cols() != latents[t].cols())
      detail::raise<ArgumentError>("prediction loss: latent shapes differ");
    total += prediction_direction_loss(pair.predict_online(latents[s], mode),
                                       pair.project_target(latents[t], mode));
    if (terms == PredictionTerms::four)
      total += prediction_direction_loss(pair.predict_online(latents[t], mode),
                                         pair.project_target(latents[s], mode));
  }
  return total;
}

}  // namespace cimic
