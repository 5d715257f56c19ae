#pragma once

#include "cimic/nn/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace cimic::nn {

template <typename Scalar>
using ParamList = std::vector<ParamRef<Scalar>>;

template <typename Scalar>
void append(ParamList<Scalar>& dst, const ParamList<Scalar>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

template <typename Scalar>
Index total_size(const ParamList<Scalar>& refs) {
  Index n = 0;
  for (const auto& r : refs) n += r.size;
  return n;
}

/// Flattens the referenced tensors, in list order, into one vector.
template <typename Scalar>
Vector<Scalar> flatten(const ParamList<Scalar>& refs) {
  Vector<Scalar> out(total_size(refs));
  Index off = 0;
  for (const auto& r : refs) {
    std::copy_n(r.value, r.size, out.data() + off);
    off += r.size;
  }
  return out;
}

/// Inverse of `flatten`; the length must match exactly.
template <typename Scalar>
void unflatten(const ParamList<Scalar>& refs, const Vector<Scalar>& flat) {
  if (flat.size() != total_size(refs))
    detail::raise<ArgumentError>("parameter vector has length ", flat.size(), ", expected ",
                                 total_size(refs));
  Index off = 0;
  for (const auto& r : refs) {
    std::copy_n(flat.data() + off, r.size, r.value);
    off += r.size;
  }
}

template <typename Scalar>
void zero_grad(const ParamList<Scalar>& refs) {
  for (const auto& r : refs) std::fill_n(r.grad, r.size, Scalar(0));
}

/// Adaptive-moment optimizer over a fixed parameter list.
template <typename Scalar>
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(ParamList<Scalar> params, Options opts) : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      m_.emplace_back(Vector<Scalar>::Zero(p.size));
      v_.emplace_back(Vector<Scalar>::Zero(p.size));
    }
  }

  void zero_grad() { nn::zero_grad(params_); }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    const Scalar b1 = static_cast<Scalar>(opts_.beta1);
    const Scalar b2 = static_cast<Scalar>(opts_.beta2);
    const Scalar step_size = static_cast<Scalar>(opts_.learning_rate / c1);
    const Scalar inv_c2 = static_cast<Scalar>(1.0 / c2);
    const Scalar eps = static_cast<Scalar>(opts_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& p = params_[i];
      Eigen::Map<Vector<Scalar>> w(p.value, p.size);
      Eigen::Map<const Vector<Scalar>> g(p.grad, p.size);
      m_[i] = b1 * m_[i] + (1 - b1) * g;
      v_[i] = b2 * v_[i] + ((1 - b2) * g.array().square()).matrix();
      w.array() -= step_size * m_[i].array() / ((v_[i].array() * inv_c2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }

 private:
  ParamList<Scalar> params_;
  Options opts_;
  std::vector<Vector<Scalar>> m_, v_;
  long t_ = 0;
};

}  // namespace cimic::nn
