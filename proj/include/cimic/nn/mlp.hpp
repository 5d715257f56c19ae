#pragma once

#include "cimic/core.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace cimic::nn {

enum class Activation { none, relu, leaky_relu, softmax, sigmoid };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::softmax: return "softmax";
    case Activation::sigmoid: return "sigmoid";
  }
  return "none";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "none") return Activation::none;
  if (s == "relu") return Activation::relu;
  if (s == "leaky_relu") return Activation::leaky_relu;
  if (s == "softmax") return Activation::softmax;
  if (s == "sigmoid") return Activation::sigmoid;
  detail::raise<FormatError>("unknown activation '", s, "'");
}

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// One dense layer: linear map, optional batch normalization, activation.
struct LayerSpec {
  Index in = 0;
  Index out = 0;
  bool batch_norm = false;
  Activation activation = Activation::none;

  bool operator==(const LayerSpec&) const = default;
};

struct MlpSpec {
  std::vector<LayerSpec> layers;

  bool operator==(const MlpSpec&) const = default;

  Index input_width() const { return layers.front().in; }
  Index output_width() const { return layers.back().out; }

  std::vector<Index> widths() const {
    std::vector<Index> w;
    if (layers.empty()) return w;
    w.push_back(layers.front().in);
    for (const auto& l : layers) w.push_back(l.out);
    return w;
  }

  bool has_batch_norm() const {
    for (const auto& l : layers)
      if (l.batch_norm) return true;
    return false;
  }

  void validate() const {
    if (layers.empty()) detail::raise<ArgumentError>("MLP needs at least one layer");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].in <= 0 || layers[i].out <= 0)
        detail::raise<ArgumentError>("MLP layer ", i, " has non-positive width");
      if (i > 0 && layers[i].in != layers[i - 1].out)
        detail::raise<ArgumentError>("MLP layer ", i, " input width ", layers[i].in,
                                     " does not match previous output ", layers[i - 1].out);
    }
  }

  /// Chain of layers through `widths`; every layer gets `hidden_bn` and
  /// `hidden_act` except the last, which gets `out_bn` and `out_act`.
  static MlpSpec chain(const std::vector<Index>& widths, bool hidden_bn, Activation hidden_act,
                       bool out_bn, Activation out_act) {
    if (widths.size() < 2) detail::raise<ArgumentError>("MLP needs at least two widths");
    MlpSpec spec;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      const bool last = i + 2 == widths.size();
      spec.layers.push_back({widths[i], widths[i + 1], last ? out_bn : hidden_bn,
                             last ? out_act : hidden_act});
    }
    spec.validate();
    return spec;
  }
};

/// Non-owning view of one parameter tensor and its gradient accumulator.
template <typename Scalar>
struct ParamRef {
  std::string name;
  Scalar* value = nullptr;
  Scalar* grad = nullptr;
  Index size = 0;
};

template <typename Scalar>
struct DenseLayer {
  LayerSpec spec;
  Matrix<Scalar> weight;  // in x out
  RowVector<Scalar> bias;
  RowVector<Scalar> gamma, beta;
  RowVector<Scalar> running_mean, running_var;

  Matrix<Scalar> grad_weight;
  RowVector<Scalar> grad_bias, grad_gamma, grad_beta;
};

/// Intermediate values of one forward pass, needed by `Mlp::backward`.
template <typename Scalar>
struct MlpTrace {
  struct Layer {
    Matrix<Scalar> input;
    Matrix<Scalar> normalized;
    RowVector<Scalar> inv_std;
    Matrix<Scalar> output;
  };
  Mode mode = Mode::train;
  std::vector<Layer> layers;
};

template <typename Scalar, typename Derived>
void softmax_rows_inplace(Eigen::MatrixBase<Derived>& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const Scalar mx = row.maxCoeff();
    row = (row.array() - mx).exp().matrix();
    row /= row.sum();
  }
}

/// Fully connected network with optional batch normalization per layer and
/// hand-written reverse-mode differentiation. Rows are instances.
template <typename Scalar>
class Mlp {
 public:
  using Mat = Matrix<Scalar>;
  using Trace = MlpTrace<Scalar>;

  Mlp() = default;

  /// Fan-in scaled uniform initialization U(-1/sqrt(in), 1/sqrt(in)) for
  /// weights and biases; batch-norm scale 1, shift 0.
  Mlp(MlpSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    for (const auto& ls : spec_.layers) {
      DenseLayer<Scalar> l;
      l.spec = ls;
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      const double bound = 1.0 / std::sqrt(static_cast<double>(ls.in));
      l.weight.resize(ls.in, ls.out);
      for (Index j = 0; j < ls.out; ++j)
        for (Index i = 0; i < ls.in; ++i) l.weight(i, j) = static_cast<Scalar>(bound * u(rng));
      l.bias.resize(ls.out);
      for (Index j = 0; j < ls.out; ++j) l.bias(j) = static_cast<Scalar>(bound * u(rng));
      if (ls.batch_norm) {
        l.gamma = RowVector<Scalar>::Ones(ls.out);
        l.beta = RowVector<Scalar>::Zero(ls.out);
        l.running_mean = RowVector<Scalar>::Zero(ls.out);
        l.running_var = RowVector<Scalar>::Ones(ls.out);
      }
      layers_.push_back(std::move(l));
    }
    zero_grad();
  }

  const MlpSpec& spec() const { return spec_; }
  Index input_width() const { return spec_.input_width(); }
  Index output_width() const { return spec_.output_width(); }
  std::vector<DenseLayer<Scalar>>& layers() { return layers_; }
  const std::vector<DenseLayer<Scalar>>& layers() const { return layers_; }

  /// Forward pass. In train mode batch-norm layers use batch statistics and
  /// update their running statistics; pass `trace` to enable `backward`.
  Mat forward(const Mat& x, Mode mode, Trace* trace = nullptr) {
    check_input(x, mode);
    if (trace) {
      trace->mode = mode;
      trace->layers.assign(layers_.size(), {});
    }
    Mat h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      auto& l = layers_[i];
      typename Trace::Layer* tl = trace ? &trace->layers[i] : nullptr;
      if (tl) tl->input = h;
      Mat z = h * l.weight;
      z.rowwise() += l.bias;
      if (l.spec.batch_norm) batch_norm(l, z, mode, tl, /*update_running=*/true);
      activate(l.spec.activation, z);
      if (tl) tl->output = z;
      h = std::move(z);
    }
    return h;
  }

  /// Eval-mode forward; never mutates the network.
  Mat infer(const Mat& x) const {
    check_input(x, Mode::eval);
    Mat h = x;
    for (const auto& l : layers_) {
      Mat z = h * l.weight;
      z.rowwise() += l.bias;
      if (l.spec.batch_norm) {
        const RowVector<Scalar> inv_std =
            (l.running_var.array() + static_cast<Scalar>(kBatchNormEps)).rsqrt().matrix();
        z = ((z.rowwise() - l.running_mean).array().rowwise() * inv_std.array()).matrix();
        z = (z.array().rowwise() * l.gamma.array()).matrix();
        z.rowwise() += l.beta;
      }
      activate(l.spec.activation, z);
      h = std::move(z);
    }
    return h;
  }

  /// Accumulates parameter gradients for the pass recorded in `trace` given
  /// dL/d(output); returns dL/d(input) (empty when `need_input_grad` is false).
  Mat backward(const Trace& trace, const Mat& grad_out, bool need_input_grad = true) {
    if (trace.layers.size() != layers_.size())
      detail::raise<ArgumentError>("trace does not belong to this network");
    Mat g = grad_out;
    for (std::size_t k = layers_.size(); k-- > 0;) {
      auto& l = layers_[k];
      const auto& tl = trace.layers[k];
      activation_backward(l.spec.activation, tl.output, g);
      if (l.spec.batch_norm) {
        const Index n = g.rows();
        l.grad_gamma += (g.array() * tl.normalized.array()).colwise().sum().matrix();
        l.grad_beta += g.colwise().sum();
        Mat dxhat = (g.array().rowwise() * l.gamma.array()).matrix();
        if (trace.mode == Mode::train) {
          const RowVector<Scalar> sum_d = dxhat.colwise().sum();
          const RowVector<Scalar> sum_dx =
              (dxhat.array() * tl.normalized.array()).colwise().sum().matrix();
          Mat t = (dxhat * static_cast<Scalar>(n)).rowwise() - sum_d;
          t -= (tl.normalized.array().rowwise() * sum_dx.array()).matrix();
          g = (t.array().rowwise() * (tl.inv_std.array() / static_cast<Scalar>(n))).matrix();
        } else {
          g = (dxhat.array().rowwise() * tl.inv_std.array()).matrix();
        }
      }
      l.grad_weight.noalias() += tl.input.transpose() * g;
      l.grad_bias += g.colwise().sum();
      if (k > 0 || need_input_grad) {
        Mat gin = g * l.weight.transpose();
        g = std::move(gin);
      }
    }
    return need_input_grad ? g : Mat();
  }

  void zero_grad() {
    for (auto& l : layers_) {
      l.grad_weight = Mat::Zero(l.weight.rows(), l.weight.cols());
      l.grad_bias = RowVector<Scalar>::Zero(l.bias.size());
      if (l.spec.batch_norm) {
        l.grad_gamma = RowVector<Scalar>::Zero(l.gamma.size());
        l.grad_beta = RowVector<Scalar>::Zero(l.beta.size());
      }
    }
  }

  /// Learnable parameters in canonical order: per layer weight (column
  /// major, in x out), bias, then batch-norm scale and shift.
  std::vector<ParamRef<Scalar>> parameters(const std::string& prefix = "") {
    std::vector<ParamRef<Scalar>> refs;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      auto& l = layers_[i];
      const std::string p = prefix + "layer" + std::to_string(i) + ".";
      refs.push_back({p + "weight", l.weight.data(), l.grad_weight.data(), l.weight.size()});
      refs.push_back({p + "bias", l.bias.data(), l.grad_bias.data(), l.bias.size()});
      if (l.spec.batch_norm) {
        refs.push_back({p + "bn_scale", l.gamma.data(), l.grad_gamma.data(), l.gamma.size()});
        refs.push_back({p + "bn_shift", l.beta.data(), l.grad_beta.data(), l.beta.size()});
      }
    }
    return refs;
  }

  /// Batch-norm running statistics in canonical order (no gradients).
  std::vector<ParamRef<Scalar>> buffers(const std::string& prefix = "") {
    std::vector<ParamRef<Scalar>> refs;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      auto& l = layers_[i];
      if (!l.spec.batch_norm) continue;
      const std::string p = prefix + "layer" + std::to_string(i) + ".";
      refs.push_back({p + "running_mean", l.running_mean.data(), nullptr, l.running_mean.size()});
      refs.push_back({p + "running_var", l.running_var.data(), nullptr, l.running_var.size()});
    }
    return refs;
  }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& l : layers_) {
      n += l.weight.size() + l.bias.size();
      if (l.spec.batch_norm) n += l.gamma.size() + l.beta.size();
    }
    return n;
  }

 private:
  void check_input(const Mat& x, Mode mode) const {
    if (layers_.empty()) detail::raise<ArgumentError>("network is not initialized");
    if (x.cols() != input_width())
      detail::raise<ArgumentError>("input width ", x.cols(), " does not match network width ",
                                   input_width());
    if (x.rows() < 1) detail::raise<ArgumentError>("empty batch");
    if (mode == Mode::train && x.rows() < 2 && spec_.has_batch_norm())
      detail::raise<ArgumentError>("train mode with batch normalization needs a batch of >= 2");
  }

  static void batch_norm(DenseLayer<Scalar>& l, Mat& z, Mode mode,
                         typename Trace::Layer* tl, bool update_running) {
    const Scalar eps = static_cast<Scalar>(kBatchNormEps);
    RowVector<Scalar> mean, inv_std;
    if (mode == Mode::train) {
      const Index n = z.rows();
      mean = z.colwise().mean();
      z.rowwise() -= mean;
      const RowVector<Scalar> var = z.array().square().colwise().mean().matrix();
      inv_std = (var.array() + eps).rsqrt().matrix();
      if (update_running) {
        const Scalar mom = static_cast<Scalar>(kBatchNormMomentum);
        const Scalar unbias = static_cast<Scalar>(n) / static_cast<Scalar>(n - 1);
        l.running_mean = (1 - mom) * l.running_mean + mom * mean;
        l.running_var = (1 - mom) * l.running_var + (mom * unbias) * var;
      }
    } else {
      z.rowwise() -= l.running_mean;
      inv_std = (l.running_var.array() + eps).rsqrt().matrix();
    }
    z = (z.array().rowwise() * inv_std.array()).matrix();
    if (tl) {
      tl->normalized = z;
      tl->inv_std = inv_std;
    }
    z = (z.array().rowwise() * l.gamma.array()).matrix();
    z.rowwise() += l.beta;
  }

  static void activate(Activation a, Mat& z) {
    switch (a) {
      case Activation::none: break;
      case Activation::relu: z = z.cwiseMax(Scalar(0)); break;
      case Activation::leaky_relu: {
        const Scalar s = static_cast<Scalar>(kLeakySlope);
        z = z.unaryExpr([s](Scalar v) { return v > 0 ? v : s * v; });
        break;
      }
      case Activation::softmax: softmax_rows_inplace<Scalar>(z); break;
      case Activation::sigmoid:
        z = z.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
        break;
    }
  }

  // `y` is the activation output; g is overwritten with dL/d(pre-activation).
  static void activation_backward(Activation a, const Mat& y, Mat& g) {
    switch (a) {
      case Activation::none: break;
      case Activation::relu: g = (y.array() > 0).select(g, Scalar(0)); break;
      case Activation::leaky_relu:
        g = (y.array() > 0).select(g, static_cast<Scalar>(kLeakySlope) * g);
        break;
      case Activation::softmax: {
        const Vector<Scalar> dot = (g.array() * y.array()).rowwise().sum().matrix();
        g = (y.array() * (g.colwise() - dot).array()).matrix();
        break;
      }
      case Activation::sigmoid: g = (g.array() * y.array() * (1 - y.array())).matrix(); break;
    }
  }

  MlpSpec spec_;
  std::vector<DenseLayer<Scalar>> layers_;
};

/// Copies every learnable parameter and running statistic of `src` into
/// `dst`, which must share its architecture.
template <typename Scalar>
void copy_state(Mlp<Scalar>& dst, Mlp<Scalar>& src) {
  if (!(dst.spec() == src.spec())) detail::raise<ArgumentError>("architecture mismatch in copy");
  auto d = dst.parameters(), s = src.parameters();
  for (std::size_t i = 0; i < d.size(); ++i) std::copy_n(s[i].value, s[i].size, d[i].value);
  auto db = dst.buffers(), sb = src.buffers();
  for (std::size_t i = 0; i < db.size(); ++i) std::copy_n(sb[i].value, sb[i].size, db[i].value);
}

}  // namespace cimic::nn
