#pragma once

#include "cimic/core.hpp"
#include "cimic/nn/mlp.hpp"
#include "cimic/nn/optim.hpp"

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

namespace cimic {

/// Layer widths shared by every network of a model.
struct Architecture {
  std::vector<Index> hidden = {1024, 1024, 1024};   // autoencoder hidden widths
  Index latent_dim = 128;
  Index prediction_dim = 128;                       // C, width of the softmax heads
  Index head_hidden = 256;                          // hidden width of decoder/projector/predictor MLPs
  std::vector<Index> discriminator_hidden = {1024, 256};

  bool operator==(const Architecture&) const = default;

  void validate() const {
    if (latent_dim <= 0 || prediction_dim <= 0 || head_hidden <= 0)
      detail::raise<ArgumentError>("architecture widths must be positive");
    for (Index h : hidden)
      if (h <= 0) detail::raise<ArgumentError>("autoencoder hidden widths must be positive");
    for (Index h : discriminator_hidden)
      if (h <= 0) detail::raise<ArgumentError>("discriminator hidden widths must be positive");
  }
};

namespace detail {

template <typename Scalar>
void require_finite(const Matrix<Scalar>& x, const char* what) {
  if (x.allFinite()) return;
  for (Index j = 0; j < x.cols(); ++j)
    for (Index i = 0; i < x.rows(); ++i)
      if (!std::isfinite(static_cast<double>(x(i, j))))
        raise<DataError>(what, " contains a non-finite value at row ", i, ", column ", j);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Per-view autoencoder: encoder d-h1-..-latent and mirrored decoder.
/// Every encoder layer, including the latent one, is followed by batch
/// normalization and ReLU; the decoder's output layer is purely linear.
template <typename Scalar>
class Autoencoder {
 public:
  nn::Mlp<Scalar> encoder;
  nn::Mlp<Scalar> decoder;

  Autoencoder() = default;
  Autoencoder(nn::Mlp<Scalar> enc, nn::Mlp<Scalar> dec)
      : encoder(std::move(enc)), decoder(std::move(dec)) {}

  Index input_dim() const { return encoder.input_width(); }
  Index latent_dim() const { return encoder.output_width(); }

  static nn::MlpSpec encoder_spec(Index input_dim, Index latent_dim,
                                  const std::vector<Index>& hidden) {
    std::vector<Index> w{input_dim};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(latent_dim);
    return nn::MlpSpec::chain(w, true, nn::Activation::relu, true, nn::Activation::relu);
  }

  static nn::MlpSpec decoder_spec(Index input_dim, Index latent_dim,
                                  const std::vector<Index>& hidden) {
    std::vector<Index> w{latent_dim};
    w.insert(w.end(), hidden.rbegin(), hidden.rend());
    w.push_back(input_dim);
    return nn::MlpSpec::chain(w, true, nn::Activation::relu, false, nn::Activation::none);
  }

  Matrix<Scalar> encode(const Matrix<Scalar>& x, Mode mode) {
    detail::require_finite(x, "encoder input");
    return mode == Mode::eval ? encoder.infer(x) : encoder.forward(x, mode);
  }

  Matrix<Scalar> encode(const Matrix<Scalar>& x) const {
    detail::require_finite(x, "encoder input");
    return encoder.infer(x);
  }

  Matrix<Scalar> decode(const Matrix<Scalar>& z, Mode mode) {
    detail::require_finite(z, "decoder input");
    return mode == Mode::eval ? decoder.infer(z) : decoder.forward(z, mode);
  }

  Matrix<Scalar> decode(const Matrix<Scalar>& z) const {
    detail::require_finite(z, "decoder input");
    return decoder.infer(z);
  }

  nn::ParamList<Scalar> parameters(const std::string& prefix) {
    auto refs = encoder.parameters(prefix + "encoder.");
    nn::append(refs, decoder.parameters(prefix + "decoder."));
    return refs;
  }

  nn::ParamList<Scalar> buffers(const std::string& prefix) {
    auto refs = encoder.buffers(prefix + "encoder.");
    nn::append(refs, decoder.buffers(prefix + "decoder."));
    return refs;
  }
};

template <typename Scalar>
Autoencoder<Scalar> build_autoencoder(Index input_dim, Index latent_dim, std::uint64_t seed,
                                      const std::vector<Index>& hidden = {1024, 1024, 1024}) {
  if (input_dim <= 0 || latent_dim <= 0)
    detail::raise<ArgumentError>("autoencoder dimensions must be positive (got input ", input_dim,
                                 ", latent ", latent_dim, ")");
  using AE = Autoencoder<Scalar>;
  return AE(nn::Mlp<Scalar>(AE::encoder_spec(input_dim, latent_dim, hidden),
                            detail::mix_seed(seed, 1)),
            nn::Mlp<Scalar>(AE::decoder_spec(input_dim, latent_dim, hidden),
                            detail::mix_seed(seed, 2)));
}

/// Two-layer head: linear-BN-ReLU-linear-BN followed by softmax.
inline nn::MlpSpec softmax_head_spec(Index in, Index hidden, Index out) {
  return nn::MlpSpec::chain({in, hidden, out}, true, nn::Activation::relu, true,
                            nn::Activation::softmax);
}

/// Online/target branches predicting view `target_view` from view
/// `source_view`. Online: decoder -> projector -> predictor. Target:
/// decoder -> projector, updated only through `ema_update`.
template <typename Scalar>
class PredictionPair {
 public:
  Index source_view = 0;
  Index target_view = 1;
  nn::Mlp<Scalar> online_decoder, online_projector, online_predictor;
  nn::Mlp<Scalar> target_decoder, target_projector;

  Index latent_dim() const { return online_decoder.input_width(); }
  Index prediction_dim() const { return online_predictor.output_width(); }

  /// hᵒ(pᵒ(dᵒ(z))).
  Matrix<Scalar> predict_online(const Matrix<Scalar>& z, Mode mode) {
    check(z);
    if (mode == Mode::eval) return predict_online(z);
    return online_predictor.forward(
        online_projector.forward(online_decoder.forward(z, mode), mode), mode);
  }

  Matrix<Scalar> predict_online(const Matrix<Scalar>& z) const {
    check(z);
    return online_predictor.infer(online_projector.infer(online_decoder.infer(z)));
  }

  /// Softmax output of the online decoder stage alone.
  Matrix<Scalar> online_assignment(const Matrix<Scalar>& z) const {
    check(z);
    return online_decoder.infer(z);
  }

  /// pᵗ(dᵗ(z)). Target outputs are constants to every loss.
  Matrix<Scalar> project_target(const Matrix<Scalar>& z, Mode mode) {
    check(z);
    if (mode == Mode::eval) return project_target(z);
    return target_projector.forward(target_decoder.forward(z, mode), mode);
  }

  Matrix<Scalar> project_target(const Matrix<Scalar>& z) const {
    check(z);
    return target_projector.infer(target_decoder.infer(z));
  }

  std::string prefix() const {
    return "pair" + std::to_string(source_view) + "to" + std::to_string(target_view) + ".";
  }

  nn::ParamList<Scalar> online_parameters() {
    const auto p = prefix();
    auto refs = online_decoder.parameters(p + "online_decoder.");
    nn::append(refs, online_projector.parameters(p + "online_projector."));
    nn::append(refs, online_predictor.parameters(p + "online_predictor."));
    return refs;
  }

  /// Online decoder and projector, i.e. the counterparts of the target branch.
  nn::ParamList<Scalar> mirrored_online_parameters() {
    const auto p = prefix();
    auto refs = online_decoder.parameters(p + "online_decoder.");
    nn::append(refs, online_projector.parameters(p + "online_projector."));
    return refs;
  }

  nn::ParamList<Scalar> target_parameters() {
    const auto p = prefix();
    auto refs = target_decoder.parameters(p + "target_decoder.");
    nn::append(refs, target_projector.parameters(p + "target_projector."));
    return refs;
  }

  nn::ParamList<Scalar> buffers() {
    const auto p = prefix();
    auto refs = online_decoder.buffers(p + "online_decoder.");
    nn::append(refs, online_projector.buffers(p + "online_projector."));
    nn::append(refs, online_predictor.buffers(p + "online_predictor."));
    nn::append(refs, target_decoder.buffers(p + "target_decoder."));
    nn::append(refs, target_projector.buffers(p + "target_projector."));
    return refs;
  }

 private:
  void check(const Matrix<Scalar>& z) const {
    if (z.cols() != latent_dim())
      detail::raise<ArgumentError>("latent width ", z.cols(), " does not match prediction pair width ",
                                   latent_dim());
  }
};

/// Target branch starts as an exact copy of the online branch.
template <typename Scalar>
PredictionPair<Scalar> build_prediction_pair(Index latent_dim, Index prediction_dim,
                                             Index head_hidden, Index source_view,
                                             Index target_view, std::uint64_t seed) {
  if (latent_dim <= 0 || prediction_dim <= 0 || head_hidden <= 0)
    detail::raise<ArgumentError>("prediction pair widths must be positive");
  PredictionPair<Scalar> pair;
  pair.source_view = source_view;
  pair.target_view = target_view;
  pair.online_decoder = nn::Mlp<Scalar>(softmax_head_spec(latent_dim, head_hidden, prediction_dim),
                                        detail::mix_seed(seed, 11));
  pair.online_projector = nn::Mlp<Scalar>(
      softmax_head_spec(prediction_dim, head_hidden, prediction_dim), detail::mix_seed(seed, 12));
  pair.online_predictor = nn::Mlp<Scalar>(
      softmax_head_spec(prediction_dim, head_hidden, prediction_dim), detail::mix_seed(seed, 13));
  pair.target_decoder = pair.online_decoder;
  pair.target_projector = pair.online_projector;
  return pair;
}

/// ωᵗ ← m·ωᵗ + (1−m)·ωᵒ over every learnable target parameter. Batch-norm
/// running statistics are copied from the online branch.
template <typename Scalar>
void ema_update(PredictionPair<Scalar>& pair, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0))
    detail::raise<ArgumentError>("EMA momentum must lie in [0, 1], got ", momentum);
  const Scalar m = static_cast<Scalar>(momentum);
  const Scalar one_minus = static_cast<Scalar>(1.0 - momentum);
  auto target = pair.target_parameters();
  auto online = pair.mirrored_online_parameters();
  for (std::size_t i = 0; i < target.size(); ++i) {
    Eigen::Map<Vector<Scalar>> t(target[i].value, target[i].size);
    Eigen::Map<const Vector<Scalar>> o(online[i].value, online[i].size);
    t = m * t + one_minus * o;
  }
  auto copy_buffers = [](nn::Mlp<Scalar>& dst, nn::Mlp<Scalar>& src) {
    auto d = dst.buffers(), s = src.buffers();
    for (std::size_t i = 0; i < d.size(); ++i) std::copy_n(s[i].value, s[i].size, d[i].value);
  };
  copy_buffers(pair.target_decoder, pair.online_decoder);
  copy_buffers(pair.target_projector, pair.online_projector);
}

/// Per-view discriminator d-1024-256-1 with leaky ReLU and sigmoid output.
template <typename Scalar>
class Discriminator {
 public:
  nn::Mlp<Scalar> net;

  Index input_dim() const { return net.input_width(); }

  /// Probability that each row is real, clamped into the open interval.
  Vector<Scalar> discriminate(const Matrix<Scalar>& x) const {
    if (x.cols() != input_dim())
      detail::raise<ArgumentError>("discriminator input width ", x.cols(), " does not match ",
                                   input_dim());
    const Scalar lo = static_cast<Scalar>(1e-7);
    return net.infer(x).col(0).cwiseMax(lo).cwiseMin(Scalar(1) - lo);
  }

  nn::ParamList<Scalar> parameters(const std::string& prefix) { return net.parameters(prefix); }
};

template <typename Scalar>
Discriminator<Scalar> build_discriminator(Index input_dim, const std::vector<Index>& hidden,
                                          std::uint64_t seed) {
  if (input_dim <= 0) detail::raise<ArgumentError>("discriminator input width must be positive");
  std::vector<Index> w{input_dim};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(1);
  Discriminator<Scalar> d;
  d.net = nn::Mlp<Scalar>(
      nn::MlpSpec::chain(w, false, nn::Activation::leaky_relu, false, nn::Activation::sigmoid),
      detail::mix_seed(seed, 21));
  return d;
}

}  // namespace cimic
