#pragma once

// Three-step schedule: contrastive training on complete pairs, adversarial
// completion of missing views, retraining on the pseudo-complete pairs.

#include "cimic/clustering.hpp"
#include "cimic/datamodel.hpp"
#include "cimic/losses.hpp"
#include "cimic/networks.hpp"
#include "cimic/nn/optim.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cimic {

/// How a missing view's latent is produced at inference time.
enum class FillMode { prediction, gan };

inline const char* to_string(FillMode m) { return m == FillMode::gan ? "gan" : "prediction"; }

inline FillMode fill_mode_from_string(const std::string& s) {
  if (s == "gan") return FillMode::gan;
  if (s == "prediction") return FillMode::prediction;
  detail::raise<ConfigError>("unknown fill mode '", s, "'");
}

inline GeneratorMode generator_mode_from_string(const std::string& s) {
  if (s == "nonsaturating") return GeneratorMode::nonsaturating;
  if (s == "minimax") return GeneratorMode::minimax;
  detail::raise<ConfigError>("unknown generator mode '", s, "'");
}

/// Which loss families take part; used by the ablation matrix.
struct LossToggles {
  bool rec = true;
  bool pre = true;
  bool cc = true;
  bool adv = true;

  bool operator==(const LossToggles&) const = default;
};

struct TrainConfig {
  std::array<int, 3> epochs = {300, 250, 200};
  int batch_size = 256;
  double learning_rate = 1e-4;
  LossWeights weights;
  double momentum = 0.6;
  Architecture arch;
  std::uint64_t seed = 0;
  FillMode fill_mode = FillMode::gan;
  GeneratorMode generator_mode = GeneratorMode::nonsaturating;
  int disc_steps_per_gen_step = 1;
  PredictionTerms prediction_terms = PredictionTerms::four;
  LossToggles losses;
  double gan_reconstruction_weight = 1.0;
  NormalizeMode normalize = NormalizeMode::minmax;

  void validate() const {
    for (int e : epochs)
      if (e < 1) detail::raise<ConfigError>("epochs must be positive");
    if (batch_size < 2) detail::raise<ConfigError>("batch_size must be at least 2, got ", batch_size);
    if (!(learning_rate > 0)) detail::raise<ConfigError>("learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum <= 1.0)) detail::raise<ConfigError>("momentum must lie in [0, 1], got ", momentum);
    if (disc_steps_per_gen_step < 1) detail::raise<ConfigError>("disc_steps_per_gen_step must be positive");
    if (!(gan_reconstruction_weight >= 0)) detail::raise<ConfigError>("gan_reconstruction_weight must be non-negative");
    weights.validate();
    arch.validate();
    if (fill_mode == FillMode::prediction && arch.prediction_dim != arch.latent_dim)
      detail::raise<ConfigError>("fill_mode=prediction needs prediction_dim == latent_dim (", arch.prediction_dim,
                                 " vs ", arch.latent_dim, ")");
  }
};

/// One epoch of one training step; unset fields do not apply to the step.
struct HistoryRecord {
  int step = 0;
  int epoch = 0;
  std::optional<double> total, cc, rec, pre, disc, gen;

  static std::string csv_header() { return "step,epoch,loss_total,loss_cc,loss_rec,loss_pre,loss_disc,loss_gen"; }

  std::string csv_row() const {
    const auto field = [](const std::optional<double>& v) {
      if (!v) return std::string();
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.9g", *v);
      return std::string(buf);
    };
    return std::to_string(step) + "," + std::to_string(epoch) + "," + field(total) + "," + field(cc) + "," +
           field(rec) + "," + field(pre) + "," + field(disc) + "," + field(gen);
  }
};

using TrainHistory = std::vector<HistoryRecord>;

inline std::string history_csv(const TrainHistory& h) {
  std::string out = HistoryRecord::csv_header() + "\n";
  for (const auto& r : h) out += r.csv_row() + "\n";
  return out;
}

/// Every learned component plus the configuration and normalization used.
template <typename Scalar>
struct TrainedModel {
  TrainConfig config;
  std::vector<Index> view_dims;
  std::vector<Autoencoder<Scalar>> autoencoders;
  std::vector<PredictionPair<Scalar>> pairs;  // every ordered (u, v), u != v, lexicographic
  std::vector<Discriminator<Scalar>> discriminators;
  NormalizationStats normalization;
  TrainHistory history;

  Index num_views() const { return static_cast<Index>(view_dims.size()); }

  PredictionPair<Scalar>& pair(Index source, Index target) {
    for (auto& p : pairs)
      if (p.source_view == source && p.target_view == target) return p;
    detail::raise<ArgumentError>("no prediction pair ", source, "->", target);
  }
  const PredictionPair<Scalar>& pair(Index source, Index target) const {
    return const_cast<TrainedModel*>(this)->pair(source, target);
  }

  nn::ParamList<Scalar> autoencoder_parameters() {
    nn::ParamList<Scalar> refs;
    for (std::size_t v = 0; v < autoencoders.size(); ++v)
      nn::append(refs, autoencoders[v].parameters("view" + std::to_string(v) + "."));
    return refs;
  }

  nn::ParamList<Scalar> encoder_parameters() {
    nn::ParamList<Scalar> refs;
    for (std::size_t v = 0; v < autoencoders.size(); ++v)
      nn::append(refs, autoencoders[v].encoder.parameters("view" + std::to_string(v) + ".encoder."));
    return refs;
  }

  nn::ParamList<Scalar> decoder_parameters() {
    nn::ParamList<Scalar> refs;
    for (std::size_t v = 0; v < autoencoders.size(); ++v)
      nn::append(refs, autoencoders[v].decoder.parameters("view" + std::to_string(v) + ".decoder."));
    return refs;
  }

  nn::ParamList<Scalar> online_parameters() {
    nn::ParamList<Scalar> refs;
    for (auto& p : pairs) nn::append(refs, p.online_parameters());
    return refs;
  }

  nn::ParamList<Scalar> target_parameters() {
    nn::ParamList<Scalar> refs;
    for (auto& p : pairs) nn::append(refs, p.target_parameters());
    return refs;
  }

  nn::ParamList<Scalar> discriminator_parameters() {
    nn::ParamList<Scalar> refs;
    for (std::size_t v = 0; v < discriminators.size(); ++v)
      nn::append(refs, discriminators[v].parameters("view" + std::to_string(v) + ".discriminator."));
    return refs;
  }

  /// All learnable parameters in canonical order.
  nn::ParamList<Scalar> parameters() {
    auto refs = autoencoder_parameters();
    nn::append(refs, online_parameters());
    nn::append(refs, target_parameters());
    nn::append(refs, discriminator_parameters());
    return refs;
  }

  /// Batch-norm running statistics in canonical order.
  nn::ParamList<Scalar> buffers() {
    nn::ParamList<Scalar> refs;
    for (std::size_t v = 0; v < autoencoders.size(); ++v)
      nn::append(refs, autoencoders[v].buffers("view" + std::to_string(v) + "."));
    for (auto& p : pairs) nn::append(refs, p.buffers());
    return refs;
  }
};

template <typename Scalar>
TrainedModel<Scalar> build_model(const std::vector<Index>& view_dims, const TrainConfig& cfg) {
  cfg.validate();
  if (view_dims.size() < 2) detail::raise<ArgumentError>("model needs at least two views");
  TrainedModel<Scalar> m;
  m.config = cfg;
  m.view_dims = view_dims;
  const auto& a = cfg.arch;
  const auto nv = static_cast<Index>(view_dims.size());
  for (Index v = 0; v < nv; ++v)
    m.autoencoders.push_back(build_autoencoder<Scalar>(view_dims[static_cast<std::size_t>(v)], a.latent_dim,
                                                       detail::mix_seed(cfg.seed, 100 + static_cast<std::uint64_t>(v)),
                                                       a.hidden));
  for (Index u = 0; u < nv; ++u)
    for (Index v = 0; v < nv; ++v)
      if (u != v)
        m.pairs.push_back(build_prediction_pair<Scalar>(a.latent_dim, a.prediction_dim, a.head_hidden, u, v,
                                                        detail::mix_seed(cfg.seed, 200 + static_cast<std::uint64_t>(u * nv + v))));
  for (Index v = 0; v < nv; ++v)
    m.discriminators.push_back(build_discriminator<Scalar>(view_dims[static_cast<std::size_t>(v)],
                                                           a.discriminator_hidden,
                                                           detail::mix_seed(cfg.seed, 300 + static_cast<std::uint64_t>(v))));
  return m;
}

// ---------------------------------------------------------------------------
// Network-1 objective on one batch of aligned views.

/// Evaluates L = L_cc + α·L_rec + β·L_pre on `views` (train mode) and, when
/// `backprop` is set, accumulates gradients into encoders, decoders and the
/// online branches. Target branches only ever run forward.
template <typename Scalar>
Network1Parts network1_objective(TrainedModel<Scalar>& model, const std::vector<Matrix<Scalar>>& views,
                                 bool backprop, std::vector<Matrix<Scalar>>* latent_grads = nullptr) {
  using Mat = Matrix<Scalar>;
  using Trace = nn::MlpTrace<Scalar>;
  const TrainConfig& cfg = model.config;
  const auto nv = static_cast<std::size_t>(model.num_views());
  if (views.size() != nv) detail::raise<ArgumentError>("objective: expected ", nv, " views, got ", views.size());
  const Scalar alpha = static_cast<Scalar>(cfg.weights.alpha);
  const Scalar beta = static_cast<Scalar>(cfg.weights.beta);

  std::vector<Trace> enc_tr(nv);
  std::vector<Mat> z(nv), gz(nv);
  for (std::size_t v = 0; v < nv; ++v) {
    z[v] = model.autoencoders[v].encoder.forward(views[v], Mode::train, &enc_tr[v]);
    gz[v] = Mat::Zero(z[v].rows(), z[v].cols());
  }

  Network1Parts parts;
  if (cfg.losses.rec) {
    std::vector<Trace> dec_tr(nv);
    std::vector<Mat> x_hat(nv), g_hat;
    for (std::size_t v = 0; v < nv; ++v)
      x_hat[v] = model.autoencoders[v].decoder.forward(z[v], Mode::train, &dec_tr[v]);
    parts.rec = static_cast<double>(reconstruction_loss(views, x_hat, {}, backprop ? &g_hat : nullptr));
    if (backprop)
      for (std::size_t v = 0; v < nv; ++v)
        gz[v] += model.autoencoders[v].decoder.backward(dec_tr[v], alpha * g_hat[v]);
  }

  const bool four = cfg.prediction_terms == PredictionTerms::four;
  for (auto& pair : model.pairs) {
    const auto s = static_cast<std::size_t>(pair.source_view);
    const auto t = static_cast<std::size_t>(pair.target_view);
    const bool want_cc = cfg.losses.cc && s < t;
    const bool want_pre = cfg.losses.pre;
    if (!want_cc && !want_pre) continue;
    const bool need_target_side = want_cc || four;

    Trace dec_s, dec_t;
    Mat q_s = pair.online_decoder.forward(z[s], Mode::train, &dec_s);
    Mat q_t = need_target_side ? pair.online_decoder.forward(z[t], Mode::train, &dec_t) : Mat();
    Mat gq_s = Mat::Zero(q_s.rows(), q_s.cols());
    Mat gq_t = need_target_side ? Mat::Zero(q_t.rows(), q_t.cols()) : Mat();

    if (want_pre) {
      // One direction: online(from) vs target(to), target held constant.
      const auto direction = [&](const Mat& q_from, Mat& gq_from, const Mat& z_to) {
        Trace proj_tr, pred_tr;
        const Mat projected = pair.online_projector.forward(q_from, Mode::train, &proj_tr);
        const Mat predicted = pair.online_predictor.forward(projected, Mode::train, &pred_tr);
        const Mat target = pair.target_projector.forward(pair.target_decoder.forward(z_to, Mode::train), Mode::train);
        Mat g;
        const Scalar l = prediction_direction_loss(predicted, target, backprop ? &g : nullptr);
        if (backprop) {
          const Mat g_proj = pair.online_predictor.backward(pred_tr, beta * g);
          gq_from += pair.online_projector.backward(proj_tr, g_proj);
        }
        return static_cast<double>(l);
      };
      parts.pre += direction(q_s, gq_s, z[t]);
      if (four) parts.pre += direction(q_t, gq_t, z[s]);
    }

    if (want_cc) {
      Mat g1, g2;
      parts.cc += consistency_loss(q_s, q_t, cfg.weights.gamma, backprop ? &g1 : nullptr, backprop ? &g2 : nullptr);
      if (backprop) {
        gq_s += g1;
        gq_t += g2;
      }
    }

    if (backprop) {
      gz[s] += pair.online_decoder.backward(dec_s, gq_s);
      if (need_target_side) gz[t] += pair.online_decoder.backward(dec_t, gq_t);
    }
  }

  if (backprop) {
    for (std::size_t v = 0; v < nv; ++v) model.autoencoders[v].encoder.backward(enc_tr[v], gz[v], false);
    if (latent_grads) *latent_grads = gz;
  }
  return parts;
}

/// Objective value with the configured toggles applied.
inline double network1_total(const Network1Parts& p, const TrainConfig& cfg) {
  Network1Parts masked = p;
  if (!cfg.losses.cc) masked.cc = 0;
  if (!cfg.losses.rec) masked.rec = 0;
  if (!cfg.losses.pre) masked.pre = 0;
  return composite_network1_loss(masked, cfg.weights);
}

namespace detail {

/// Mini-batches over a shuffled order; a trailing batch of one row is merged
/// into its predecessor so batch normalization always sees >= 2 rows.
inline std::vector<IndexList> make_batches(const IndexList& rows, int batch_size, std::mt19937_64& rng) {
  IndexList order = rows;
  std::shuffle(order.begin(), order.end(), rng);
  const auto b = static_cast<std::size_t>(std::max<Index>(2, std::min<Index>(batch_size, static_cast<Index>(order.size()))));
  std::vector<IndexList> batches;
  for (std::size_t i = 0; i < order.size(); i += b)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + b)));
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

inline void check_finite(const HistoryRecord& r) {
  const auto check = [&](const std::optional<double>& v, const char* name) {
    if (v && !std::isfinite(*v))
      raise<NumericError>("non-finite ", name, " at step ", r.step, ", epoch ", r.epoch, " (", *v, ")");
  };
  check(r.total, "loss_total");
  check(r.cc, "loss_cc");
  check(r.rec, "loss_rec");
  check(r.pre, "loss_pre");
  check(r.disc, "loss_disc");
  check(r.gen, "loss_gen");
}

/// Runs `f`, re-raising numeric failures (including non-finite activations
/// caught by layer input checks; the data was validated up front) as a
/// NumericError naming the step and epoch.
template <typename F>
auto in_context(int step, int epoch, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const NumericError& e) {
    raise<NumericError>("step ", step, ", epoch ", epoch, ": ", e.what());
  } catch (const DataError& e) {
    raise<NumericError>("step ", step, ", epoch ", epoch, ": ", e.what());
  }
}

template <typename Scalar>
std::vector<Matrix<Scalar>> gather_batch(const std::vector<Matrix<Scalar>>& views, const IndexList& rows) {
  std::vector<Matrix<Scalar>> out;
  for (const auto& m : views) out.push_back(gather_rows(m, rows));
  return out;
}

inline nn::Adam<float>::Options adam_options(const TrainConfig& cfg) {
  nn::Adam<float>::Options o;
  o.learning_rate = cfg.learning_rate;
  return o;
}

}  // namespace detail

/// Minimizes the network-1 objective over aligned view matrices for
/// `epochs` epochs, applying the EMA target update after every optimizer
/// step. Discriminators are untouched. Returns one record per epoch; an
/// input with fewer than two rows is a no-op.
template <typename Scalar>
TrainHistory train_network1(TrainedModel<Scalar>& model, const std::vector<Matrix<Scalar>>& views, int epochs,
                            int step_id) {
  TrainHistory history;
  const Index n = views.empty() ? 0 : views.front().rows();
  if (n < 2) return history;
  const TrainConfig& cfg = model.config;
  auto params = model.autoencoder_parameters();
  nn::append(params, model.online_parameters());
  typename nn::Adam<Scalar>::Options opts;
  opts.learning_rate = cfg.learning_rate;
  nn::Adam<Scalar> adam(params, opts);
  std::mt19937_64 rng(detail::mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(step_id)));
  IndexList rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Index{0});
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    double sum_total = 0, sum_cc = 0, sum_rec = 0, sum_pre = 0;
    const auto batches = detail::make_batches(rows, cfg.batch_size, rng);
    for (const auto& b : batches) {
      const auto batch = detail::gather_batch(views, b);
      adam.zero_grad();
      const Network1Parts parts =
          detail::in_context(step_id, epoch, [&] { return network1_objective(model, batch, true); });
      adam.step();
      for (auto& pair : model.pairs) ema_update(pair, cfg.momentum);
      sum_total += network1_total(parts, cfg);
      sum_cc += parts.cc;
      sum_rec += parts.rec;
      sum_pre += parts.pre;
    }
    const double nb = static_cast<double>(batches.size());
    HistoryRecord rec;
    rec.step = step_id;
    rec.epoch = epoch;
    rec.total = sum_total / nb;
    if (cfg.losses.cc) rec.cc = sum_cc / nb;
    if (cfg.losses.rec) rec.rec = sum_rec / nb;
    if (cfg.losses.pre) rec.pre = sum_pre / nb;
    detail::check_finite(rec);
    history.push_back(rec);
  }
  return history;
}

/// Step 1: network-1 training on the complete pairs.
template <typename Scalar>
TrainHistory train_step1(TrainedModel<Scalar>& model, const std::vector<Matrix<Scalar>>& complete_views) {
  return train_network1(model, complete_views, model.config.epochs[0], 1);
}

/// Reconstruction-only pretraining of each autoencoder on its present rows;
/// stands in for step 1 when no instance is complete.
template <typename Scalar>
TrainHistory pretrain_reconstruction(TrainedModel<Scalar>& model, const std::vector<Matrix<Scalar>>& present_rows,
                                     int epochs, int step_id) {
  TrainHistory history;
  const TrainConfig& cfg = model.config;
  typename nn::Adam<Scalar>::Options opts;
  opts.learning_rate = cfg.learning_rate;
  nn::Adam<Scalar> adam(model.autoencoder_parameters(), opts);
  std::mt19937_64 rng(detail::mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(step_id)));
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    double sum = 0;
    int batches_seen = 0;
    for (std::size_t v = 0; v < present_rows.size(); ++v) {
      const Index n = present_rows[v].rows();
      if (n < 2) continue;
      IndexList rows(static_cast<std::size_t>(n));
      std::iota(rows.begin(), rows.end(), Index{0});
      auto& ae = model.autoencoders[v];
      for (const auto& b : detail::make_batches(rows, cfg.batch_size, rng)) {
        const Matrix<Scalar> x = gather_rows(present_rows[v], b);
        adam.zero_grad();
        const Scalar l = detail::in_context(step_id, epoch, [&] {
          nn::MlpTrace<Scalar> te, td;
          const Matrix<Scalar> z = ae.encoder.forward(x, Mode::train, &te);
          const Matrix<Scalar> x_hat = ae.decoder.forward(z, Mode::train, &td);
          std::vector<Matrix<Scalar>> g;
          const Scalar loss = reconstruction_loss<Scalar>({x}, {x_hat}, {}, &g);
          ae.encoder.backward(te, ae.decoder.backward(td, g[0]), false);
          return loss;
        });
        adam.step();
        sum += static_cast<double>(l);
        ++batches_seen;
      }
    }
    if (batches_seen == 0) break;
    HistoryRecord rec;
    rec.step = step_id;
    rec.epoch = epoch;
    rec.rec = sum / batches_seen;
    rec.total = *rec.rec;
    detail::check_finite(rec);
    history.push_back(rec);
  }
  return history;
}

/// Latent used to generate a missing view: mean of the eval-mode latents of
/// the present views of each row.
template <typename Scalar>
Matrix<Scalar> source_latents(const TrainedModel<Scalar>& model, const std::vector<Matrix<Scalar>>& views,
                              const PresenceBits& presence) {
  const Index n = presence.rows();
  Matrix<Scalar> sum = Matrix<Scalar>::Zero(n, model.config.arch.latent_dim);
  Vector<Scalar> count = Vector<Scalar>::Zero(n);
  for (Index u = 0; u < model.num_views(); ++u) {
    IndexList rows;
    for (Index r = 0; r < n; ++r)
      if (presence(r, u)) rows.push_back(r);
    if (rows.empty()) continue;
    const Matrix<Scalar> z = model.autoencoders[static_cast<std::size_t>(u)].encode(
        gather_rows(views[static_cast<std::size_t>(u)], rows));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      sum.row(rows[i]) += z.row(static_cast<Index>(i));
      count(rows[i]) += 1;
    }
  }
  for (Index r = 0; r < n; ++r)
    if (count(r) > 0) sum.row(r) /= count(r);
  return sum;
}

/// Rows of an incomplete subset: per-view matrices plus their presence bits.
template <typename Scalar>
struct IncompleteSet {
  std::vector<Matrix<Scalar>> views;
  PresenceBits presence;

  Index rows() const { return presence.rows(); }
};

template <typename Scalar>
IncompleteSet<Scalar> gather_incomplete(const MultiViewDataset& ds, const IndexList& rows) {
  IncompleteSet<Scalar> set;
  for (const auto& m : ds.views) set.views.push_back(gather_rows(m, rows).template cast<Scalar>());
  set.presence.resize(static_cast<Index>(rows.size()), ds.num_views());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Index v = 0; v < ds.num_views(); ++v) set.presence(static_cast<Index>(i), v) = ds.presence.present(rows[i], v);
  return set;
}

/// Step 2: encoders frozen. For every view v the decoder acts as generator
/// on latents of rows lacking v, and D_v learns to tell those fakes from
/// present view-v rows. The generator objective adds a reconstruction term
/// on the present rows. Returns an empty history when there is nothing to do.
template <typename Scalar>
TrainHistory train_step2(TrainedModel<Scalar>& model, const IncompleteSet<Scalar>& data) {
  using Mat = Matrix<Scalar>;
  TrainHistory history;
  if (data.rows() == 0) return history;
  const TrainConfig& cfg = model.config;
  const auto nv = model.num_views();

  struct ViewTask {
    Index view;
    Mat fake_latents;   // z̄ of rows lacking the view
    Mat real;           // present rows of the view
    Mat real_latents;   // f_v(real), frozen
  };
  std::vector<ViewTask> tasks;
  const Mat latents = source_latents(model, data.views, data.presence);
  for (Index v = 0; v < nv; ++v) {
    IndexList absent, present;
    for (Index r = 0; r < data.rows(); ++r) (data.presence(r, v) ? present : absent).push_back(r);
    if (absent.size() < 2 || present.size() < 2) continue;
    ViewTask t;
    t.view = v;
    t.fake_latents = gather_rows(latents, absent);
    t.real = gather_rows(data.views[static_cast<std::size_t>(v)], present);
    t.real_latents = model.autoencoders[static_cast<std::size_t>(v)].encode(t.real);
    tasks.push_back(std::move(t));
  }
  if (tasks.empty()) return history;

  typename nn::Adam<Scalar>::Options opts;
  opts.learning_rate = cfg.learning_rate;
  nn::Adam<Scalar> disc_opt(model.discriminator_parameters(), opts);
  nn::Adam<Scalar> gen_opt(model.decoder_parameters(), opts);
  std::mt19937_64 rng(detail::mix_seed(cfg.seed, 1002));
  const Scalar rec_weight = static_cast<Scalar>(cfg.gan_reconstruction_weight);

  for (int epoch = 1; epoch <= cfg.epochs[1]; ++epoch) {
    double sum_disc = 0, sum_gen = 0, sum_rec = 0;
    int iters = 0;
    for (auto& task : tasks) {
      auto& decoder = model.autoencoders[static_cast<std::size_t>(task.view)].decoder;
      auto& disc = model.discriminators[static_cast<std::size_t>(task.view)].net;
      IndexList fake_rows(static_cast<std::size_t>(task.fake_latents.rows()));
      IndexList real_rows(static_cast<std::size_t>(task.real.rows()));
      std::iota(fake_rows.begin(), fake_rows.end(), Index{0});
      std::iota(real_rows.begin(), real_rows.end(), Index{0});
      const auto fake_batches = detail::make_batches(fake_rows, cfg.batch_size, rng);
      const auto real_batches = detail::make_batches(real_rows, cfg.batch_size, rng);
      const std::size_t n_iter = std::max(fake_batches.size(), real_batches.size());
      std::size_t real_cursor = 0;
      for (std::size_t it = 0; it < n_iter; ++it) detail::in_context(2, epoch, [&] {
        const IndexList& fb = fake_batches[it % fake_batches.size()];
        const Mat z_fake = gather_rows(task.fake_latents, fb);
        double d_loss = 0;
        for (int d = 0; d < cfg.disc_steps_per_gen_step; ++d) {
          const IndexList& rb = real_batches[real_cursor++ % real_batches.size()];
          const Mat fake = decoder.forward(z_fake, Mode::train);
          nn::MlpTrace<Scalar> tr_real, tr_fake;
          const Mat p_real = disc.forward(gather_rows(task.real, rb), Mode::train, &tr_real);
          const Mat p_fake = disc.forward(fake, Mode::train, &tr_fake);
          Vector<Scalar> g_real, g_fake;
          disc_opt.zero_grad();
          d_loss = static_cast<double>(
              discriminator_loss<Scalar>(p_real.col(0), p_fake.col(0), &g_real, &g_fake));
          disc.backward(tr_real, Mat(g_real), false);
          disc.backward(tr_fake, Mat(g_fake), false);
          disc_opt.step();
        }
        // Generator step: adversarial term on the fakes plus reconstruction
        // of a batch of present rows.
        gen_opt.zero_grad();
        nn::MlpTrace<Scalar> tr_gen, tr_judge;
        const Mat fake = decoder.forward(z_fake, Mode::train, &tr_gen);
        const Mat p_fake = disc.forward(fake, Mode::train, &tr_judge);
        Vector<Scalar> g_fake;
        const double g_loss =
            static_cast<double>(generator_loss<Scalar>(p_fake.col(0), cfg.generator_mode, &g_fake));
        const Mat g_sample = disc.backward(tr_judge, Mat(g_fake));
        decoder.backward(tr_gen, g_sample, false);
        double r_loss = 0;
        if (rec_weight > 0) {
          const IndexList& rb = real_batches[it % real_batches.size()];
          nn::MlpTrace<Scalar> tr_rec;
          const Mat x = gather_rows(task.real, rb);
          const Mat x_hat = decoder.forward(gather_rows(task.real_latents, rb), Mode::train, &tr_rec);
          std::vector<Mat> g;
          r_loss = static_cast<double>(reconstruction_loss<Scalar>({x}, {x_hat}, {}, &g));
          decoder.backward(tr_rec, rec_weight * g[0], false);
        }
        gen_opt.step();
        sum_disc += d_loss;
        sum_gen += g_loss;
        sum_rec += r_loss;
        ++iters;
      });
    }
    // The judge pass above accumulated discriminator gradients; drop them.
    nn::zero_grad(model.discriminator_parameters());
    HistoryRecord rec;
    rec.step = 2;
    rec.epoch = epoch;
    rec.disc = sum_disc / iters;
    rec.gen = sum_gen / iters;
    rec.rec = sum_rec / iters;
    rec.total = *rec.gen + cfg.gan_reconstruction_weight * *rec.rec;
    detail::check_finite(rec);
    history.push_back(rec);
  }
  return history;
}

/// Fills every missing view of an incomplete set with g_v(z̄), z̄ being the
/// mean latent of the row's present views. Eval mode, deterministic.
template <typename Scalar>
std::vector<Matrix<Scalar>> generate_missing(const TrainedModel<Scalar>& model, const IncompleteSet<Scalar>& data) {
  std::vector<Matrix<Scalar>> out = data.views;
  if (data.rows() == 0) return out;
  const Matrix<Scalar> latents = source_latents(model, data.views, data.presence);
  for (Index v = 0; v < model.num_views(); ++v) {
    IndexList absent;
    for (Index r = 0; r < data.rows(); ++r)
      if (!data.presence(r, v)) absent.push_back(r);
    if (absent.empty()) continue;
    const Matrix<Scalar> gen = model.autoencoders[static_cast<std::size_t>(v)].decode(gather_rows(latents, absent));
    for (std::size_t i = 0; i < absent.size(); ++i)
      out[static_cast<std::size_t>(v)].row(absent[i]) = gen.row(static_cast<Index>(i));
  }
  return out;
}

/// Step 3: the step-1 procedure on pseudo-complete pairs, continuing from
/// the current weights.
template <typename Scalar>
TrainHistory train_step3(TrainedModel<Scalar>& model, const std::vector<Matrix<Scalar>>& pseudo_views) {
  return train_network1(model, pseudo_views, model.config.epochs[2], 3);
}

/// Concatenated per-view latents for every instance (Ntot x A·latent).
/// Present views are encoded; absent ones are filled per the configured
/// fill mode. `ds` must already be normalized with the model's statistics.
template <typename Scalar>
Matrix<Scalar> fill_latents(const TrainedModel<Scalar>& model, const MultiViewDataset& ds) {
  const TrainConfig& cfg = model.config;
  if (cfg.fill_mode == FillMode::prediction && cfg.arch.prediction_dim != cfg.arch.latent_dim)
    detail::raise<ConfigError>("fill_mode=prediction needs prediction_dim == latent_dim");
  if (ds.num_views() != model.num_views())
    detail::raise<DataError>("dataset has ", ds.num_views(), " views, model expects ", model.num_views());
  for (Index v = 0; v < ds.num_views(); ++v)
    if (ds.dim(v) != model.view_dims[static_cast<std::size_t>(v)])
      detail::raise<DataError>("view ", v, " has width ", ds.dim(v), ", model expects ",
                               model.view_dims[static_cast<std::size_t>(v)]);
  const Index n = ds.instances();
  const Index latent = cfg.arch.latent_dim;
  const auto nv = ds.num_views();

  std::vector<Matrix<Scalar>> views;
  std::vector<Matrix<Scalar>> z;
  for (Index v = 0; v < nv; ++v) {
    views.push_back(ds.views[static_cast<std::size_t>(v)].template cast<Scalar>());
    // Whole-matrix encode: eval mode is row independent, absent rows are overwritten below.
    z.push_back(model.autoencoders[static_cast<std::size_t>(v)].encode(views.back()));
  }

  if (!ds.presence.all_complete()) {
    IndexList incomplete;
    for (Index r = 0; r < n; ++r)
      if (!ds.presence.complete(r)) incomplete.push_back(r);
    PresenceBits bits(static_cast<Index>(incomplete.size()), nv);
    for (std::size_t i = 0; i < incomplete.size(); ++i)
      for (Index v = 0; v < nv; ++v) bits(static_cast<Index>(i), v) = ds.presence.present(incomplete[i], v);

    for (Index v = 0; v < nv; ++v) {
      IndexList local, global;
      for (std::size_t i = 0; i < incomplete.size(); ++i)
        if (!bits(static_cast<Index>(i), v)) {
          local.push_back(static_cast<Index>(i));
          global.push_back(incomplete[i]);
        }
      if (local.empty()) continue;
      Matrix<Scalar> fill = Matrix<Scalar>::Zero(static_cast<Index>(local.size()), latent);
      if (cfg.fill_mode == FillMode::gan) {
        Matrix<Scalar> zbar = Matrix<Scalar>::Zero(static_cast<Index>(local.size()), latent);
        for (std::size_t i = 0; i < local.size(); ++i) {
          int count = 0;
          for (Index u = 0; u < nv; ++u)
            if (bits(local[i], u)) {
              zbar.row(static_cast<Index>(i)) += z[static_cast<std::size_t>(u)].row(global[i]);
              ++count;
            }
          zbar.row(static_cast<Index>(i)) /= static_cast<Scalar>(count);
        }
        const auto& ae = model.autoencoders[static_cast<std::size_t>(v)];
        fill = ae.encode(ae.decode(zbar));
      } else {
        std::vector<int> count(local.size(), 0);
        for (Index u = 0; u < nv; ++u) {
          if (u == v) continue;
          IndexList sel;
          std::vector<std::size_t> which;
          for (std::size_t i = 0; i < local.size(); ++i)
            if (bits(local[i], u)) {
              sel.push_back(global[i]);
              which.push_back(i);
            }
          if (sel.empty()) continue;
          const Matrix<Scalar> pred = model.pair(u, v).predict_online(gather_rows(z[static_cast<std::size_t>(u)], sel));
          for (std::size_t k = 0; k < which.size(); ++k) {
            fill.row(static_cast<Index>(which[k])) += pred.row(static_cast<Index>(k));
            ++count[which[k]];
          }
        }
        for (std::size_t i = 0; i < local.size(); ++i) fill.row(static_cast<Index>(i)) /= static_cast<Scalar>(count[i]);
      }
      for (std::size_t i = 0; i < local.size(); ++i) z[static_cast<std::size_t>(v)].row(global[i]) = fill.row(static_cast<Index>(i));
    }
  }

  Matrix<Scalar> fused(n, latent * nv);
  for (Index v = 0; v < nv; ++v) fused.middleCols(v * latent, latent) = z[static_cast<std::size_t>(v)];
  return fused;
}

/// Training phases actually executed by `run_pipeline`.
enum class Phase { joint, step1, pretrain, step2, step3 };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::joint: return "joint";
    case Phase::step1: return "step1";
    case Phase::pretrain: return "pretrain";
    case Phase::step2: return "step2";
    case Phase::step3: return "step3";
  }
  return "?";
}

struct PipelineOptions {
  int k = 0;  // clusters for evaluation; 0 = number of label classes
  NmiNorm nmi_norm = NmiNorm::geometric;
  KMeansOptions kmeans;
};

struct PipelineResult {
  TrainedModel<float> model;
  MatrixF fused;
  std::optional<ClusteringReport> report;
  std::vector<Phase> phases;
};

/// Full procedure. Without incomplete instances only one network-1 phase
/// runs (for epochs[0] + epochs[2] epochs). Otherwise steps 1, 2, 3 run in
/// order and step 3 trains on the complete rows plus the pseudo-complete
/// ones; with no complete instance step 1 becomes reconstruction-only
/// pretraining. Disabling the adversarial term skips steps 2 and 3.
inline PipelineResult run_pipeline(const MultiViewDataset& ds, const TrainConfig& cfg,
                                   const PipelineOptions& opts = {}) {
  ds.validate();
  cfg.validate();
  auto [data, stats] = normalize(ds, cfg.normalize);
  PipelineResult result{build_model<float>(ds.dims(), cfg), {}, std::nullopt, {}};
  auto& model = result.model;
  model.normalization = stats;
  const ViewSplit split = split_views(data);
  const auto append = [&](const TrainHistory& h) { model.history.insert(model.history.end(), h.begin(), h.end()); };

  if (split.incomplete.empty()) {
    append(train_network1(model, gather_views(data, split.complete), cfg.epochs[0] + cfg.epochs[2], 1));
    result.phases.push_back(Phase::joint);
  } else {
    if (split.complete.size() >= 2) {
      append(train_step1(model, gather_views(data, split.complete)));
      result.phases.push_back(Phase::step1);
    } else {
      std::vector<MatrixF> present;
      for (Index v = 0; v < data.num_views(); ++v) {
        IndexList rows;
        for (Index r = 0; r < data.instances(); ++r)
          if (data.presence.present(r, v)) rows.push_back(r);
        present.push_back(gather_rows(data.views[static_cast<std::size_t>(v)], rows));
      }
      append(pretrain_reconstruction(model, present, cfg.epochs[0], 1));
      result.phases.push_back(Phase::pretrain);
    }
    if (cfg.losses.adv) {
      const auto incomplete = gather_incomplete<float>(data, split.incomplete_rows());
      append(train_step2(model, incomplete));
      result.phases.push_back(Phase::step2);
      auto pseudo = generate_missing(model, incomplete);
      if (!split.complete.empty()) {
        const auto complete = gather_views(data, split.complete);
        for (std::size_t v = 0; v < pseudo.size(); ++v) {
          MatrixF both(complete[v].rows() + pseudo[v].rows(), complete[v].cols());
          both << complete[v], pseudo[v];
          pseudo[v] = std::move(both);
        }
      }
      append(train_step3(model, pseudo));
      result.phases.push_back(Phase::step3);
    }
  }

  result.fused = fill_latents(model, data);
  if (ds.labels) {
    const int k = opts.k > 0 ? opts.k : ds.num_classes();
    auto report = evaluate(result.fused.cast<double>(), *ds.labels, k, cfg.seed, opts.nmi_norm, opts.kmeans);
    report.dataset = ds.name;
    result.report = report;
  }
  return result;
}

}  // namespace cimic
