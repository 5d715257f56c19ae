#include "cimic/losses.hpp"
#include "cimic/networks.hpp"
#include "cimic/nn/optim.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace cimic;

namespace {

template <typename S>
Matrix<S> random_matrix(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix<S> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(n(rng));
  return m;
}

template <typename S>
void set_all(const nn::ParamList<S>& refs, S value) {
  for (const auto& r : refs) std::fill_n(r.value, r.size, value);
}

PredictionPair<double> tiny_pair(std::uint64_t seed = 5) {
  return build_prediction_pair<double>(6, 4, 5, 0, 1, seed);
}

}  // namespace

TEST(Autoencoder, LayerWidths) {
  const auto ae = build_autoencoder<float>(20, 128, 1);
  EXPECT_EQ(ae.encoder.spec().widths(), (std::vector<Index>{20, 1024, 1024, 1024, 128}));
  EXPECT_EQ(ae.decoder.spec().widths(), (std::vector<Index>{128, 1024, 1024, 1024, 20}));
  const auto& last = ae.decoder.spec().layers.back();
  EXPECT_FALSE(last.batch_norm);
  EXPECT_EQ(last.activation, nn::Activation::none);
  const auto& latent = ae.encoder.spec().layers.back();
  EXPECT_TRUE(latent.batch_norm);
  EXPECT_EQ(latent.activation, nn::Activation::relu);
}

TEST(Autoencoder, SeedDeterminismAndLatentOverride) {
  auto a = build_autoencoder<float>(7, 8, 42, {16, 16});
  auto b = build_autoencoder<float>(7, 8, 42, {16, 16});
  auto c = build_autoencoder<float>(7, 8, 43, {16, 16});
  EXPECT_EQ(nn::flatten(a.parameters("")), nn::flatten(b.parameters("")));
  EXPECT_NE(nn::flatten(a.parameters("")), nn::flatten(c.parameters("")));
  EXPECT_EQ(a.latent_dim(), 8);
  EXPECT_EQ(a.decoder.input_width(), 8);
  EXPECT_THROW(build_autoencoder<float>(0, 8, 1), ArgumentError);
  EXPECT_THROW(build_autoencoder<float>(5, -1, 1), ArgumentError);
}

TEST(Autoencoder, EncodeShapesAndErrors) {
  auto ae = build_autoencoder<float>(20, 128, 3);
  const MatrixF x = random_matrix<float>(256, 20, 1);
  const MatrixF z = ae.encode(x, Mode::train);
  EXPECT_EQ(z.rows(), 256);
  EXPECT_EQ(z.cols(), 128);
  EXPECT_EQ(ae.encode(x), ae.encode(x));
  const MatrixF x_hat = ae.decode(ae.encode(x));
  EXPECT_EQ(x_hat.rows(), x.rows());
  EXPECT_EQ(x_hat.cols(), x.cols());
  EXPECT_THROW(ae.encode(random_matrix<float>(4, 19, 1)), ArgumentError);
  MatrixF bad = x;
  bad(3, 4) = std::numeric_limits<float>::infinity();
  EXPECT_THROW(ae.encode(bad), DataError);
  EXPECT_THROW(ae.encode(random_matrix<float>(1, 20, 1), Mode::train), ArgumentError);
  EXPECT_EQ(ae.encode(random_matrix<float>(1, 20, 1)).rows(), 1);
  for (Index b : {2, 3, 17}) EXPECT_EQ(ae.encode(random_matrix<float>(b, 20, 4), Mode::train).rows(), b);
}

TEST(Autoencoder, ZeroParametersGiveBiasRow) {
  auto ae = build_autoencoder<double>(5, 3, 1, {4});
  set_all(ae.decoder.parameters(), 0.0);
  auto& out = ae.decoder.layers().back();
  out.bias << 0.5, -1, 2, 0, 3;
  const MatrixD x_hat = ae.decode(random_matrix<double>(6, 3, 2));
  for (Index r = 0; r < 6; ++r) EXPECT_EQ(x_hat.row(r), out.bias);
}

TEST(Autoencoder, TinyModelMemorizesTenPoints) {
  auto ae = build_autoencoder<double>(4, 3, 9, {32, 32});
  const MatrixD x = random_matrix<double>(10, 4, 10, 0.5);
  nn::Adam<double>::Options opts;
  opts.learning_rate = 3e-3;
  nn::Adam<double> adam(ae.parameters(""), opts);
  double loss = 0;
  for (int step = 0; step < 500; ++step) {
    nn::MlpTrace<double> te, td;
    adam.zero_grad();
    const MatrixD x_hat = ae.decoder.forward(ae.encoder.forward(x, Mode::train, &te), Mode::train, &td);
    std::vector<MatrixD> g;
    loss = reconstruction_loss<double>({x}, {x_hat}, {}, &g);
    ae.encoder.backward(te, ae.decoder.backward(td, g[0]), false);
    adam.step();
  }
  EXPECT_LT(loss, 1e-2);
}

TEST(PredictionPair, ShapesAndSoftmax) {
  auto pair = build_prediction_pair<float>(128, 128, 256, 0, 1, 4);
  const MatrixF z = random_matrix<float>(4, 128, 3);
  EXPECT_EQ(pair.predict_online(z).rows(), 4);
  EXPECT_EQ(pair.predict_online(z).cols(), 128);
  EXPECT_EQ(pair.project_target(z).cols(), 128);
  const MatrixF q = pair.online_assignment(z);
  for (Index r = 0; r < q.rows(); ++r) {
    EXPECT_NEAR(q.row(r).sum(), 1.0f, 1e-6f);
    EXPECT_GE(q.row(r).minCoeff(), 0.0f);
  }
  const MatrixF trained = pair.predict_online(random_matrix<float>(8, 128, 5), Mode::train);
  for (Index r = 0; r < trained.rows(); ++r) EXPECT_NEAR(trained.row(r).sum(), 1.0f, 1e-5f);
  EXPECT_EQ(pair.predict_online(z), pair.predict_online(z));
  EXPECT_THROW(pair.predict_online(random_matrix<float>(4, 127, 3)), ArgumentError);
  EXPECT_THROW(pair.project_target(random_matrix<float>(4, 12, 3)), ArgumentError);
}

TEST(PredictionPair, TargetIndependentOfPredictor) {
  auto pair = tiny_pair();
  const MatrixD z = random_matrix<double>(5, 6, 1);
  const MatrixD before = pair.project_target(z);
  set_all(pair.online_predictor.parameters(), 0.3);
  EXPECT_EQ(pair.project_target(z), before);
}

TEST(Ema, FixedPointCopyAndExample) {
  auto pair = tiny_pair();
  set_all(pair.online_parameters(), 0.25);
  const MatrixD z = random_matrix<double>(5, 6, 1);
  const auto target_before = nn::flatten(pair.target_parameters());
  const MatrixD out_before = pair.project_target(z);
  ema_update(pair, 1.0);
  EXPECT_EQ(nn::flatten(pair.target_parameters()), target_before);
  EXPECT_EQ(pair.project_target(z), out_before);
  ema_update(pair, 0.0);
  EXPECT_EQ(nn::flatten(pair.target_parameters()), nn::flatten(pair.mirrored_online_parameters()));

  set_all(pair.target_parameters(), 1.0);
  set_all(pair.online_parameters(), 0.5);
  ema_update(pair, 0.6);
  for (const auto& r : pair.target_parameters())
    for (Index i = 0; i < r.size; ++i) EXPECT_NEAR(r.value[i], 0.8, 1e-15);
  EXPECT_THROW(ema_update(pair, 1.01), ArgumentError);
  EXPECT_THROW(ema_update(pair, -0.2), ArgumentError);
}

TEST(Ema, ContractionFactorIsMomentum) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    auto pair = build_prediction_pair<double>(6, 4, 5, 0, 1, 100 + static_cast<std::uint64_t>(trial));
    const auto online = pair.mirrored_online_parameters();
    Vector<double> o = nn::flatten(online);
    nn::unflatten(online, Vector<double>(random_matrix<double>(o.size(), 1, 200 + static_cast<std::uint64_t>(trial))));
    o = nn::flatten(online);
    const Vector<double> t = nn::flatten(pair.target_parameters());
    const double m = trial == 0 ? 0.6 : unit(rng);
    ema_update(pair, m);
    const Vector<double> t2 = nn::flatten(pair.target_parameters());
    for (Index i = 0; i < t.size(); ++i) EXPECT_NEAR(t2(i) - o(i), m * (t(i) - o(i)), 1e-12 * (1 + std::abs(t(i) - o(i))));
  }
}

TEST(Ema, CopiesRunningStatistics) {
  auto pair = tiny_pair();
  pair.predict_online(random_matrix<double>(7, 6, 3, 2.0), Mode::train);
  ema_update(pair, 0.9);
  const auto online = pair.online_decoder.buffers();
  const auto target = pair.target_decoder.buffers();
  for (std::size_t i = 0; i < online.size(); ++i)
    for (Index j = 0; j < online[i].size; ++j) EXPECT_EQ(online[i].value[j], target[i].value[j]);
}

TEST(StopGradient, TargetReceivesNoGradientAndOnlineIgnoresTargetSlope) {
  // The direction loss only differentiates through the online branch: target
  // gradients stay zero even though perturbing a target parameter moves the loss.
  auto pair = tiny_pair(8);
  nn::unflatten(pair.target_parameters(),
                Vector<double>(random_matrix<double>(nn::total_size(pair.target_parameters()), 1, 4, 0.3)));
  const MatrixD z1 = random_matrix<double>(5, 6, 1);
  const MatrixD z2 = random_matrix<double>(5, 6, 2);
  const auto loss_and_grads = [&](PredictionPair<double>& p) {
    nn::zero_grad(p.online_parameters());
    nn::zero_grad(p.target_parameters());
    nn::MlpTrace<double> td, tp, th;
    const MatrixD q = p.online_predictor.forward(
        p.online_projector.forward(p.online_decoder.forward(z1, Mode::train, &td), Mode::train, &tp), Mode::train, &th);
    const MatrixD t = p.target_projector.forward(p.target_decoder.forward(z2, Mode::train), Mode::train);
    MatrixD g;
    const double l = prediction_direction_loss(q, t, &g);
    p.online_decoder.backward(td, p.online_projector.backward(tp, p.online_predictor.backward(th, g)), false);
    return l;
  };
  const double base = loss_and_grads(pair);
  EXPECT_TRUE(nn::flatten(pair.target_parameters()).allFinite());
  double target_grad_norm = 0;
  for (const auto& r : pair.target_parameters())
    target_grad_norm += Eigen::Map<const Vector<double>>(r.grad, r.size).squaredNorm();
  EXPECT_EQ(target_grad_norm, 0.0);

  auto perturbed = pair;
  perturbed.target_decoder.layers().front().weight(0, 0) += 1e-3;
  EXPECT_NE(loss_and_grads(perturbed), base);
  const auto before = nn::flatten(pair.target_parameters());
  nn::Adam<double>::Options opts;
  opts.learning_rate = 0.1;
  nn::Adam<double> adam(pair.online_parameters(), opts);
  loss_and_grads(pair);
  adam.step();
  EXPECT_EQ(nn::flatten(pair.target_parameters()), before);
}

TEST(ParamVector, RoundTripAndOrdering) {
  auto pair = tiny_pair();
  const auto refs = pair.online_parameters();
  const Vector<double> flat = nn::flatten(refs);
  EXPECT_EQ(flat.size(), nn::total_size(refs));
  nn::unflatten(refs, flat);
  EXPECT_EQ(nn::flatten(refs), flat);
  const Vector<double> shifted = flat.array() + 1.0;
  nn::unflatten(refs, shifted);
  EXPECT_EQ(nn::flatten(pair.online_parameters()), shifted);
  std::vector<std::string> names;
  for (const auto& r : pair.online_parameters()) names.push_back(r.name);
  std::vector<std::string> again;
  for (const auto& r : pair.online_parameters()) again.push_back(r.name);
  EXPECT_EQ(names, again);
  EXPECT_EQ(names.front(), "pair0to1.online_decoder.layer0.weight");
  EXPECT_THROW(nn::unflatten(refs, Vector<double>(flat.size() - 1)), ArgumentError);
}

TEST(Discriminator, RangeZeroParamsAndDeterminism) {
  auto d = build_discriminator<float>(20, {1024, 256}, 3);
  const MatrixF x = random_matrix<float>(8, 20, 9);
  const Vector<float> p = d.discriminate(x);
  ASSERT_EQ(p.size(), 8);
  for (Index i = 0; i < 8; ++i) {
    EXPECT_GT(p(i), 0.0f);
    EXPECT_LT(p(i), 1.0f);
  }
  EXPECT_EQ(d.discriminate(x), p);
  EXPECT_THROW(d.discriminate(random_matrix<float>(8, 21, 9)), ArgumentError);
  set_all(d.parameters(""), 0.0f);
  EXPECT_TRUE(d.discriminate(x).isConstant(0.5f, 0));
  const MatrixF huge = MatrixF::Constant(3, 20, 1e4f);
  auto sharp = build_discriminator<float>(20, {8}, 1);
  set_all(sharp.parameters(""), 1.0f);
  const Vector<float> clamped = sharp.discriminate(huge);
  EXPECT_LT(clamped.maxCoeff(), 1.0f);
}
