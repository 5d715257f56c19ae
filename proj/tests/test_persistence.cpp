#include "cimic/checkpoint.hpp"
#include "cimic/config.hpp"
#include "cimic/experiment.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <sstream>

using namespace cimic;
using Json = nlohmann::json;
using VectorF = cimic::Vector<float>;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cimic_persistence_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.arch.hidden = {16};
  cfg.arch.latent_dim = 8;
  cfg.arch.prediction_dim = 8;
  cfg.arch.head_hidden = 8;
  cfg.arch.discriminator_hidden = {8};
  cfg.epochs = {5, 3, 3};
  cfg.batch_size = 32;
  cfg.learning_rate = 1e-3;
  cfg.seed = 4;
  return cfg;
}

MultiViewDataset tiny_data() {
  SynthConfig sc;
  sc.instances = 100;
  sc.view_dims = {10, 12};
  sc.latent_dim = 4;
  sc.seed = 2;
  return apply_missing_mask(synth_generate(sc), 0.5, 3);
}

bool bit_equal(const MatrixF& a, const MatrixF& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, DefaultsMatchPublishedHyperparameters) {
  const TrainConfig c;
  EXPECT_EQ(c.epochs, (std::array<int, 3>{300, 250, 200}));
  EXPECT_EQ(c.batch_size, 256);
  EXPECT_DOUBLE_EQ(c.learning_rate, 1e-4);
  EXPECT_DOUBLE_EQ(c.momentum, 0.6);
  EXPECT_EQ(c.arch.latent_dim, 128);
  EXPECT_EQ(c.arch.prediction_dim, 128);
  EXPECT_EQ(c.arch.hidden, (std::vector<Index>{1024, 1024, 1024}));
  EXPECT_DOUBLE_EQ(c.weights.gamma, 9.0);
}

TEST(Config, RunConfigRoundTrip) {
  RunConfig rc;
  rc.seed = 12;
  rc.mask_seed = 99;
  rc.mr = 0.3;
  rc.dataset = "data/x";
  rc.out = "runs/y";
  rc.k = 5;
  rc.deterministic = true;
  rc.train = tiny_config();
  rc.train.fill_mode = FillMode::prediction;
  rc.train.generator_mode = GeneratorMode::minimax;
  rc.train.prediction_terms = PredictionTerms::two;
  rc.train.losses.adv = false;
  rc.metrics.nmi_norm = NmiNorm::arithmetic;
  rc.metrics.kmeans.restarts = 3;
  rc.synth.clusters = 6;
  rc.sweep.param = "alpha";
  rc.sweep.values = {0.01, 1.0};
  rc.sweep.seeds = {1, 2};
  const Json j = to_json(rc);
  const RunConfig back = run_config_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.seed, 12u);
  EXPECT_EQ(*back.mask_seed, 99u);
  EXPECT_EQ(back.train.arch, rc.train.arch);
  EXPECT_EQ(back.train.losses, rc.train.losses);
  EXPECT_EQ(back.train.fill_mode, FillMode::prediction);
}

TEST(Config, PartialTreeKeepsDefaults) {
  const RunConfig rc = run_config_from_json(Json::parse(R"({"train": {"batch_size": 64, "losses": {"adv": false}}})"));
  EXPECT_EQ(rc.train.batch_size, 64);
  EXPECT_FALSE(rc.train.losses.adv);
  EXPECT_TRUE(rc.train.losses.rec);
  EXPECT_EQ(rc.train.epochs, TrainConfig{}.epochs);
  EXPECT_FALSE(rc.mr);
}

TEST(Config, UnknownKeysRejectedAtEveryLevel) {
  for (const char* text : {R"({"sed": 1})", R"({"train": {"batchsize": 2}})", R"({"train": {"losses": {"gan": true}}})",
                           R"({"metrics": {"norm": "max"}})", R"({"sweep": {"grid": []}})", R"({"synth": {"k": 3}})"}) {
    try {
      run_config_from_json(Json::parse(text));
      ADD_FAILURE() << "accepted " << text;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find("unknown key"), std::string::npos) << e.what();
    }
  }
}

TEST(Config, WrongTypesAndValuesRejected) {
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"seed": "one"})")), ConfigError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"mr": "half"})")), ConfigError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"train": {"fill_mode": "zero"}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"train": {"prediction_terms": 3}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"([1, 2])")), ConfigError);
  RunConfig rc;
  rc.mr = 1.5;
  EXPECT_THROW(rc.validate(), ConfigError);
}

TEST(Config, HashTracksContentAndSeed) {
  TrainConfig a = tiny_config(), b = tiny_config();
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.seed = 5;
  EXPECT_NE(config_hash(a), config_hash(b));
  b = a;
  b.weights.alpha = 0.2;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Sweep, GridsAndDomains) {
  EXPECT_EQ(SweepSpec::default_grid("mr").size(), 10u);
  EXPECT_EQ(SweepSpec::default_grid("alpha"), (std::vector<double>{0.001, 0.01, 0.1, 1, 10}));
  const auto m = SweepSpec::default_grid("momentum");
  EXPECT_NE(std::find(m.begin(), m.end(), 0.6), m.end());
  SweepSpec s;
  s.param = "mr";
  s.values = {0.2, 1.2};
  EXPECT_THROW(s.validate(), ConfigError);
  s.param = "beta";
  s.values = {-1};
  EXPECT_THROW(s.validate(), ConfigError);
  s.values = {10};
  EXPECT_NO_THROW(s.validate());
  s.param = "gamma";
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Ablation, EightLabeledVariants) {
  const auto& v = ablation_variants();
  ASSERT_EQ(v.size(), 8u);
  EXPECT_STREQ(v[0].label, "(1)rec");
  EXPECT_EQ(v[7].losses, (LossToggles{true, true, true, true}));
  for (int i = 0; i < 7; ++i) EXPECT_FALSE(v[static_cast<std::size_t>(i)].losses.adv);
  EXPECT_THROW(ablation_config(TrainConfig{}, 9), ArgumentError);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, RoundTripIsLossless) {
  const auto ds = tiny_data();
  auto result = run_pipeline(ds, tiny_config());
  const fs::path dir = scratch("roundtrip");
  save_model(result.model, dir);
  auto loaded = load_model(dir);

  EXPECT_TRUE(bit_equal(nn::flatten(result.model.parameters()), nn::flatten(loaded.parameters())));
  EXPECT_TRUE(bit_equal(nn::flatten(result.model.buffers()), nn::flatten(loaded.buffers())));
  EXPECT_EQ(to_json(loaded.config), to_json(result.model.config));
  EXPECT_EQ(loaded.config.seed, result.model.config.seed);
  EXPECT_EQ(loaded.view_dims, result.model.view_dims);
  ASSERT_EQ(loaded.normalization.offset.size(), 2u);
  for (std::size_t v = 0; v < 2; ++v) {
    EXPECT_TRUE(bit_equal(MatrixF(loaded.normalization.offset[v]), MatrixF(result.model.normalization.offset[v])));
    EXPECT_TRUE(bit_equal(MatrixF(loaded.normalization.scale[v]), MatrixF(result.model.normalization.scale[v])));
  }
  const auto data = apply_normalization(ds, loaded.normalization);
  EXPECT_TRUE(bit_equal(fill_latents(loaded, data), result.fused));
}

TEST(Checkpoint, SavingIsByteStable) {
  auto result = run_pipeline(tiny_data(), tiny_config());
  const fs::path a = scratch("stable_a"), b = scratch("stable_b");
  save_model(result.model, a);
  save_model(load_model(a), b);
  EXPECT_EQ(slurp(a / "params.bin"), slurp(b / "params.bin"));
  EXPECT_EQ(slurp(a / "checkpoint.json"), slurp(b / "checkpoint.json"));
}

TEST(Checkpoint, CorruptionIsFormatError) {
  auto model = build_model<float>({10, 12}, tiny_config());
  const fs::path dir = scratch("corrupt");
  save_model(model, dir);
  const std::string bin = slurp(dir / "params.bin");
  const std::string meta = slurp(dir / "checkpoint.json");

  {
    std::ofstream out(dir / "params.bin", std::ios::binary | std::ios::trunc);
    out << bin.substr(0, bin.size() - 8);
  }
  EXPECT_THROW(load_model(dir), FormatError);
  {
    std::ofstream out(dir / "params.bin", std::ios::binary | std::ios::trunc);
    out << bin;
  }
  EXPECT_NO_THROW(load_model(dir));

  const auto rewrite = [&](const Json& j) {
    std::ofstream out(dir / "checkpoint.json", std::ios::trunc);
    out << j.dump(2);
  };
  Json j = Json::parse(meta);
  j["version"] = 2;
  rewrite(j);
  EXPECT_THROW(load_model(dir), FormatError);

  j = Json::parse(meta);
  j["tensors"][0]["name"] = "renamed";
  rewrite(j);
  EXPECT_THROW(load_model(dir), FormatError);

  j = Json::parse(meta);
  j["view_dims"] = {10, 13};
  rewrite(j);
  EXPECT_THROW(load_model(dir), FormatError);

  j = Json::parse(meta);
  j["config"]["latent_dim"] = 9;
  rewrite(j);
  EXPECT_THROW(load_model(dir), FormatError);
}

TEST(Checkpoint, MissingFilesAreIoErrors) {
  const fs::path dir = scratch("missing");
  EXPECT_THROW(load_model(dir), IoError);
  auto model = build_model<float>({10, 12}, tiny_config());
  save_model(model, dir);
  fs::remove(dir / "params.bin");
  EXPECT_THROW(load_model(dir), IoError);
}
