#pragma once

// JSON run configuration. Every object level rejects keys it does not know.

#include "cimic/clustering.hpp"
#include "cimic/datamodel.hpp"
#include "cimic/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace cimic {

using Json = nlohmann::json;

struct MetricOptions {
  NmiNorm nmi_norm = NmiNorm::geometric;
  KMeansOptions kmeans;
};

/// Parameter grid for the sweep command.
struct SweepSpec {
  std::string param = "mr";
  std::vector<double> values;  // empty = the parameter's default grid
  std::vector<std::uint64_t> seeds = {0};

  static std::vector<double> default_grid(const std::string& param) {
    if (param == "mr") return {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    if (param == "momentum") return {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    if (param == "alpha" || param == "beta") return {0.001, 0.01, 0.1, 1.0, 10.0};
    detail::raise<ConfigError>("unknown sweep parameter '", param, "' (expected mr, momentum, alpha or beta)");
  }

  std::vector<double> grid() const { return values.empty() ? default_grid(param) : values; }

  void validate() const {
    default_grid(param);
    if (seeds.empty()) detail::raise<ConfigError>("sweep needs at least one seed");
    for (double v : grid()) {
      const bool unit = param == "mr" || param == "momentum";
      if (!std::isfinite(v) || v < 0 || (unit && v > 1))
        detail::raise<ConfigError>("sweep value ", v, " is outside the legal domain of '", param, "' (",
                                   unit ? "[0, 1]" : "[0, inf)", ")");
    }
  }
};

struct RunConfig {
  TrainConfig train;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> mask_seed;  // defaults to seed
  std::optional<double> mr;                // applied to an all-present dataset
  std::string dataset;
  std::string out = "out";
  int k = 0;  // 0 = number of label classes
  bool deterministic = false;
  MetricOptions metrics;
  SynthConfig synth;
  SweepSpec sweep;

  std::uint64_t effective_mask_seed() const { return mask_seed.value_or(seed); }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = seed;
    return t;
  }

  void validate() const {
    train.validate();
    if (mr && !(*mr >= 0.0 && *mr <= 1.0)) detail::raise<ConfigError>("mr must lie in [0, 1], got ", *mr);
    if (k == 1 || k < 0) detail::raise<ConfigError>("k must be at least 2 (or 0 for the label count)");
    if (metrics.kmeans.restarts < 1 || metrics.kmeans.max_iters < 1 || !(metrics.kmeans.tol >= 0))
      detail::raise<ConfigError>("invalid k-means options");
  }
};

namespace detail {

/// Tracks which keys of an object were consumed.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) raise<ConfigError>("config: '", path_, "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception&) {
      raise<ConfigError>("config: '", where(key), "' has the wrong type");
    }
  }

  const Json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) raise<ConfigError>("config: unknown key '", where(item.key()), "'");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename E, typename F>
E parse_enum(ObjectReader& r, const char* key, E current, F from_string) {
  std::string s;
  r.read(key, s);
  return s.empty() ? current : from_string(s);
}

}  // namespace detail

inline Json to_json(const TrainConfig& c) {
  return Json{
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"alpha", c.weights.alpha},
      {"beta", c.weights.beta},
      {"gamma", c.weights.gamma},
      {"momentum", c.momentum},
      {"latent_dim", c.arch.latent_dim},
      {"prediction_dim", c.arch.prediction_dim},
      {"hidden", c.arch.hidden},
      {"head_hidden", c.arch.head_hidden},
      {"discriminator_hidden", c.arch.discriminator_hidden},
      {"fill_mode", to_string(c.fill_mode)},
      {"generator_mode", to_string(c.generator_mode)},
      {"disc_steps_per_gen_step", c.disc_steps_per_gen_step},
      {"prediction_terms", static_cast<int>(c.prediction_terms)},
      {"losses", {{"rec", c.losses.rec}, {"pre", c.losses.pre}, {"cc", c.losses.cc}, {"adv", c.losses.adv}}},
      {"gan_reconstruction_weight", c.gan_reconstruction_weight},
      {"normalize", to_string(c.normalize)},
  };
}

/// Overlays the keys present in `j` onto `c`.
inline void merge_train_config(const Json& j, TrainConfig& c, const std::string& path = "train") {
  detail::ObjectReader r(j, path);
  r.read("epochs", c.epochs);
  r.read("batch_size", c.batch_size);
  r.read("learning_rate", c.learning_rate);
  r.read("alpha", c.weights.alpha);
  r.read("beta", c.weights.beta);
  r.read("gamma", c.weights.gamma);
  r.read("momentum", c.momentum);
  r.read("latent_dim", c.arch.latent_dim);
  r.read("prediction_dim", c.arch.prediction_dim);
  r.read("hidden", c.arch.hidden);
  r.read("head_hidden", c.arch.head_hidden);
  r.read("discriminator_hidden", c.arch.discriminator_hidden);
  c.fill_mode = detail::parse_enum(r, "fill_mode", c.fill_mode, fill_mode_from_string);
  c.generator_mode = detail::parse_enum(r, "generator_mode", c.generator_mode, generator_mode_from_string);
  r.read("disc_steps_per_gen_step", c.disc_steps_per_gen_step);
  int terms = static_cast<int>(c.prediction_terms);
  r.read("prediction_terms", terms);
  if (terms != 2 && terms != 4) detail::raise<ConfigError>("config: prediction_terms must be 2 or 4, got ", terms);
  c.prediction_terms = terms == 4 ? PredictionTerms::four : PredictionTerms::two;
  if (const Json* losses = r.child("losses")) {
    detail::ObjectReader lr(*losses, r.where("losses"));
    lr.read("rec", c.losses.rec);
    lr.read("pre", c.losses.pre);
    lr.read("cc", c.losses.cc);
    lr.read("adv", c.losses.adv);
    lr.finish();
  }
  r.read("gan_reconstruction_weight", c.gan_reconstruction_weight);
  c.normalize = detail::parse_enum(r, "normalize", c.normalize, normalize_mode_from_string);
  r.finish();
}

inline TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  merge_train_config(j, c);
  return c;
}

/// Stable 64-bit FNV-1a digest of the canonical training configuration.
inline std::string config_hash(const TrainConfig& c) {
  Json j = to_json(c);
  j["seed"] = c.seed;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline Json to_json(const SynthConfig& s) {
  return Json{{"clusters", s.clusters},     {"instances", s.instances}, {"latent_dim", s.latent_dim},
              {"view_dims", s.view_dims},   {"separation", s.separation}, {"sigma", s.sigma},
              {"seed", s.seed}};
}

inline Json to_json(const RunConfig& c) {
  Json j{{"seed", c.seed},
         {"dataset", c.dataset},
         {"out", c.out},
         {"k", c.k},
         {"deterministic", c.deterministic},
         {"train", to_json(c.train)},
         {"metrics",
          {{"nmi_norm", to_string(c.metrics.nmi_norm)},
           {"kmeans_restarts", c.metrics.kmeans.restarts},
           {"kmeans_max_iters", c.metrics.kmeans.max_iters},
           {"kmeans_tol", c.metrics.kmeans.tol}}},
         {"synth", to_json(c.synth)},
         {"sweep", {{"param", c.sweep.param}, {"values", c.sweep.values}, {"seeds", c.sweep.seeds}}}};
  if (c.mr) j["mr"] = *c.mr;
  if (c.mask_seed) j["mask_seed"] = *c.mask_seed;
  return j;
}

inline RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  detail::ObjectReader r(j, "");
  r.read("seed", c.seed);
  if (const Json* v = r.child("mask_seed")) {
    if (!v->is_number_unsigned()) detail::raise<ConfigError>("config: 'mask_seed' must be a non-negative integer");
    c.mask_seed = v->get<std::uint64_t>();
  }
  if (const Json* v = r.child("mr")) {
    if (!v->is_number()) detail::raise<ConfigError>("config: 'mr' must be a number");
    c.mr = v->get<double>();
  }
  r.read("dataset", c.dataset);
  r.read("out", c.out);
  r.read("k", c.k);
  r.read("deterministic", c.deterministic);
  if (const Json* t = r.child("train")) merge_train_config(*t, c.train);
  if (const Json* m = r.child("metrics")) {
    detail::ObjectReader mr(*m, "metrics");
    c.metrics.nmi_norm = detail::parse_enum(mr, "nmi_norm", c.metrics.nmi_norm, nmi_norm_from_string);
    mr.read("kmeans_restarts", c.metrics.kmeans.restarts);
    mr.read("kmeans_max_iters", c.metrics.kmeans.max_iters);
    mr.read("kmeans_tol", c.metrics.kmeans.tol);
    mr.finish();
  }
  if (const Json* s = r.child("synth")) {
    detail::ObjectReader sr(*s, "synth");
    sr.read("clusters", c.synth.clusters);
    sr.read("instances", c.synth.instances);
    sr.read("latent_dim", c.synth.latent_dim);
    sr.read("view_dims", c.synth.view_dims);
    sr.read("separation", c.synth.separation);
    sr.read("sigma", c.synth.sigma);
    sr.read("seed", c.synth.seed);
    sr.finish();
  }
  if (const Json* s = r.child("sweep")) {
    detail::ObjectReader sr(*s, "sweep");
    sr.read("param", c.sweep.param);
    sr.read("values", c.sweep.values);
    sr.read("seeds", c.sweep.seeds);
    sr.finish();
  }
  r.finish();
  return c;
}

}  // namespace cimic
