#pragma once

// Checkpoint directory: checkpoint.json (architecture, config echo, tensor
// table) and params.bin (f32 tensors, concatenated in canonical order).

#include "cimic/config.hpp"
#include "cimic/dataset_io.hpp"
#include "cimic/training.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace cimic {

inline constexpr const char* kCheckpointFormat = "cimic-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

/// One named float tensor in the canonical checkpoint order.
struct TensorSlot {
  std::string name;
  float* data;
  Index size;
};

inline std::vector<TensorSlot> tensor_slots(TrainedModel<float>& model) {
  std::vector<TensorSlot> slots;
  for (const auto& p : model.parameters()) slots.push_back({p.name, p.value, p.size});
  for (const auto& b : model.buffers()) slots.push_back({b.name, b.value, b.size});
  auto& norm = model.normalization;
  for (std::size_t v = 0; v < norm.offset.size(); ++v) {
    slots.push_back({"normalization.view" + std::to_string(v) + ".offset", norm.offset[v].data(), norm.offset[v].size()});
    slots.push_back({"normalization.view" + std::to_string(v) + ".scale", norm.scale[v].data(), norm.scale[v].size()});
  }
  return slots;
}

inline Json mlp_json(const nn::MlpSpec& spec) {
  Json layers = Json::array();
  for (const auto& l : spec.layers)
    layers.push_back({{"in", l.in}, {"out", l.out}, {"batch_norm", l.batch_norm}, {"activation", nn::to_string(l.activation)}});
  return layers;
}

inline Json architecture_json(const TrainedModel<float>& model) {
  Json modules = Json::array();
  for (std::size_t v = 0; v < model.autoencoders.size(); ++v) {
    const std::string p = "view" + std::to_string(v) + ".";
    modules.push_back({{"name", p + "encoder"}, {"layers", mlp_json(model.autoencoders[v].encoder.spec())}});
    modules.push_back({{"name", p + "decoder"}, {"layers", mlp_json(model.autoencoders[v].decoder.spec())}});
  }
  for (const auto& pair : model.pairs) {
    modules.push_back({{"name", pair.prefix() + "online_decoder"}, {"layers", mlp_json(pair.online_decoder.spec())}});
    modules.push_back({{"name", pair.prefix() + "online_projector"}, {"layers", mlp_json(pair.online_projector.spec())}});
    modules.push_back({{"name", pair.prefix() + "online_predictor"}, {"layers", mlp_json(pair.online_predictor.spec())}});
    modules.push_back({{"name", pair.prefix() + "target_decoder"}, {"layers", mlp_json(pair.target_decoder.spec())}});
    modules.push_back({{"name", pair.prefix() + "target_projector"}, {"layers", mlp_json(pair.target_projector.spec())}});
  }
  for (std::size_t v = 0; v < model.discriminators.size(); ++v)
    modules.push_back({{"name", "view" + std::to_string(v) + ".discriminator"},
                       {"layers", mlp_json(model.discriminators[v].net.spec())}});
  return modules;
}

}  // namespace detail

/// Writes the model into `dir` (created if needed).
inline void save_model(const TrainedModel<float>& model_in, const fs::path& dir) {
  TrainedModel<float> model = model_in;
  io::ensure_directory(dir);
  const auto slots = detail::tensor_slots(model);
  std::vector<float> payload;
  Json tensors = Json::array();
  for (const auto& s : slots) {
    tensors.push_back({{"name", s.name}, {"offset", payload.size()}, {"size", s.size}});
    payload.insert(payload.end(), s.data, s.data + s.size);
  }
  Json j{{"format", kCheckpointFormat},
         {"version", kCheckpointVersion},
         {"view_dims", model.view_dims},
         {"config", to_json(model.config)},
         {"seed", model.config.seed},
         {"normalization", to_string(model.normalization.mode)},
         {"architecture", detail::architecture_json(model)},
         {"tensors", tensors},
         {"total_size", payload.size()}};
  io::write_f32(dir / "params.bin", payload);
  io::write_text(dir / "checkpoint.json", j.dump(2) + "\n");
}

/// Rebuilds the model described by checkpoint.json and fills it from
/// params.bin. Any disagreement in architecture, tensor names, order or
/// sizes, or payload length is a FormatError.
inline TrainedModel<float> load_model(const fs::path& dir) {
  const fs::path meta_path = dir / "checkpoint.json";
  const fs::path bin_path = dir / "params.bin";
  if (!fs::exists(meta_path)) detail::raise<IoError>("missing file '", meta_path.string(), "'");
  if (!fs::exists(bin_path)) detail::raise<IoError>("missing file '", bin_path.string(), "'");
  const Json j = io::read_json(meta_path);
  const auto fail = [&](auto&&... parts) {
    detail::raise<FormatError>("checkpoint '", dir.string(), "': ", parts...);
  };
  if (!j.is_object() || j.value("format", std::string()) != kCheckpointFormat) fail("not a checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) fail("unsupported version");

  TrainConfig cfg;
  std::vector<Index> view_dims;
  NormalizeMode norm_mode;
  try {
    cfg = train_config_from_json(j.at("config"));
    cfg.seed = j.at("seed").get<std::uint64_t>();
    view_dims = j.at("view_dims").get<std::vector<Index>>();
    norm_mode = normalize_mode_from_string(j.at("normalization").get<std::string>());
  } catch (const Json::exception& e) {
    fail("malformed metadata: ", e.what());
  } catch (const ConfigError& e) {
    fail("bad config echo: ", e.what());
  }

  TrainedModel<float> model = build_model<float>(view_dims, cfg);
  model.normalization.mode = norm_mode;
  if (norm_mode == NormalizeMode::minmax)
    for (Index d : view_dims) {
      model.normalization.offset.emplace_back(Eigen::RowVectorXf::Zero(d));
      model.normalization.scale.emplace_back(Eigen::RowVectorXf::Zero(d));
    }
  if (j.at("architecture") != detail::architecture_json(model)) fail("architecture does not match the config echo");

  const auto slots = detail::tensor_slots(model);
  const Json& tensors = j.at("tensors");
  if (!tensors.is_array() || tensors.size() != slots.size())
    fail("expected ", slots.size(), " tensors, table lists ", tensors.is_array() ? tensors.size() : 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const Json& t = tensors[i];
    if (t.value("name", std::string()) != slots[i].name)
      fail("tensor ", i, " is '", t.value("name", std::string()), "', expected '", slots[i].name, "'");
    if (t.value("size", Index{-1}) != slots[i].size || t.value("offset", std::size_t{0}) != offset)
      fail("tensor '", slots[i].name, "' has the wrong size or offset");
    offset += static_cast<std::size_t>(slots[i].size);
  }
  const std::vector<float> payload = io::read_f32(bin_path);
  if (payload.size() != offset) fail("params.bin holds ", payload.size(), " values, expected ", offset);
  std::size_t cursor = 0;
  for (const auto& s : slots) {
    std::copy_n(payload.data() + cursor, s.size, s.data);
    cursor += static_cast<std::size_t>(s.size);
  }
  return model;
}

}  // namespace cimic
