// Command-line front end. Exit codes: 0 ok, 2 argument/config error,
// 3 I/O or data error, 4 numeric failure.

#include "cimic/checkpoint.hpp"
#include "cimic/config.hpp"
#include "cimic/dataset_io.hpp"
#include "cimic/experiment.hpp"
#include "cimic/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace cimic;

enum ExitCode { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

/// Flags shared by every subcommand; unset ones leave the config alone.
struct GlobalFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool deterministic = false;
  std::optional<double> mr;
  std::optional<std::string> dataset;
  std::optional<int> k;
};

struct TrainFlags {
  std::vector<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> learning_rate;
  std::optional<std::string> fill_mode;
};

RunConfig resolve(const GlobalFlags& g, const TrainFlags& t) {
  RunConfig rc;
  if (!g.config_path.empty()) {
    Json j;
    const std::string text = io::read_text(g.config_path);
    try {
      j = Json::parse(text);
    } catch (const Json::exception& e) {
      detail::raise<ConfigError>("config '", g.config_path, "' is not valid JSON: ", e.what());
    }
    rc = run_config_from_json(j);
  }
  if (g.seed) rc.seed = *g.seed;
  if (g.out) rc.out = *g.out;
  if (g.mr) rc.mr = *g.mr;
  if (g.dataset) rc.dataset = *g.dataset;
  if (g.k) rc.k = *g.k;
  rc.deterministic = rc.deterministic || g.deterministic;
  if (!t.epochs.empty()) {
    if (t.epochs.size() != 3) detail::raise<ConfigError>("--epochs takes three values");
    rc.train.epochs = {t.epochs[0], t.epochs[1], t.epochs[2]};
  }
  if (t.batch_size) rc.train.batch_size = *t.batch_size;
  if (t.learning_rate) rc.train.learning_rate = *t.learning_rate;
  if (t.fill_mode) rc.train.fill_mode = fill_mode_from_string(*t.fill_mode);
  rc.validate();
  return rc;
}

fs::path out_dir(const RunConfig& rc) {
  const fs::path dir = rc.out;
  io::ensure_directory(dir);
  return dir;
}

void write_reports(const fs::path& path, const std::vector<ClusteringReport>& rows) {
  io::write_text(path, reports_csv(rows));
  for (const auto& r : rows) std::cout << r.csv_row() << "\n";
}

int cmd_synth(const RunConfig& rc, bool seed_given) {
  SynthConfig sc = rc.synth;
  if (seed_given) sc.seed = rc.seed;
  MultiViewDataset ds = synth_generate(sc);
  if (rc.mr) ds = apply_missing_mask(ds, *rc.mr, rc.effective_mask_seed());
  const fs::path dir = save_dataset(ds, rc.out);
  std::cout << dir.string() << "\n";
  return kOk;
}

int cmd_train(const RunConfig& rc) {
  const MultiViewDataset ds = prepare_dataset(rc);
  const TrainConfig cfg = rc.train_config();
  const fs::path dir = out_dir(rc);
  PipelineResult res = run_pipeline(ds, cfg, pipeline_options(rc));
  save_model(res.model, dir / "checkpoint");
  io::write_text(dir / "history.csv", history_csv(res.model.history));
  io::write_text(dir / "config.json", to_json(rc).dump(2) + "\n");
  if (res.report) {
    write_reports(dir / "metrics.csv", {finish_report(*res.report, ds, cfg, "cimic")});
  } else {
    std::cerr << "dataset has no labels; metrics.csv not written\n";
  }
  return kOk;
}

/// Dataset normalized with the checkpoint's statistics, checked against it.
MultiViewDataset dataset_for(const TrainedModel<float>& model, const RunConfig& rc) {
  const MultiViewDataset ds = prepare_dataset(rc);
  if (ds.dims() != model.view_dims)
    detail::raise<DataError>("dataset '", ds.name, "' view widths do not match the checkpoint");
  return apply_normalization(ds, model.normalization);
}

int cmd_eval(const RunConfig& rc, const std::string& checkpoint) {
  const TrainedModel<float> model = load_model(checkpoint);
  const MultiViewDataset ds = dataset_for(model, rc);
  if (!ds.labels) detail::raise<DataError>("dataset '", ds.name, "' has no labels to evaluate against");
  const MatrixD fused = fill_latents(model, ds).cast<double>();
  ClusteringReport r = evaluate(fused, *ds.labels, cluster_count(ds, rc), model.config.seed, rc.metrics.nmi_norm,
                                rc.metrics.kmeans);
  write_reports(out_dir(rc) / "metrics.csv", {finish_report(r, ds, model.config, "cimic")});
  return kOk;
}

int cmd_baseline(const RunConfig& rc) {
  const MultiViewDataset ds = prepare_dataset(rc);
  write_reports(out_dir(rc) / "metrics.csv", {run_baseline(ds, rc.train_config(), rc)});
  return kOk;
}

int cmd_sweep(RunConfig rc, const std::optional<std::string>& param, const std::vector<double>& values,
              const std::vector<std::uint64_t>& seeds) {
  if (param) {
    rc.sweep.param = *param;
    rc.sweep.values = values;
  } else if (!values.empty()) {
    rc.sweep.values = values;
  }
  if (!seeds.empty()) rc.sweep.seeds = seeds;
  rc.sweep.validate();
  if (rc.sweep.param == "mr") rc.mr.reset();
  const MultiViewDataset ds = prepare_dataset(rc);
  const fs::path dir = out_dir(rc);
  const auto rows = run_sweep(ds, rc, [](const ClusteringReport& r) { std::cerr << r.csv_row() << "\n"; });
  io::write_text(dir / "sweep.csv", reports_csv(rows));
  std::cout << (dir / "sweep.csv").string() << "\n";
  return kOk;
}

int cmd_ablate(const RunConfig& rc, const std::vector<int>& only) {
  const MultiViewDataset ds = prepare_dataset(rc);
  const TrainConfig base = rc.train_config();
  std::vector<int> variants = only;
  if (variants.empty())
    for (int v = 1; v <= 8; ++v) variants.push_back(v);
  for (int v : variants)
    if (v < 1 || v > 8) detail::raise<ConfigError>("--only: variant must be 1..8, got ", v);
  const fs::path dir = out_dir(rc);
  std::vector<ClusteringReport> rows;
  for (int v : variants) rows.push_back(run_ablation_variant(ds, base, rc, v));
  write_reports(dir / "ablation.csv", rows);
  return kOk;
}

int cmd_export(const RunConfig& rc, const std::string& checkpoint) {
  const TrainedModel<float> model = load_model(checkpoint);
  const MultiViewDataset ds = dataset_for(model, rc);
  const MatrixF fused = fill_latents(model, ds);
  const fs::path dir = out_dir(rc);
  io::write_f32(dir / "embeddings.f32", io::to_row_major(fused));
  Json manifest{{"name", ds.name},
                {"file", "embeddings.f32"},
                {"rows", fused.rows()},
                {"cols", fused.cols()},
                {"dtype", "f32"},
                {"layout", "row-major"},
                {"views", ds.num_views()},
                {"latent_dim", model.config.arch.latent_dim}};
  if (ds.labels) {
    std::string text;
    for (int l : *ds.labels) text += std::to_string(l) + "\n";
    io::write_text(dir / "labels.txt", text);
    manifest["labels_file"] = "labels.txt";
  }
  io::write_text(dir / "embeddings.json", manifest.dump(2) + "\n");
  std::cout << (dir / "embeddings.f32").string() << "\n";
  return kOk;
}

void add_train_flags(CLI::App* cmd, TrainFlags& t) {
  cmd->add_option("--epochs", t.epochs, "Epochs of the three training steps")->expected(3);
  cmd->add_option("--batch-size", t.batch_size, "Mini-batch size");
  cmd->add_option("--learning-rate", t.learning_rate, "Adam learning rate");
  cmd->add_option("--fill-mode", t.fill_mode, "Missing-latent fill: gan or prediction");
}

int run(int argc, char** argv) {
  CLI::App app{"Incomplete multi-view clustering with adversarial completion and double contrastive learning"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalFlags g;
  TrainFlags t;
  app.add_option("--config", g.config_path, "JSON run configuration");
  auto* seed_opt = app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--deterministic", g.deterministic, "Single-threaded, bit-reproducible execution");
  app.add_option("--mr", g.mr, "Missing rate applied to an all-present dataset");
  app.add_option("--dataset", g.dataset, "Dataset directory");
  app.add_option("--k", g.k, "Number of clusters (default: label count)");

  auto* synth = app.add_subcommand("synth", "Write a synthetic multi-view dataset");
  auto* train = app.add_subcommand("train", "Train, write checkpoint, history.csv and metrics.csv");
  add_train_flags(train, t);
  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "Cluster a dataset with a trained checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  std::optional<std::string> sweep_param;
  std::vector<double> sweep_values;
  std::vector<std::uint64_t> sweep_seeds;
  auto* sweep = app.add_subcommand("sweep", "Sweep mr, momentum, alpha or beta; writes sweep.csv");
  add_train_flags(sweep, t);
  sweep->add_option("--param", sweep_param, "mr, momentum, alpha or beta");
  sweep->add_option("--values", sweep_values, "Grid values (default: the parameter's standard grid)");
  sweep->add_option("--seeds", sweep_seeds, "Seeds per grid value");
  std::vector<int> only;
  auto* ablate = app.add_subcommand("ablate", "Run the eight loss combinations; writes ablation.csv");
  add_train_flags(ablate, t);
  ablate->add_option("--only", only, "Subset of variants (1..8)");
  auto* exp = app.add_subcommand("export-embeddings", "Write fused representations for visualization");
  exp->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  auto* baseline = app.add_subcommand("baseline", "Mean-fill reference clustering; writes metrics.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const RunConfig rc = resolve(g, t);
    if (synth->parsed()) return cmd_synth(rc, seed_opt->count() > 0);
    if (train->parsed()) return cmd_train(rc);
    if (eval->parsed()) return cmd_eval(rc, checkpoint);
    if (sweep->parsed()) return cmd_sweep(rc, sweep_param, sweep_values, sweep_seeds);
    if (ablate->parsed()) return cmd_ablate(rc, only);
    if (exp->parsed()) return cmd_export(rc, checkpoint);
    if (baseline->parsed()) return cmd_baseline(rc);
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
