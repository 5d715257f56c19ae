#pragma once

// Runs shared by the command-line tool and the acceptance suite: the full
// method, the mean-fill reference, loss ablations and parameter sweeps.

#include "cimic/config.hpp"
#include "cimic/dataset_io.hpp"
#include "cimic/training.hpp"

#include <array>
#include <cstdio>
#include <string>
#include <vector>

namespace cimic {

/// Loads the configured dataset and applies the configured missing rate.
inline MultiViewDataset prepare_dataset(const RunConfig& rc) {
  if (rc.dataset.empty()) detail::raise<ConfigError>("no dataset given (use --dataset or the 'dataset' key)");
  MultiViewDataset ds = load_dataset(rc.dataset);
  if (rc.mr) {
    if (!ds.presence.all_complete() && *rc.mr > 0)
      detail::raise<DataError>("dataset '", ds.name, "' already has missing views; --mr needs an all-present dataset");
    if (ds.presence.all_complete()) ds = apply_missing_mask(ds, *rc.mr, rc.effective_mask_seed());
  }
  return ds;
}

inline double missing_rate(const MultiViewDataset& ds) {
  return static_cast<double>(ds.presence.incomplete_count()) / static_cast<double>(ds.instances());
}

inline PipelineOptions pipeline_options(const RunConfig& rc) {
  return {rc.k, rc.metrics.nmi_norm, rc.metrics.kmeans};
}

/// Number of clusters used for evaluation.
inline int cluster_count(const MultiViewDataset& ds, const RunConfig& rc) {
  if (rc.k > 0) return rc.k;
  if (!ds.labels) detail::raise<DataError>("dataset '", ds.name, "' has no labels; set k explicitly");
  return ds.num_classes();
}

inline ClusteringReport finish_report(ClusteringReport r, const MultiViewDataset& ds, const TrainConfig& cfg,
                                      std::string run_id) {
  r.run_id = std::move(run_id);
  r.dataset = ds.name;
  r.mr = missing_rate(ds);
  r.seed = cfg.seed;
  r.config_hash = config_hash(cfg);
  return r;
}

/// Full method on an already-masked dataset with labels.
inline ClusteringReport run_method(const MultiViewDataset& ds, const TrainConfig& cfg, const RunConfig& rc,
                                   const std::string& run_id, PipelineResult* keep = nullptr) {
  if (!ds.labels) detail::raise<DataError>("dataset '", ds.name, "' has no labels to evaluate against");
  PipelineResult res = run_pipeline(ds, cfg, pipeline_options(rc));
  ClusteringReport r = finish_report(*res.report, ds, cfg, run_id);
  if (keep) *keep = std::move(res);
  return r;
}

/// Mean-filled, normalized raw features concatenated across views, then
/// k-means. With no missing views this is plain raw-feature clustering.
inline MatrixD meanfill_features(const MultiViewDataset& ds, NormalizeMode mode) {
  const MultiViewDataset filled = mean_fill(normalize(ds, mode).first);
  Index width = 0;
  for (const auto& v : filled.views) width += v.cols();
  MatrixD z(filled.instances(), width);
  Index col = 0;
  for (const auto& v : filled.views) {
    z.middleCols(col, v.cols()) = v.cast<double>();
    col += v.cols();
  }
  return z;
}

inline ClusteringReport run_baseline(const MultiViewDataset& ds, const TrainConfig& cfg, const RunConfig& rc) {
  if (!ds.labels) detail::raise<DataError>("dataset '", ds.name, "' has no labels to evaluate against");
  ClusteringReport r = evaluate(meanfill_features(ds, cfg.normalize), *ds.labels, cluster_count(ds, rc), cfg.seed,
                                rc.metrics.nmi_norm, rc.metrics.kmeans);
  return finish_report(r, ds, cfg, "meanfill");
}

struct AblationVariant {
  const char* label;
  LossToggles losses;
};

/// The eight loss combinations, numbered as in the usual ablation table.
inline const std::array<AblationVariant, 8>& ablation_variants() {
  static const std::array<AblationVariant, 8> variants{{
      {"(1)rec", {true, false, false, false}},
      {"(2)pre", {false, true, false, false}},
      {"(3)cc", {false, false, true, false}},
      {"(4)rec+pre", {true, true, false, false}},
      {"(5)rec+cc", {true, false, true, false}},
      {"(6)cc+pre", {false, true, true, false}},
      {"(7)rec+cc+pre", {true, true, true, false}},
      {"(8)rec+cc+pre+adv", {true, true, true, true}},
  }};
  return variants;
}

inline TrainConfig ablation_config(TrainConfig cfg, int variant) {
  if (variant < 1 || variant > 8) detail::raise<ArgumentError>("ablation variant must be 1..8, got ", variant);
  cfg.losses = ablation_variants()[static_cast<std::size_t>(variant - 1)].losses;
  return cfg;
}

inline ClusteringReport run_ablation_variant(const MultiViewDataset& ds, const TrainConfig& base, const RunConfig& rc,
                                             int variant) {
  return run_method(ds, ablation_config(base, variant), rc,
                    ablation_variants()[static_cast<std::size_t>(variant - 1)].label);
}

inline std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

/// Applies one sweep value to a configuration.
inline void apply_sweep_value(const std::string& param, double value, TrainConfig& cfg) {
  if (param == "momentum") cfg.momentum = value;
  else if (param == "alpha") cfg.weights.alpha = value;
  else if (param == "beta") cfg.weights.beta = value;
  else if (param != "mr") detail::raise<ConfigError>("unknown sweep parameter '", param, "'");
}

/// Mean of the metrics of `rows` as an aggregate row.
inline ClusteringReport aggregate(const std::vector<ClusteringReport>& rows) {
  ClusteringReport a = rows.front();
  a.aggregate = true;
  a.acc = a.nmi = a.ari = 0;
  for (const auto& r : rows) {
    a.acc += r.acc;
    a.nmi += r.nmi;
    a.ari += r.ari;
  }
  const double n = static_cast<double>(rows.size());
  a.acc /= n;
  a.nmi /= n;
  a.ari /= n;
  return a;
}

/// One row per (value, seed) followed by one aggregate row per value, in
/// grid order. For an mr sweep `ds` must be all-present; each seed draws
/// its own mask.
template <typename OnRow = void (*)(const ClusteringReport&)>
std::vector<ClusteringReport> run_sweep(const MultiViewDataset& ds, const RunConfig& rc, OnRow on_row = nullptr) {
  rc.sweep.validate();
  const std::string& param = rc.sweep.param;
  if (param == "mr" && !ds.presence.all_complete())
    detail::raise<ConfigError>("an mr sweep needs an all-present dataset");
  std::vector<ClusteringReport> out;
  for (double value : rc.sweep.grid()) {
    std::vector<ClusteringReport> cell;
    for (std::uint64_t seed : rc.sweep.seeds) {
      TrainConfig cfg = rc.train;
      cfg.seed = seed;
      apply_sweep_value(param, value, cfg);
      cfg.validate();
      const MultiViewDataset data = param == "mr" ? apply_missing_mask(ds, value, seed) : ds;
      cell.push_back(run_method(data, cfg, rc, param + "=" + format_value(value)));
      if constexpr (!std::is_pointer_v<OnRow>) on_row(cell.back());
      else if (on_row) on_row(cell.back());
      out.push_back(cell.back());
    }
    out.push_back(aggregate(cell));
  }
  return out;
}

inline std::string reports_csv(const std::vector<ClusteringReport>& rows) {
  std::string out = ClusteringReport::csv_header() + "\n";
  for (const auto& r : rows) out += r.csv_row() + "\n";
  return out;
}

}  // namespace cimic
