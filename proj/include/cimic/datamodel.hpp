#pragma once

#include "cimic/core.hpp"
#include "cimic/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cimic {

/// Instance x view matrix of presence bits. Every instance keeps at least
/// one view; rows with all bits set form the complete subset.
class PresenceMask {
 public:
  PresenceBits bits;

  PresenceMask() = default;
  explicit PresenceMask(PresenceBits b) : bits(std::move(b)) {}

  static PresenceMask all_present(Index instances, Index views) {
    return PresenceMask(PresenceBits::Constant(instances, views, true));
  }

  Index instances() const { return bits.rows(); }
  Index views() const { return bits.cols(); }
  bool present(Index row, Index view) const { return bits(row, view); }
  bool complete(Index row) const { return bits.row(row).all(); }

  Index complete_count() const {
    Index n = 0;
    for (Index r = 0; r < instances(); ++r) n += complete(r) ? 1 : 0;
    return n;
  }
  Index incomplete_count() const { return instances() - complete_count(); }
  bool all_complete() const { return bits.all(); }

  void validate() const {
    for (Index r = 0; r < instances(); ++r)
      if (!bits.row(r).any()) detail::raise<DataError>("instance ", r, " has no present view");
  }

  bool operator==(const PresenceMask& o) const {
    return bits.rows() == o.bits.rows() && bits.cols() == o.bits.cols() && (bits == o.bits).all();
  }
};

/// Per-view feature matrices (rows are instances) with optional labels.
struct MultiViewDataset {
  std::string name;
  std::vector<MatrixF> views;
  std::optional<std::vector<int>> labels;
  PresenceMask presence;

  Index instances() const { return views.empty() ? 0 : views.front().rows(); }
  Index num_views() const { return static_cast<Index>(views.size()); }
  Index dim(Index v) const { return views[static_cast<std::size_t>(v)].cols(); }

  std::vector<Index> dims() const {
    std::vector<Index> d;
    for (const auto& m : views) d.push_back(m.cols());
    return d;
  }

  /// Number of classes implied by the labels (max label + 1), 0 without labels.
  int num_classes() const {
    if (!labels || labels->empty()) return 0;
    return *std::max_element(labels->begin(), labels->end()) + 1;
  }

  void validate() const {
    if (views.size() < 2) detail::raise<DataError>("dataset needs at least two views, has ", views.size());
    const Index n = instances();
    for (std::size_t v = 0; v < views.size(); ++v) {
      if (views[v].cols() < 1) detail::raise<DataError>("view ", v, " has no features");
      if (views[v].rows() != n)
        detail::raise<DataError>("view ", v, " has ", views[v].rows(), " rows, expected ", n);
    }
    if (presence.instances() != n || presence.views() != num_views())
      detail::raise<DataError>("presence mask is ", presence.instances(), "x", presence.views(),
                               ", expected ", n, "x", num_views());
    presence.validate();
    if (labels) {
      if (static_cast<Index>(labels->size()) != n)
        detail::raise<DataError>("dataset has ", labels->size(), " labels for ", n, " instances");
      for (std::size_t i = 0; i < labels->size(); ++i)
        if ((*labels)[i] < 0) detail::raise<DataError>("label ", i, " is negative");
      if (num_classes() < 2) detail::raise<DataError>("labels must span at least two classes");
    }
  }
};

/// Instances sharing one presence pattern.
struct PresenceGroup {
  std::vector<bool> pattern;
  IndexList rows;
};

/// Partition of the instances into the complete subset and the incomplete
/// subset grouped by presence pattern.
struct ViewSplit {
  IndexList complete;
  std::vector<PresenceGroup> incomplete;

  Index incomplete_count() const {
    Index n = 0;
    for (const auto& g : incomplete) n += static_cast<Index>(g.rows.size());
    return n;
  }

  IndexList incomplete_rows() const {
    IndexList rows;
    for (const auto& g : incomplete) rows.insert(rows.end(), g.rows.begin(), g.rows.end());
    std::sort(rows.begin(), rows.end());
    return rows;
  }
};

inline ViewSplit split_views(const MultiViewDataset& ds) {
  ViewSplit split;
  std::map<std::vector<bool>, IndexList> groups;
  for (Index r = 0; r < ds.instances(); ++r) {
    if (ds.presence.complete(r)) {
      split.complete.push_back(r);
      continue;
    }
    std::vector<bool> pattern(static_cast<std::size_t>(ds.num_views()));
    for (Index v = 0; v < ds.num_views(); ++v) pattern[static_cast<std::size_t>(v)] = ds.presence.present(r, v);
    groups[pattern].push_back(r);
  }
  for (auto& [pattern, rows] : groups) split.incomplete.push_back({pattern, std::move(rows)});
  return split;
}

/// Per-view matrices of the given rows.
inline std::vector<MatrixF> gather_views(const MultiViewDataset& ds, const IndexList& rows) {
  std::vector<MatrixF> out;
  for (const auto& m : ds.views) out.push_back(gather_rows(m, rows));
  return out;
}

/// Number of incomplete instances for a missing rate, rounding half away
/// from zero.
inline Index incomplete_target(double mr, Index instances) {
  return static_cast<Index>(std::llround(mr * static_cast<double>(instances)));
}

/// Marks round(mr·N) uniformly chosen instances incomplete and removes a
/// uniformly chosen non-empty proper subset of views from each (exactly one
/// view when there are two). Removed entries are zero-filled.
inline MultiViewDataset apply_missing_mask(const MultiViewDataset& ds, double mr, std::uint64_t seed) {
  if (!(mr >= 0.0 && mr <= 1.0)) detail::raise<ArgumentError>("missing rate must lie in [0, 1], got ", mr);
  if (!ds.presence.all_complete())
    detail::raise<ArgumentError>("missing mask must be applied to a dataset with all views present");
  const Index a = ds.num_views();
  if (a < 2 || a > 62) detail::raise<ArgumentError>("missing mask supports 2..62 views, got ", a);
  MultiViewDataset out = ds;
  const Index n = ds.instances();
  const Index target = incomplete_target(mr, n);
  if (target == 0) return out;

  std::mt19937_64 rng(seed);
  IndexList order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<std::uint64_t> subset(1, (std::uint64_t{1} << a) - 2);
  for (Index k = 0; k < target; ++k) {
    const Index row = order[static_cast<std::size_t>(k)];
    const std::uint64_t removed = subset(rng);
    for (Index v = 0; v < a; ++v) {
      if (!((removed >> v) & 1U)) continue;
      out.presence.bits(row, v) = false;
      out.views[static_cast<std::size_t>(v)].row(row).setZero();
    }
  }
  return out;
}

/// Zeroes every absent view row.
inline void zero_absent_rows(MultiViewDataset& ds) {
  for (Index v = 0; v < ds.num_views(); ++v)
    for (Index r = 0; r < ds.instances(); ++r)
      if (!ds.presence.present(r, v)) ds.views[static_cast<std::size_t>(v)].row(r).setZero();
}

struct SynthConfig {
  int clusters = 4;
  Index instances = 2000;
  Index latent_dim = 8;
  std::vector<Index> view_dims = {20, 30};
  double separation = 6.0;
  double sigma = 1.0;
  std::uint64_t seed = 7;

  void validate() const {
    if (clusters < 2) detail::raise<ArgumentError>("synth: need at least 2 clusters, got ", clusters);
    if (instances < clusters)
      detail::raise<ArgumentError>("synth: ", instances, " instances cannot hold ", clusters, " clusters");
    if (latent_dim < 1) detail::raise<ArgumentError>("synth: latent dimension must be positive");
    if (view_dims.size() < 2) detail::raise<ArgumentError>("synth: need at least two views");
    for (Index d : view_dims)
      if (d < 1) detail::raise<ArgumentError>("synth: view dimensions must be positive");
    if (!(separation > 0)) detail::raise<ArgumentError>("synth: separation must be positive");
    if (!(sigma >= 0)) detail::raise<ArgumentError>("synth: sigma must be non-negative");
  }
};

/// Views are tanh-warped random affine images of a shared Gaussian-mixture
/// latent; labels are assigned round-robin.
inline MultiViewDataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index k = cfg.clusters;
  const Index p = cfg.latent_dim;

  MatrixD means = MatrixD::Zero(k, p);
  if (k <= p) {
    for (Index c = 0; c < k; ++c) means(c, c) = cfg.separation / std::sqrt(2.0);
  } else {
    for (Index c = 0; c < k; ++c)
      for (Index j = 0; j < p; ++j) means(c, j) = normal(rng);
    double min_dist = std::numeric_limits<double>::infinity();
    for (Index a = 0; a < k; ++a)
      for (Index b = a + 1; b < k; ++b) min_dist = std::min(min_dist, (means.row(a) - means.row(b)).norm());
    if (!(min_dist > 0)) detail::raise<ArgumentError>("synth: degenerate cluster means");
    means *= cfg.separation / min_dist;
  }

  std::vector<MatrixD> weights;
  std::vector<Eigen::RowVectorXd> biases;
  const double w_scale = 1.0 / std::sqrt(static_cast<double>(p));
  for (Index d : cfg.view_dims) {
    MatrixD w(p, d);
    for (Index j = 0; j < d; ++j)
      for (Index i = 0; i < p; ++i) w(i, j) = w_scale * normal(rng);
    Eigen::RowVectorXd b(d);
    for (Index j = 0; j < d; ++j) b(j) = 0.5 * normal(rng);
    weights.push_back(std::move(w));
    biases.push_back(std::move(b));
  }

  MultiViewDataset ds;
  ds.name = "synthetic";
  for (Index d : cfg.view_dims) ds.views.emplace_back(cfg.instances, d);
  std::vector<int> labels(static_cast<std::size_t>(cfg.instances));
  const double noise = cfg.sigma / 4.0;
  Eigen::RowVectorXd u(p);
  for (Index i = 0; i < cfg.instances; ++i) {
    const int label = static_cast<int>(i % k);
    labels[static_cast<std::size_t>(i)] = label;
    for (Index j = 0; j < p; ++j) u(j) = means(label, j) + cfg.sigma * normal(rng);
    for (std::size_t v = 0; v < weights.size(); ++v) {
      const Eigen::RowVectorXd h = ((u * weights[v] + biases[v]).array().tanh()).matrix();
      for (Index j = 0; j < h.size(); ++j)
        ds.views[v](i, j) = static_cast<float>(h(j) + noise * normal(rng));
    }
  }
  ds.labels = std::move(labels);
  ds.presence = PresenceMask::all_present(cfg.instances, static_cast<Index>(cfg.view_dims.size()));
  return ds;
}

enum class NormalizeMode { minmax, none };

inline const char* to_string(NormalizeMode m) { return m == NormalizeMode::minmax ? "minmax" : "none"; }

inline NormalizeMode normalize_mode_from_string(const std::string& s) {
  if (s == "minmax") return NormalizeMode::minmax;
  if (s == "none") return NormalizeMode::none;
  detail::raise<ConfigError>("unknown normalization mode '", s, "'");
}

/// Per-view, per-feature affine statistics: x' = (x − offset) · scale.
struct NormalizationStats {
  NormalizeMode mode = NormalizeMode::none;
  std::vector<Eigen::RowVectorXf> offset;
  std::vector<Eigen::RowVectorXf> scale;
};

/// Applies previously computed statistics; absent rows stay zero and
/// min-max output is clamped to [0, 1].
inline MultiViewDataset apply_normalization(const MultiViewDataset& ds, const NormalizationStats& stats) {
  if (stats.mode == NormalizeMode::none) return ds;
  if (stats.offset.size() != ds.views.size())
    detail::raise<DataError>("normalization statistics cover ", stats.offset.size(), " views, dataset has ",
                             ds.views.size());
  MultiViewDataset out = ds;
  for (std::size_t v = 0; v < ds.views.size(); ++v) {
    if (stats.offset[v].size() != ds.views[v].cols())
      detail::raise<DataError>("normalization statistics for view ", v, " have width ",
                               stats.offset[v].size(), ", view has ", ds.views[v].cols());
    auto& m = out.views[v];
    for (Index r = 0; r < m.rows(); ++r) {
      if (!ds.presence.present(r, static_cast<Index>(v))) {
        m.row(r).setZero();
        continue;
      }
      m.row(r) = ((m.row(r) - stats.offset[v]).array() * stats.scale[v].array()).cwiseMax(0.0f).cwiseMin(1.0f).matrix();
    }
  }
  return out;
}

/// Min-max rescaling of every feature to [0, 1] using present rows only;
/// constant columns map to 0.
inline std::pair<MultiViewDataset, NormalizationStats> normalize(const MultiViewDataset& ds,
                                                                 NormalizeMode mode) {
  NormalizationStats stats;
  stats.mode = mode;
  if (mode == NormalizeMode::none) return {ds, stats};
  for (std::size_t v = 0; v < ds.views.size(); ++v) {
    const auto& m = ds.views[v];
    Eigen::RowVectorXf lo = Eigen::RowVectorXf::Constant(m.cols(), std::numeric_limits<float>::infinity());
    Eigen::RowVectorXf hi = Eigen::RowVectorXf::Constant(m.cols(), -std::numeric_limits<float>::infinity());
    for (Index r = 0; r < m.rows(); ++r) {
      if (!ds.presence.present(r, static_cast<Index>(v))) continue;
      lo = lo.cwiseMin(m.row(r));
      hi = hi.cwiseMax(m.row(r));
    }
    Eigen::RowVectorXf scale(m.cols());
    for (Index j = 0; j < m.cols(); ++j) {
      if (!std::isfinite(lo(j))) lo(j) = 0.0f;  // view has no present rows
      const float range = std::isfinite(hi(j)) ? hi(j) - lo(j) : 0.0f;
      scale(j) = range > 0 ? 1.0f / range : 0.0f;
    }
    stats.offset.push_back(lo);
    stats.scale.push_back(scale);
  }
  return {apply_normalization(ds, stats), std::move(stats)};
}

/// Replaces every absent view row by the per-feature mean of the present
/// rows of that view and marks everything present.
inline MultiViewDataset mean_fill(const MultiViewDataset& ds) {
  MultiViewDataset out = ds;
  for (std::size_t v = 0; v < ds.views.size(); ++v) {
    const auto view = static_cast<Index>(v);
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(ds.views[v].cols());
    Index count = 0;
    for (Index r = 0; r < ds.instances(); ++r) {
      if (!ds.presence.present(r, view)) continue;
      sum += ds.views[v].row(r).cast<double>();
      ++count;
    }
    if (count == 0) detail::raise<DataError>("mean fill: view ", v, " has no present rows");
    const Eigen::RowVectorXf mean = (sum / static_cast<double>(count)).cast<float>();
    for (Index r = 0; r < ds.instances(); ++r)
      if (!ds.presence.present(r, view)) out.views[v].row(r) = mean;
  }
  out.presence = PresenceMask::all_present(ds.instances(), ds.num_views());
  return out;
}

}  // namespace cimic
