#pragma once

#include "cimic/core.hpp"
#include "cimic/networks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace cimic {

struct KMeansOptions {
  int restarts = 10;
  int max_iters = 300;
  double tol = 1e-4;  // relative inertia improvement below which a restart stops
};

struct KMeansResult {
  std::vector<int> labels;
  MatrixD centroids;
  double inertia = 0;
  int best_restart = 0;
  std::vector<double> inertia_history;  // per Lloyd iteration of the best restart
};

namespace detail {

inline double row_distance2(const MatrixD& x, Index r, const MatrixD& c, Index k) {
  return (x.row(r) - c.row(k)).squaredNorm();
}

/// Greedy distance-weighted seeding: each new centre is the best (lowest
/// potential) of 2 + ⌊ln k⌋ candidates drawn proportional to D².
inline MatrixD greedy_seed(const MatrixD& x, int k, std::mt19937_64& rng) {
  const Index n = x.rows();
  MatrixD centers(k, x.cols());
  std::uniform_int_distribution<Index> pick(0, n - 1);
  centers.row(0) = x.row(pick(rng));
  Eigen::VectorXd closest(n);
  for (Index r = 0; r < n; ++r) closest(r) = row_distance2(x, r, centers, 0);
  const int trials = 2 + static_cast<int>(std::log(static_cast<double>(k)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 1; c < k; ++c) {
    const double potential = closest.sum();
    Index best = -1;
    double best_potential = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_closest;
    for (int t = 0; t < trials; ++t) {
      Index cand = n - 1;
      if (potential > 0) {
        double target = unit(rng) * potential, acc = 0;
        for (Index r = 0; r < n; ++r) {
          acc += closest(r);
          if (acc >= target && closest(r) > 0) {
            cand = r;
            break;
          }
        }
      } else {
        cand = pick(rng);
      }
      Eigen::VectorXd trial(n);
      for (Index r = 0; r < n; ++r)
        trial(r) = std::min(closest(r), (x.row(r) - x.row(cand)).squaredNorm());
      const double pot = trial.sum();
      if (pot < best_potential) {
        best_potential = pot;
        best = cand;
        best_closest = std::move(trial);
      }
    }
    centers.row(c) = x.row(best);
    closest = std::move(best_closest);
  }
  return centers;
}

/// Assigns every row to its nearest centre (lowest index on ties); returns inertia.
inline double assign(const MatrixD& x, const MatrixD& centers, std::vector<int>& labels,
                     Eigen::VectorXd& dist) {
  double inertia = 0;
  for (Index r = 0; r < x.rows(); ++r) {
    int best = 0;
    double bd = row_distance2(x, r, centers, 0);
    for (Index c = 1; c < centers.rows(); ++c) {
      const double d = row_distance2(x, r, centers, c);
      if (d < bd) {
        bd = d;
        best = static_cast<int>(c);
      }
    }
    labels[static_cast<std::size_t>(r)] = best;
    dist(r) = bd;
    inertia += bd;
  }
  return inertia;
}

}  // namespace detail

/// Lloyd's algorithm with greedy distance-weighted seeding; returns the
/// restart with the lowest within-cluster sum of squares.
inline KMeansResult kmeans(const MatrixD& x, int k, std::uint64_t seed, const KMeansOptions& opts = {}) {
  if (k < 2) detail::raise<ArgumentError>("kmeans: k must be at least 2, got ", k);
  if (x.rows() < k) detail::raise<ArgumentError>("kmeans: ", x.rows(), " rows cannot form ", k, " clusters");
  if (opts.restarts < 1 || opts.max_iters < 1) detail::raise<ArgumentError>("kmeans: restarts and iterations must be positive");
  if (!x.allFinite()) detail::raise<DataError>("kmeans: input contains non-finite values");
  const Index n = x.rows();
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < opts.restarts; ++restart) {
    std::mt19937_64 rng(detail::mix_seed(seed, static_cast<std::uint64_t>(restart)));
    MatrixD centers = detail::greedy_seed(x, k, rng);
    std::vector<int> labels(static_cast<std::size_t>(n));
    Eigen::VectorXd dist(n);
    std::vector<double> history;
    double inertia = detail::assign(x, centers, labels, dist);
    history.push_back(inertia);
    for (int it = 0; it < opts.max_iters; ++it) {
      MatrixD sums = MatrixD::Zero(k, x.cols());
      std::vector<Index> counts(static_cast<std::size_t>(k), 0);
      for (Index r = 0; r < n; ++r) {
        sums.row(labels[static_cast<std::size_t>(r)]) += x.row(r);
        ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(r)])];
      }
      for (int c = 0; c < k; ++c) {
        if (counts[static_cast<std::size_t>(c)] > 0) {
          centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
          continue;
        }
        // Empty cluster: move its centre onto the point farthest from its own centre.
        Index far = 0;
        for (Index r = 1; r < n; ++r)
          if (dist(r) > dist(far)) far = r;
        centers.row(c) = x.row(far);
        dist(far) = 0;
      }
      const double next = detail::assign(x, centers, labels, dist);
      history.push_back(next);
      const double improvement = inertia - next;
      inertia = next;
      if (improvement <= opts.tol * std::max(inertia, std::numeric_limits<double>::min())) break;
    }
    if (inertia < best.inertia) {
      best.labels = std::move(labels);
      best.centroids = std::move(centers);
      best.inertia = inertia;
      best.best_restart = restart;
      best.inertia_history = std::move(history);
    }
  }
  return best;
}

namespace detail {

/// Maps arbitrary labels onto 0..m-1 in order of first appearance.
inline std::vector<int> compact_labels(const std::vector<int>& y, int& classes) {
  std::map<int, int> ids;
  std::vector<int> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    auto [it, inserted] = ids.try_emplace(y[i], static_cast<int>(ids.size()));
    out[i] = it->second;
  }
  classes = static_cast<int>(ids.size());
  return out;
}

struct Contingency {
  Eigen::MatrixXd table;  // true class x predicted cluster
  Eigen::VectorXd rows, cols;
  double n = 0;
};

inline Contingency contingency(const std::vector<int>& y, const std::vector<int>& y_hat) {
  if (y.size() != y_hat.size())
    raise<ArgumentError>("label sequences differ in length (", y.size(), " vs ", y_hat.size(), ")");
  if (y.empty()) raise<ArgumentError>("label sequences are empty");
  int a = 0, b = 0;
  const auto cy = compact_labels(y, a);
  const auto cp = compact_labels(y_hat, b);
  Contingency c;
  c.table = Eigen::MatrixXd::Zero(a, b);
  for (std::size_t i = 0; i < y.size(); ++i) c.table(cy[i], cp[i]) += 1;
  c.rows = c.table.rowwise().sum();
  c.cols = c.table.colwise().sum().transpose();
  c.n = static_cast<double>(y.size());
  return c;
}

inline double entropy(const Eigen::VectorXd& counts, double n) {
  double h = 0;
  for (Index i = 0; i < counts.size(); ++i)
    if (counts(i) > 0) h -= counts(i) / n * std::log(counts(i) / n);
  return h;
}

}  // namespace detail

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian
/// method with potentials); returns assignment[row] = column.
inline std::vector<int> hungarian(const Eigen::MatrixXd& cost) {
  const Index n = cost.rows();
  if (cost.cols() != n) detail::raise<ArgumentError>("hungarian: cost matrix must be square");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays, p[j] = row matched to column j.
  std::vector<double> u(static_cast<std::size_t>(n + 1)), v(static_cast<std::size_t>(n + 1));
  std::vector<Index> p(static_cast<std::size_t>(n + 1)), way(static_cast<std::size_t>(n + 1));
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        if (used[ju]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[ju];
        if (cur < minv[ju]) {
          minv[ju] = cur;
          way[ju] = j0;
        }
        if (minv[ju] < delta) {
          delta = minv[ju];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        if (used[ju]) {
          u[static_cast<std::size_t>(p[ju])] += delta;
          v[ju] -= delta;
        } else {
          minv[ju] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(static_cast<std::size_t>(n), -1);
  for (Index j = 1; j <= n; ++j)
    if (p[static_cast<std::size_t>(j)] > 0) assignment[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = static_cast<int>(j - 1);
  return assignment;
}

/// Best one-to-one cluster-to-class matching accuracy.
inline double accuracy(const std::vector<int>& y, const std::vector<int>& y_hat) {
  const auto c = detail::contingency(y, y_hat);
  const Index m = std::max(c.table.rows(), c.table.cols());
  Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(m, m);
  padded.topLeftCorner(c.table.rows(), c.table.cols()) = c.table;
  const Eigen::MatrixXd cost = padded.maxCoeff() - padded.array();
  const auto match = hungarian(cost);
  double hits = 0;
  for (Index i = 0; i < m; ++i) hits += padded(i, match[static_cast<std::size_t>(i)]);
  return hits / c.n;
}

enum class NmiNorm { geometric, arithmetic };

inline NmiNorm nmi_norm_from_string(const std::string& s) {
  if (s == "geometric" || s == "sqrt") return NmiNorm::geometric;
  if (s == "arithmetic") return NmiNorm::arithmetic;
  detail::raise<ConfigError>("unknown NMI normalization '", s, "'");
}

inline const char* to_string(NmiNorm n) { return n == NmiNorm::geometric ? "geometric" : "arithmetic"; }

/// I(y; ŷ) normalized by the geometric (default) or arithmetic mean of the
/// two entropies; 1 when both partitions are a single cluster.
inline double nmi(const std::vector<int>& y, const std::vector<int>& y_hat, NmiNorm norm = NmiNorm::geometric) {
  const auto c = detail::contingency(y, y_hat);
  const double hy = detail::entropy(c.rows, c.n);
  const double hp = detail::entropy(c.cols, c.n);
  if (c.table.rows() == 1 && c.table.cols() == 1) return 1.0;
  double mi = 0;
  for (Index i = 0; i < c.table.rows(); ++i)
    for (Index j = 0; j < c.table.cols(); ++j) {
      const double nij = c.table(i, j);
      if (nij > 0) mi += nij / c.n * std::log(c.n * nij / (c.rows(i) * c.cols(j)));
    }
  const double denom = norm == NmiNorm::geometric ? std::sqrt(hy * hp) : 0.5 * (hy + hp);
  if (!(denom > 0)) return 0.0;
  return std::clamp(mi / denom, 0.0, 1.0);
}

/// Adjusted Rand index from pair counts.
inline double ari(const std::vector<int>& y, const std::vector<int>& y_hat) {
  const auto c = detail::contingency(y, y_hat);
  const auto pairs = [](double v) { return v * (v - 1) / 2; };
  double index = 0, sum_a = 0, sum_b = 0;
  for (Index i = 0; i < c.table.rows(); ++i)
    for (Index j = 0; j < c.table.cols(); ++j) index += pairs(c.table(i, j));
  for (Index i = 0; i < c.rows.size(); ++i) sum_a += pairs(c.rows(i));
  for (Index j = 0; j < c.cols.size(); ++j) sum_b += pairs(c.cols(j));
  const double total = pairs(c.n);
  const double expected = total > 0 ? sum_a * sum_b / total : 0.0;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) {
    // Degenerate: both partitions trivial. Equal partitions score 1.
    const bool same = c.table.rows() == c.table.cols() && (c.table.array() > 0).count() == c.table.rows();
    return same ? 1.0 : 0.0;
  }
  return (index - expected) / (max_index - expected);
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace detail

struct ClusteringReport {
  std::string run_id;
  std::string dataset;
  double mr = 0;
  std::uint64_t seed = 0;
  bool aggregate = false;  // mean over seeds; the seed column reads "mean"
  int k = 0;
  double acc = 0;
  double nmi = 0;
  double ari = 0;
  std::string config_hash;

  static std::string csv_header() { return "run_id,dataset,mr,seed,k,acc,nmi,ari"; }

  std::string csv_row() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%g,%s,%d,%.6f,%.6f,%.6f", mr,
                  aggregate ? "mean" : std::to_string(seed).c_str(), k, acc, nmi, ari);
    return detail::csv_field(run_id) + "," + detail::csv_field(dataset) + "," + buf;
  }
};

/// K-means on `z` followed by all three metrics against `y`.
inline ClusteringReport evaluate(const MatrixD& z, const std::vector<int>& y, int k, std::uint64_t seed,
                                 NmiNorm norm = NmiNorm::geometric, const KMeansOptions& opts = {}) {
  if (static_cast<Index>(y.size()) != z.rows())
    detail::raise<ArgumentError>("evaluate: ", z.rows(), " rows but ", y.size(), " labels");
  const auto km = kmeans(z, k, seed, opts);
  ClusteringReport r;
  r.k = k;
  r.seed = seed;
  r.acc = accuracy(y, km.labels);
  r.nmi = nmi(y, km.labels, norm);
  r.ari = ari(y, km.labels);
  return r;
}

}  // namespace cimic
