#include "cimic/clustering.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>

using namespace cimic;

namespace {

std::vector<int> random_labels(std::mt19937_64& rng, int n, int k) {
  std::uniform_int_distribution<int> pick(0, k - 1);
  std::vector<int> y(static_cast<std::size_t>(n));
  for (auto& v : y) v = pick(rng);
  return y;
}

/// Max over every bijection of predicted ids onto true ids (padded to a
/// common size) of the fraction of matching rows.
double brute_force_accuracy(const std::vector<int>& y, const std::vector<int>& y_hat) {
  const int m = std::max(*std::max_element(y.begin(), y.end()), *std::max_element(y_hat.begin(), y_hat.end())) + 1;
  std::vector<int> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), 0);
  int best = 0;
  do {
    int hits = 0;
    for (std::size_t i = 0; i < y.size(); ++i) hits += perm[static_cast<std::size_t>(y_hat[i])] == y[i];
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(y.size());
}

/// Mutual information and entropies from joint frequencies.
struct InfoTerms {
  double mi = 0, hy = 0, hp = 0;
};

InfoTerms information(const std::vector<int>& y, const std::vector<int>& y_hat) {
  const double n = static_cast<double>(y.size());
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> py, pp;
  for (std::size_t i = 0; i < y.size(); ++i) {
    joint[{y[i], y_hat[i]}] += 1 / n;
    py[y[i]] += 1 / n;
    pp[y_hat[i]] += 1 / n;
  }
  InfoTerms t;
  for (const auto& [key, p] : joint) t.mi += p * std::log(p / (py[key.first] * pp[key.second]));
  for (const auto& [_, p] : py) t.hy -= p * std::log(p);
  for (const auto& [_, p] : pp) t.hp -= p * std::log(p);
  return t;
}

/// Pair-counting form 2(ad − bc) / ((a+b)(b+d) + (a+c)(c+d)).
double pair_counting_ari(const std::vector<int>& y, const std::vector<int>& y_hat) {
  double a = 0, b = 0, c = 0, d = 0;
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = i + 1; j < y.size(); ++j) {
      const bool same_y = y[i] == y[j], same_p = y_hat[i] == y_hat[j];
      if (same_y && same_p) ++a;
      else if (same_y) ++b;
      else if (same_p) ++c;
      else ++d;
    }
  return 2 * (a * d - b * c) / ((a + b) * (b + d) + (a + c) * (c + d));
}

MatrixD blobs(int per_cluster, int k, double separation, std::uint64_t seed, std::vector<int>* labels) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  MatrixD x(per_cluster * k, 3);
  labels->clear();
  for (int c = 0; c < k; ++c)
    for (int i = 0; i < per_cluster; ++i) {
      const Index r = c * per_cluster + i;
      for (Index j = 0; j < 3; ++j) x(r, j) = n(rng) + (j == c % 3 ? separation * (1 + c / 3) : 0.0);
      labels->push_back(c);
    }
  return x;
}

}  // namespace

// ---------------------------------------------------------------------------
// ACC

TEST(Accuracy, WorkedExamples) {
  EXPECT_DOUBLE_EQ(accuracy({0, 0, 1, 1}, {1, 1, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(accuracy({0, 0, 1, 1}, {0, 1, 0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(accuracy({0, 1, 2}, {0, 0, 0}), 1.0 / 3.0);
}

TEST(Accuracy, EqualsBruteForceOverRelabelings) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 2 + trial % 4;
    const int n = 2 + static_cast<int>(rng() % 11);
    const auto y = random_labels(rng, n, k);
    const auto y_hat = random_labels(rng, n, 2 + static_cast<int>(rng() % 4));
    EXPECT_EQ(accuracy(y, y_hat), brute_force_accuracy(y, y_hat)) << "trial " << trial;
  }
}

TEST(Accuracy, LengthMismatchRejected) {
  EXPECT_THROW(accuracy({0, 1}, {0}), ArgumentError);
  EXPECT_THROW(accuracy({}, {}), ArgumentError);
}

// ---------------------------------------------------------------------------
// NMI and ARI

TEST(NmiAri, CrossPattern) {
  const std::vector<int> y = {0, 0, 1, 1}, y_hat = {0, 1, 0, 1};
  EXPECT_DOUBLE_EQ(ari(y, y_hat), -0.5);
  EXPECT_NEAR(nmi(y, y_hat), 0.0, 1e-15);
}

TEST(NmiAri, IdenticalPartitions) {
  const std::vector<int> y = {0, 0, 1, 2, 2, 2};
  const std::vector<int> renamed = {5, 5, 3, 9, 9, 9};
  EXPECT_NEAR(nmi(y, renamed), 1.0, 1e-12);
  EXPECT_NEAR(ari(y, renamed), 1.0, 1e-12);
}

TEST(NmiAri, MatchDirectFormulas) {
  std::mt19937_64 rng(2);
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 4 + static_cast<int>(rng() % 40);
    const auto y = random_labels(rng, n, 2 + trial % 5);
    const auto y_hat = random_labels(rng, n, 2 + (trial / 5) % 5);
    const auto t = information(y, y_hat);
    if (t.hy == 0 || t.hp == 0) continue;
    EXPECT_NEAR(nmi(y, y_hat, NmiNorm::geometric), std::clamp(t.mi / std::sqrt(t.hy * t.hp), 0.0, 1.0), 1e-12);
    EXPECT_NEAR(nmi(y, y_hat, NmiNorm::arithmetic), std::clamp(t.mi / (0.5 * (t.hy + t.hp)), 0.0, 1.0), 1e-12);
    EXPECT_NEAR(ari(y, y_hat), pair_counting_ari(y, y_hat), 1e-12);
    ++checked;
  }
  EXPECT_GT(checked, 400);
}

TEST(NmiAri, SymmetricAndRelabelInvariant) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto y = random_labels(rng, 30, 4);
    const auto y_hat = random_labels(rng, 30, 3);
    std::vector<int> relabeled(y_hat.size());
    for (std::size_t i = 0; i < y_hat.size(); ++i) relabeled[i] = (y_hat[i] + 1) % 3 + 10;
    EXPECT_NEAR(nmi(y, y_hat), nmi(y_hat, y), 1e-12);
    EXPECT_NEAR(ari(y, y_hat), ari(y_hat, y), 1e-12);
    EXPECT_NEAR(nmi(y, y_hat), nmi(y, relabeled), 1e-12);
    EXPECT_NEAR(ari(y, y_hat), ari(y, relabeled), 1e-12);
    EXPECT_DOUBLE_EQ(accuracy(y, y_hat), accuracy(y, relabeled));
  }
}

TEST(NmiAri, NormalizationNames) {
  EXPECT_EQ(nmi_norm_from_string("geometric"), NmiNorm::geometric);
  EXPECT_EQ(nmi_norm_from_string("arithmetic"), NmiNorm::arithmetic);
  EXPECT_STREQ(to_string(NmiNorm::arithmetic), "arithmetic");
  EXPECT_THROW(nmi_norm_from_string("max"), ConfigError);
}

// ---------------------------------------------------------------------------
// K-means

TEST(KMeans, RecoversSeparatedBlobs) {
  std::vector<int> y;
  const MatrixD x = blobs(40, 4, 12.0, 5, &y);
  const auto km = kmeans(x, 4, 0);
  EXPECT_DOUBLE_EQ(accuracy(y, km.labels), 1.0);
  EXPECT_EQ(km.centroids.rows(), 4);
}

TEST(KMeans, PropertiesOnRandomData) {
  for (int trial = 0; trial < 20; ++trial) {
    MatrixD x = cimic::testing::random_matrix<double>(30, 4, 100 + trial);
    x.row(7) = x.row(3);
    const int k = 2 + trial % 4;
    const auto km = kmeans(x, k, static_cast<std::uint64_t>(trial));
    ASSERT_EQ(km.labels.size(), 30u);
    for (int l : km.labels) {
      EXPECT_GE(l, 0);
      EXPECT_LT(l, k);
    }
    EXPECT_EQ(km.labels[7], km.labels[3]);
    ASSERT_FALSE(km.inertia_history.empty());
    for (std::size_t i = 1; i < km.inertia_history.size(); ++i)
      EXPECT_LE(km.inertia_history[i], km.inertia_history[i - 1] + 1e-9);
    double inertia = 0;
    for (Index r = 0; r < x.rows(); ++r) inertia += (x.row(r) - km.centroids.row(km.labels[static_cast<std::size_t>(r)])).squaredNorm();
    EXPECT_NEAR(km.inertia, inertia, 1e-9 * std::max(1.0, inertia));
  }
}

TEST(KMeans, DeterministicForSeed) {
  const MatrixD x = cimic::testing::random_matrix<double>(50, 3, 9);
  const auto a = kmeans(x, 3, 42), b = kmeans(x, 3, 42);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.inertia, b.inertia);
}

TEST(KMeans, Errors) {
  const MatrixD x = cimic::testing::random_matrix<double>(3, 2, 1);
  EXPECT_THROW(kmeans(x, 4, 0), ArgumentError);
  EXPECT_THROW(kmeans(x, 1, 0), ArgumentError);
  MatrixD bad = x;
  bad(0, 0) = std::nan("");
  EXPECT_THROW(kmeans(bad, 2, 0), DataError);
}

// ---------------------------------------------------------------------------
// evaluate

TEST(Evaluate, PerfectSeparationScoresOne) {
  std::vector<int> y;
  const MatrixD x = blobs(25, 3, 15.0, 6, &y);
  const auto r = evaluate(x, y, 3, 0);
  EXPECT_DOUBLE_EQ(r.acc, 1.0);
  EXPECT_NEAR(r.nmi, 1.0, 1e-12);
  EXPECT_NEAR(r.ari, 1.0, 1e-12);
  EXPECT_EQ(r.k, 3);
}

TEST(Evaluate, DeterministicAndShuffleInvariantOnSeparatedData) {
  std::vector<int> y;
  const MatrixD x = blobs(30, 4, 10.0, 7, &y);
  const auto a = evaluate(x, y, 4, 11), b = evaluate(x, y, 4, 11);
  EXPECT_EQ(a.acc, b.acc);
  EXPECT_EQ(a.nmi, b.nmi);
  EXPECT_EQ(a.ari, b.ari);

  std::vector<Index> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(1);
  std::shuffle(order.begin(), order.end(), rng);
  MatrixD xs(x.rows(), x.cols());
  std::vector<int> ys;
  for (std::size_t i = 0; i < order.size(); ++i) {
    xs.row(static_cast<Index>(i)) = x.row(order[i]);
    ys.push_back(y[static_cast<std::size_t>(order[i])]);
  }
  const auto s = evaluate(xs, ys, 4, 11);
  EXPECT_DOUBLE_EQ(s.acc, a.acc);
  EXPECT_NEAR(s.nmi, a.nmi, 1e-12);
}

TEST(Evaluate, RowLabelMismatch) {
  EXPECT_THROW(evaluate(MatrixD::Zero(4, 2), {0, 1, 0}, 2, 0), ArgumentError);
}

TEST(Report, CsvRow) {
  ClusteringReport r;
  r.run_id = "mr=0.5";
  r.dataset = "a,b";
  r.mr = 0.5;
  r.seed = 3;
  r.k = 4;
  r.acc = 0.9;
  r.nmi = 0.8;
  r.ari = 0.7;
  EXPECT_EQ(r.csv_row(), "mr=0.5,\"a,b\",0.5,3,4,0.900000,0.800000,0.700000");
  r.aggregate = true;
  EXPECT_EQ(r.csv_row(), "mr=0.5,\"a,b\",0.5,mean,4,0.900000,0.800000,0.700000");
  EXPECT_EQ(ClusteringReport::csv_header(), "run_id,dataset,mr,seed,k,acc,nmi,ari");
}
