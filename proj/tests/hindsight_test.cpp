#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "daovfl/hindsight.hpp"
#include "daovfl/session.hpp"
#include "test_util.hpp"

namespace daovfl {
namespace {

StreamConfig regression_stream(std::size_t n0, std::size_t n_new) {
  StreamConfig s;
  s.feature_widths = {3, 2};
  s.num_classes = 0;
  s.initial_samples = n0;
  s.new_samples = n_new;
  s.seed = 5;
  return s;
}

GlobalModel linear_model(const StreamConfig& s, Rng& rng) {
  ModelConfig m;
  m.extractor_hidden = {};
  m.embedding_width = 1;
  m.embedding_activation = Activation::kLinear;
  return make_global_model(s.feature_widths, 1, m, rng);
}

StreamHistory record(Stream& stream, int rounds) {
  StreamHistory h;
  h.record(stream.current());
  for (int t = 1; t < rounds; ++t) h.record(stream.next_round());
  return h;
}

TEST(HindsightTest, UnionWeightsSumToRounds) {
  Stream stream(regression_stream(20, 5));
  const StreamHistory h = record(stream, 12);
  const WeightedDataset u = h.union_dataset();
  EXPECT_EQ(u.size(), h.distinct_samples());
  EXPECT_EQ(h.distinct_samples(), 20u + 11u * 5u);
  EXPECT_NEAR(std::accumulate(u.weights.begin(), u.weights.end(), 0.0), 12.0, 1e-12);
}

TEST(HindsightTest, WeightedUnionEqualsSumOfRoundLosses) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    StreamConfig sc = regression_stream(10 + rng.below(20), 1 + rng.below(8));
    if (seed % 2) sc.regime = Regime::kIncremental;
    if (seed % 3 == 0) sc.num_classes = 3;
    Stream stream(sc);
    const StreamHistory h = record(stream, 2 + static_cast<int>(rng.below(15)));
    ModelConfig mc;
    mc.extractor_hidden = {4};
    const GlobalModel m = make_global_model(sc.feature_widths, sc.regression() ? 1 : 3, mc, rng);
    const Task task = sc.regression() ? Task::kRegression : Task::kClassification;
    const auto per_round = per_round_losses(m, h, task);
    const double total = std::accumulate(per_round.begin(), per_round.end(), 0.0);
    EXPECT_LT(testing::rel_err(weighted_loss(m, h.union_dataset(), task), total), 1e-10) << seed;
  }
}

TEST(HindsightTest, JointGradientMatchesFiniteDifferences) {
  Stream stream(regression_stream(12, 4));
  const StreamHistory h = record(stream, 5);
  const WeightedDataset d = h.union_dataset();
  Rng rng(3);
  ModelConfig mc;
  mc.extractor_hidden = {3};
  GlobalModel m = make_global_model(std::vector<std::size_t>{3, 2}, 1, mc, rng);
  const JointGradient g = joint_gradient(m, d, Task::kRegression);
  const auto head_fd = testing::fd_param_grad(m.head, [&](const DenseNet& net) {
    GlobalModel c = m;
    c.head = net;
    return weighted_loss(c, d, Task::kRegression);
  });
  const auto head_an = g.head.flatten();
  for (std::size_t i = 0; i < head_fd.size(); ++i) EXPECT_LT(testing::rel_err(head_an[i], head_fd[i], 1e-4), 1e-5);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto fd = testing::fd_param_grad(m.features[k], [&](const DenseNet& net) {
      GlobalModel c = m;
      c.features[k] = net;
      return weighted_loss(c, d, Task::kRegression);
    });
    const auto an = g.features[k].flatten();
    for (std::size_t i = 0; i < fd.size(); ++i) EXPECT_LT(testing::rel_err(an[i], fd[i], 1e-4), 1e-5);
  }
}

// Closed-form weighted least squares over [x, 1] via normal equations.
double weighted_lstsq_objective(const WeightedDataset& d) {
  const std::size_t p = d.blocks[0].cols() + d.blocks[1].cols() + 1;
  std::vector<std::vector<double>> a(p, std::vector<double>(p + 1, 0.0));
  std::vector<std::vector<double>> rows;
  for (std::size_t n = 0; n < d.size(); ++n) {
    std::vector<double> x;
    for (const auto& b : d.blocks) x.insert(x.end(), b.row(n).begin(), b.row(n).end());
    x.push_back(1.0);
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j < p; ++j) a[i][j] += d.weights[n] * x[i] * x[j];
      a[i][p] += d.weights[n] * x[i] * d.labels[n];
    }
    rows.push_back(std::move(x));
  }
  for (std::size_t c = 0; c < p; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < p; ++r) {
      if (std::fabs(a[r][c]) > std::fabs(a[piv][c])) piv = r;
    }
    std::swap(a[c], a[piv]);
    for (std::size_t r = 0; r < p; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (std::size_t j = c; j <= p; ++j) a[r][j] -= f * a[c][j];
    }
  }
  double obj = 0.0;
  for (std::size_t n = 0; n < d.size(); ++n) {
    double pred = 0.0;
    for (std::size_t i = 0; i < p; ++i) pred += rows[n][i] * a[i][p] / a[i][i];
    obj += d.weights[n] * (pred - d.labels[n]) * (pred - d.labels[n]);
  }
  return obj;
}

TEST(HindsightTest, LinearComparatorApproachesLeastSquaresOptimum) {
  Stream stream(regression_stream(40, 10));
  const StreamHistory h = record(stream, 20);
  const WeightedDataset d = h.union_dataset();
  Rng rng(8);
  const GlobalModel start = linear_model(stream.config(), rng);
  HindsightConfig cfg;
  cfg.epochs = 3000;
  cfg.lr = 0.05;
  const std::vector<GlobalModel> probes{start};
  const HindsightResult r = hindsight_loss(h, Task::kRegression, probes, cfg);
  // A linear-linear model spans exactly the affine predictors, so the
  // weighted least-squares optimum is the comparator's floor.
  const double optimum = weighted_lstsq_objective(d);
  EXPECT_GE(r.cumulative_loss, optimum - 1e-9);
  EXPECT_LT(r.cumulative_loss - optimum, 1e-3 * optimum + 1e-6);
  EXPECT_EQ(r.source, "fit");
}

TEST(HindsightTest, ComparatorNeverWorseThanCandidates) {
  SessionConfig cfg;
  cfg.horizon = 15;
  cfg.record_history = true;
  Session s(cfg, 6);
  const std::vector<int> e{2, 2, 2, 2};
  for (int t = 0; t < 15; ++t) s.advance(e);
  const auto& iterates = s.engine().iterates();
  ASSERT_EQ(iterates.size(), 15u);
  HindsightConfig hc;
  hc.epochs = 20;
  const HindsightResult r = hindsight_loss(s.history(), Task::kClassification, iterates, hc);
  const WeightedDataset d = s.history().union_dataset();
  for (const auto& m : iterates) EXPECT_LE(r.cumulative_loss, weighted_loss(m, d, Task::kClassification) + 1e-9);
  EXPECT_LE(r.cumulative_loss, weighted_loss(iterates.back().zeroed(), d, Task::kClassification) + 1e-9);
  EXPECT_EQ(r.comparator_losses.size(), 15u);
  // Every round's online loss is what the engine recorded for the iterate.
  const auto online = s.engine().online_losses();
  for (std::size_t t = 0; t < 15; ++t) {
    EXPECT_NEAR(online[t], per_round_losses(iterates[t], s.history(), Task::kClassification)[t], 1e-12);
  }
}

TEST(HindsightTest, EmptyInputsAreRejected) {
  StreamHistory h;
  Rng rng(1);
  const GlobalModel m = linear_model(regression_stream(4, 1), rng);
  const std::vector<GlobalModel> probes{m};
  EXPECT_THROW(hindsight_loss(h, Task::kRegression, probes), ContractError);
  Stream stream(regression_stream(4, 1));
  h.record(stream.current());
  EXPECT_THROW(hindsight_loss(h, Task::kRegression, std::span<const GlobalModel>{}), ContractError);
}

}  // namespace
}  // namespace daovfl
