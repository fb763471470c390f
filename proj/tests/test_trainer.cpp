// Copyright 2026 The MIRA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "mira/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "support.hpp"

namespace mira::trainer {
namespace {

using testing::max_abs_diff;

RowMatrix gaussian(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

ProbMatrix pm(std::initializer_list<std::initializer_list<double>> rows) {
  RowMatrix m(static_cast<Index>(rows.size()),
              static_cast<Index>(rows.begin()->size()));
  Index i = 0;
  for (const auto& r : rows) {
    Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return ProbMatrix::from(m);
}

ToyDataset default_blobs(std::uint64_t seed) {
  return generate_blobs(2048, 4, 2, 0.15, seed);
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

TEST(Blobs, ZeroSpreadCollapsesClusters) {
  const auto ds = generate_blobs(40, 4, 3, 0.0, 1);
  for (Index i = 0; i < ds.size(); ++i)
    EXPECT_EQ(ds.points.row(i), ds.points.row(ds.labels[i]));
}

TEST(Blobs, SeparableNearestNeighbour) {
  const auto ds = generate_blobs(300, 3, 2, 0.1, 1);
  int hits = 0;
  for (Index i = 0; i < ds.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    Index arg = -1;
    for (Index j = 0; j < ds.size(); ++j) {
      if (j == i) continue;
      const double d = (ds.points.row(i) - ds.points.row(j)).squaredNorm();
      if (d < best) best = d, arg = j;
    }
    hits += ds.labels[arg] == ds.labels[i];
  }
  EXPECT_EQ(hits, 300);
}

TEST(Blobs, DeterministicAndCovering) {
  const auto a = generate_blobs(100, 5, 2, 0.2, 9);
  const auto b = generate_blobs(100, 5, 2, 0.2, 9);
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(a.labels, b.labels);
  for (int c = 0; c < 5; ++c)
    EXPECT_NE(std::find(a.labels.begin(), a.labels.end(), c), a.labels.end());
  EXPECT_THROW(generate_blobs(3, 4, 2, 0.1, 0), ParameterError);
  EXPECT_THROW(generate_blobs(10, 1, 2, 0.1, 0), ParameterError);
}

TEST(Augment, ZeroNoiseIsIdentity) {
  Vector x(3);
  x << 1.0, -2.0, 0.5;
  const auto [a, b] = augment(x, 0.0, 4);
  EXPECT_EQ(a, x);
  EXPECT_EQ(b, x);
}

TEST(Augment, SeedsGiveDistinctViews) {
  const Vector x = Vector::Zero(4);
  const auto v1 = augment(x, 0.1, 1);
  const auto v2 = augment(x, 0.1, 2);
  EXPECT_NE(v1.first, v2.first);
  EXPECT_NE(v1.first, v1.second);
  EXPECT_EQ(augment(x, 0.1, 1).first, v1.first);
}

TEST(Augment, NoiseScaleStatistics) {
  // Mean squared displacement is noise^2 * D; its sample mean over n draws
  // has standard deviation noise^2 * sqrt(2 D / n).
  const Index dim = 5;
  const double noise = 0.1;
  const int n = 1000;
  const Vector x = Vector::Constant(dim, 0.3);
  double sum = 0.0;
  for (int t = 0; t < n; ++t) {
    const auto [a, b] = augment(x, noise, static_cast<std::uint64_t>(t));
    sum += (a - x).squaredNorm() + (b - x).squaredNorm();
  }
  const double mean = sum / (2.0 * n);
  const double sigma = noise * noise * std::sqrt(2.0 * dim / (2.0 * n));
  EXPECT_NEAR(mean, noise * noise * dim, 3.0 * sigma);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

TEST(Forward, PrototypeDirectionGivesUnitLogit) {
  EncoderState s;
  s.projection = RowMatrix::Identity(3, 3);
  s.prototypes = RowMatrix::Identity(3, 3) * 2.5;
  s.ema_projection = s.projection;
  s.ema_prototypes = s.prototypes;
  RowMatrix batch = RowMatrix::Identity(3, 3) * 0.7;
  const auto l = forward(s, batch, false);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j)
      EXPECT_NEAR(l.values()(i, j), i == j ? 1.0 : 0.0, 1e-11);
}

TEST(Forward, ScaleInvariantAndBounded) {
  const auto s = init_encoder(4, 3, 5, 2);
  const RowMatrix batch = gaussian(10, 4, 3);
  const auto a = forward(s, batch, false);
  const auto b = forward(s, batch * 37.5, false);
  EXPECT_LE(max_abs_diff(a.values(), b.values()), 1e-12);
  EXPECT_LE(a.values().cwiseAbs().maxCoeff(), 1.0 + 1e-15);
}

TEST(Forward, ZeroEmbeddingIsGuarded) {
  const auto s = init_encoder(2, 2, 3, 1);
  const auto l = forward(s, RowMatrix::Zero(2, 2), true);
  EXPECT_TRUE(l.values().allFinite());
}

TEST(InitEncoder, OrthonormalProjectionAndCopies) {
  const auto s = init_encoder(5, 3, 4, 8);
  const RowMatrix gram = s.projection.transpose() * s.projection;
  EXPECT_LE(max_abs_diff(gram, RowMatrix::Identity(3, 3)), 1e-12);
  EXPECT_EQ(s.projection, s.ema_projection);
  EXPECT_EQ(s.prototypes, s.ema_prototypes);
  EXPECT_THROW(init_encoder(2, 1, 4, 0), ParameterError);
}

TEST(SwappedLoss, PerfectPredictionIsZero) {
  const auto u = pm({{1, 0, 0}, {0, 1, 0}});
  EXPECT_EQ(swapped_loss(u, u, u, u), 0.0);
}

TEST(SwappedLoss, UniformIsTwoLogK) {
  const auto u = ProbMatrix::uniform(3, 5);
  EXPECT_NEAR(swapped_loss(u, u, u, u), 2.0 * std::log(5.0), 1e-14);
}

TEST(SwappedLoss, HighPrecisionReference) {
  const auto w = pm({{0.1, 0.2, 0.7}, {0.5, 0.25, 0.25}, {0.3, 0.3, 0.4}, {0.6, 0.1, 0.3}});
  const auto p = pm({{0.2, 0.3, 0.5}, {0.4, 0.4, 0.2}, {0.1, 0.6, 0.3}, {0.3, 0.3, 0.4}});
  // U1 = W, U2 = P, Q1 = P, Q2 = W: the two terms are H(W, W) and H(P, P).
  EXPECT_NEAR(swapped_loss(w, p, p, w), 1.97495097645949493067, 1e-14);
}

struct GradCase {
  EncoderState state;
  RowMatrix v1, v2;
  ProbMatrix u1, u2;
};

GradCase make_case(Index d_in, Index d_emb, Index k, Index b, std::uint64_t seed) {
  GradCase c{init_encoder(d_in, d_emb, k, seed), gaussian(b, d_in, seed + 1),
             gaussian(b, d_in, seed + 2),
             ProbMatrix::trusted(softmax_rows(gaussian(b, k, seed + 3), 0.5)),
             ProbMatrix::trusted(softmax_rows(gaussian(b, k, seed + 4), 0.5))};
  c.state.projection += 0.3 * gaussian(d_in, d_emb, seed + 5);
  return c;
}

double fd_error(const GradCase& c, double tau_s, double h) {
  const auto g = loss_gradient(c.state, c.v1, c.v2, c.u1, c.u2, tau_s);
  double err = 0.0, scale = 0.0;
  auto check = [&](RowMatrix EncoderState::*field, const RowMatrix& analytic) {
    for (Index t = 0; t < analytic.size(); ++t) {
      EncoderState a = c.state, b = c.state;
      (a.*field).data()[t] += h;
      (b.*field).data()[t] -= h;
      const double fd = (swapped_loss_from_views(a, c.v1, c.v2, c.u1, c.u2, tau_s) -
                         swapped_loss_from_views(b, c.v1, c.v2, c.u1, c.u2, tau_s)) /
                        (2.0 * h);
      err = std::max(err, std::abs(fd - analytic.data()[t]));
      scale = std::max(scale, std::abs(analytic.data()[t]));
    }
  };
  check(&EncoderState::projection, g.projection);
  check(&EncoderState::prototypes, g.prototypes);
  return err / scale;
}

TEST(LossGradient, FiniteDifferencesSmallCase) {
  EXPECT_LT(fd_error(make_case(3, 2, 3, 4, 1), 0.1, 1e-5), 1e-4);
}

TEST(LossGradient, FiniteDifferencesRandomCases) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Index d_in = 2 + static_cast<Index>(s % 4);
    const Index d_emb = 2 + static_cast<Index>(s % 3);
    const Index k = 2 + static_cast<Index>(s % 5);
    const Index b = 1 + static_cast<Index>(s % 7);
    EXPECT_LT(fd_error(make_case(d_in, d_emb, k, b, 100 * s), 0.1, 1e-5), 1e-4)
        << "case " << s;
  }
}

TEST(LossGradient, PrototypeGradientIsTangent) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto c = make_case(4, 3, 5, 6, 7 * s);
    const auto g = loss_gradient(c.state, c.v1, c.v2, c.u1, c.u2, 0.1);
    for (Index k = 0; k < c.state.prototypes.rows(); ++k) {
      const auto row = c.state.prototypes.row(k);
      EXPECT_LT(std::abs(g.prototypes.row(k).dot(row / row.norm())), 1e-8);
    }
  }
}

TEST(LossGradient, TargetsEqualPredictionsGiveZero) {
  auto c = make_case(3, 2, 4, 5, 3);
  const double tau_s = 0.1;
  // View 1 is scored against u2 and view 2 against u1.
  c.u2 = softmax_with_temperature(forward(c.state, c.v1, false), tau_s);
  c.u1 = softmax_with_temperature(forward(c.state, c.v2, false), tau_s);
  const auto g = loss_gradient(c.state, c.v1, c.v2, c.u1, c.u2, tau_s);
  EXPECT_LE(g.projection.cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE(g.prototypes.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(LossGradient, PseudoLabelsAreConstants) {
  auto c = make_case(3, 2, 4, 8, 11);
  c.state.ema_projection = c.state.projection + 0.2 * gaussian(3, 2, 50);
  SolverConfig cfg;
  auto labels = [&](const EncoderState& s) {
    return std::pair{solve_from_logits(forward(s, c.v1, true), cfg).assignment,
                     solve_from_logits(forward(s, c.v2, true), cfg).assignment};
  };
  const auto [u1, u2] = labels(c.state);
  // Labels depend on the EMA weights ...
  EncoderState moved = c.state;
  moved.ema_projection(0, 0) += 0.1;
  EXPECT_GT(max_abs_diff(labels(moved).first.values(), u1.values()), 1e-6);
  // ... but the gradient is that of the loss with the labels held fixed.
  c.u1 = u1;
  c.u2 = u2;
  EXPECT_LT(fd_error(c, 0.1, 1e-5), 1e-4);
  // Online weight changes do not move the labels.
  EncoderState online = c.state;
  online.projection(1, 1) += 0.5;
  EXPECT_EQ(labels(online).first.values(), u1.values());
}

TEST(Schedule, CosineEndpoints) {
  EXPECT_EQ(cosine_schedule(0.7, 2.0 / 3.0, 0, 100), 0.7);
  EXPECT_NEAR(cosine_schedule(0.7, 2.0 / 3.0, 99, 100), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(cosine_schedule(0.0, 1.0, 50, 101), 0.5, 1e-15);
  double prev = 0.0;
  for (long t = 0; t < 50; ++t) {
    const double m = cosine_schedule(0.99, 1.0, t, 50);
    EXPECT_GE(m, prev);
    prev = m;
  }
}

TEST(TrainConfigType, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_DOUBLE_EQ(c.tau_s, 0.1);
  EXPECT_DOUBLE_EQ(c.tau_t, 0.225);
  EXPECT_DOUBLE_EQ(c.beta_start, 0.7);
  EXPECT_DOUBLE_EQ(c.beta_end, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(c.ema_start, 0.99);
  EXPECT_DOUBLE_EQ(c.ema_end, 1.0);
  EXPECT_EQ(c.fp_iters, 30);
  c.beta_end = 0.8;
  EXPECT_THROW(c.validate(), ParameterError);
  c = {};
  c.ema_start = 0.0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = {};
  c.ema_end = 1.01;
  EXPECT_THROW(c.validate(), ParameterError);
  c = {};
  c.beta_start = 1.0;
  EXPECT_THROW(c.validate(), ParameterError);
}

// ---------------------------------------------------------------------------
// Accuracy
// ---------------------------------------------------------------------------

TEST(ClusterAccuracy, PerfectAndPermuted) {
  const std::vector<int> labels = {0, 1, 2, 3, 0, 1, 2, 3};
  RowMatrix onehot = RowMatrix::Zero(8, 4);
  for (Index i = 0; i < 8; ++i) onehot(i, labels[i]) = 1.0;
  EXPECT_EQ(cluster_accuracy(onehot, labels, 4).value, 1.0);
  const auto perm = testing::random_permutation(4, 3);
  EXPECT_EQ(cluster_accuracy(testing::permute_columns(onehot, perm), labels, 4).value,
            1.0);
}

TEST(ClusterAccuracy, UniformAssignmentsGiveOneOverC) {
  const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
  EXPECT_NEAR(cluster_accuracy(RowMatrix::Constant(6, 3, 1.0 / 3), labels, 3).value,
              1.0 / 3.0, 1e-15);
}

TEST(ClusterAccuracy, LargeClassCountNeedsGreedy) {
  std::vector<int> labels(20);
  RowMatrix a = RowMatrix::Zero(20, 10);
  for (int i = 0; i < 20; ++i) labels[i] = i % 10, a(i, (i + 3) % 10) = 1.0;
  EXPECT_THROW(cluster_accuracy(a, labels, 10), UnsupportedSizeError);
  const auto r = cluster_accuracy(a, labels, 10, true);
  EXPECT_FALSE(r.exact);
  EXPECT_EQ(r.value, 1.0);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TEST(Train, DefaultsLearnBlobsWithoutCollapse) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    const auto r = train(default_blobs(seed), cfg);
    ASSERT_EQ(r.history.size(), 50u);
    EXPECT_GE(r.history.back().accuracy, 0.8) << "seed " << seed;
    EXPECT_GE(r.history.back().marg_entropy, 0.5 * std::log(4.0)) << "seed " << seed;
    for (const auto& h : r.history)
      if (h.epoch > 5) {
        EXPECT_GE(h.min_marg_entropy, 0.25 * std::log(4.0));
      }
    EXPECT_TRUE(r.state.all_finite());
  }
}

TEST(Train, SmoothedLossTrendsDown) {
  // The pseudo-labels chase a moving EMA target, so the 5-epoch mean loss
  // can rise briefly while prototypes reorganize. It must fall overall and
  // never rise by more than 10% between consecutive windows.
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.epochs = 30;
    const auto r = train(default_blobs(seed), cfg);
    std::vector<double> smooth;
    for (int e = 5; e <= 30; ++e) {
      double s = 0.0;
      for (int t = e - 5; t < e; ++t) s += r.history[t].loss;
      smooth.push_back(s / 5.0);
    }
    EXPECT_LT(smooth.back(), smooth.front()) << "seed " << seed;
    for (std::size_t t = 1; t < smooth.size(); ++t)
      EXPECT_LE(smooth[t], 1.1 * smooth[t - 1]) << "seed " << seed;
  }
}

TEST(Train, FrozenModelHasConstantLoss) {
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.augment_noise = 0.0;
  cfg.beta_start = cfg.beta_end;
  cfg.epochs = 6;
  const auto r = train(generate_blobs(256, 4, 2, 0.15, 3), cfg);
  for (const auto& h : r.history) EXPECT_EQ(h.loss, r.history.front().loss);
}

TEST(Train, FrozenTargetGivesConstantLabels) {
  TrainConfig cfg;
  cfg.ema_start = cfg.ema_end = 1.0;
  cfg.beta_start = cfg.beta_end;  // labels also depend on beta
  cfg.augment_noise = 0.0;
  cfg.epochs = 4;
  std::map<long, RowMatrix> first;
  const long steps_per_epoch = 256 / cfg.batch_size;
  int compared = 0;
  const auto r = train(generate_blobs(256, 4, 2, 0.15, 5), cfg,
                       [&](const StepInfo& info) {
                         const long slot = info.step % steps_per_epoch;
                         if (info.epoch == 1) {
                           first[slot] = info.labels1->values();
                         } else {
                           EXPECT_EQ(info.labels1->values(), first[slot]);
                           ++compared;
                         }
                       });
  EXPECT_EQ(compared, 3 * steps_per_epoch);
  EXPECT_EQ(r.state.ema_projection, init_encoder(2, 2, 4, std::mt19937_64(cfg.seed)())
                                        .projection);
}

TEST(Train, ScheduleEndpoints) {
  TrainConfig cfg;
  cfg.epochs = 3;
  StepInfo last;
  StepInfo first;
  bool seen = false;
  const auto r = train(generate_blobs(200, 4, 2, 0.15, 1), cfg, [&](const StepInfo& s) {
    if (!seen) first = s, seen = true;
    last = s;
  });
  EXPECT_EQ(first.beta, cfg.beta_start);
  EXPECT_EQ(first.momentum, cfg.ema_start);
  EXPECT_NEAR(last.beta, cfg.beta_end, 1e-12);
  EXPECT_NEAR(last.momentum, cfg.ema_end, 1e-12);
  EXPECT_NEAR(r.final_beta, cfg.beta_end, 1e-12);
  EXPECT_NEAR(r.final_momentum, cfg.ema_end, 1e-12);
}

TEST(Train, Deterministic) {
  TrainConfig cfg;
  cfg.epochs = 5;
  const auto ds = generate_blobs(512, 4, 2, 0.15, 2);
  const auto a = train(ds, cfg);
  const auto b = train(ds, cfg);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    EXPECT_EQ(a.history[e].loss, b.history[e].loss);
    EXPECT_EQ(a.history[e].accuracy, b.history[e].accuracy);
  }
  EXPECT_EQ(a.state.projection, b.state.projection);
}

TEST(Train, DivergenceKeepsHistory) {
  TrainConfig cfg;
  cfg.learning_rate = 1e308;
  cfg.epochs = 3;
  try {
    train(generate_blobs(64, 4, 2, 0.15, 1), cfg);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_LE(e.history().size(), 3u);
  }
}

}  // namespace
}  // namespace mira::trainer
