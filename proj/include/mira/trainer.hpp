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

#pragma once

// Desk-scale clustering-based representation learning.
//
// The network is a linear projection followed by row L2 normalization,
// scored against L2-normalized prototype rows (cosine logits). Each step
// draws two noisy views of a batch, pseudo-labels each view with the
// MI-regularized assignment computed on the EMA network's logits, and takes
// a gradient step on the swapped prediction loss.

#include "mira/core.hpp"
#include "mira/objective.hpp"
#include "mira/solver.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace mira::trainer {

inline constexpr double kNormGuard = 1e-12;

struct ToyDataset {
  RowMatrix points;         // N x D
  std::vector<int> labels;  // N entries in [0, C)
  int num_clusters = 0;

  Index size() const { return points.rows(); }
  Index dim() const { return points.cols(); }
};

/// C isotropic Gaussian blobs. Means sit on the unit circle spanned by the
/// first two coordinates (D = 1 uses the points +-1, ...). Labels are
/// assigned round-robin so every cluster is populated.
inline ToyDataset generate_blobs(Index n, int clusters, Index dim,
                                 double spread, std::uint64_t seed) {
  if (clusters < 2 || n < clusters)
    throw ParameterError("generate_blobs needs N >= C >= 2");
  if (dim < 1) throw ParameterError("dimension must be >= 1");
  if (!(spread >= 0.0)) throw ParameterError("spread must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  RowMatrix means = RowMatrix::Zero(clusters, dim);
  for (int c = 0; c < clusters; ++c) {
    const double angle = 2.0 * std::numbers::pi * c / clusters;
    if (dim == 1) {
      means(c, 0) = static_cast<double>(c) - 0.5 * (clusters - 1);
    } else {
      means(c, 0) = std::cos(angle);
      means(c, 1) = std::sin(angle);
    }
  }
  ToyDataset ds;
  ds.num_clusters = clusters;
  ds.points.resize(n, dim);
  ds.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % clusters);
    ds.labels[i] = c;
    for (Index d = 0; d < dim; ++d)
      ds.points(i, d) = means(c, d) + spread * normal(rng);
  }
  return ds;
}

/// Two independent Gaussian perturbations x + noise * xi.
inline std::pair<Vector, Vector> augment(const Vector& x, double noise,
                                         std::uint64_t seed) {
  if (!(noise >= 0.0)) throw ParameterError("noise must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector a = x, b = x;
  for (Index d = 0; d < x.size(); ++d) a[d] += noise * normal(rng);
  for (Index d = 0; d < x.size(); ++d) b[d] += noise * normal(rng);
  return {std::move(a), std::move(b)};
}

struct EncoderState {
  RowMatrix projection;      // D x d
  RowMatrix prototypes;      // K x d, used through row normalization
  RowMatrix ema_projection;  // shadow copies
  RowMatrix ema_prototypes;

  bool all_finite() const {
    return projection.allFinite() && prototypes.allFinite() &&
           ema_projection.allFinite() && ema_prototypes.allFinite();
  }
};

inline EncoderState init_encoder(Index input_dim, Index embed_dim,
                                 Index num_prototypes, std::uint64_t seed) {
  if (embed_dim < 2 || num_prototypes < 2)
    throw ParameterError("embedding dim and prototype count must be >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  EncoderState s;
  s.projection.resize(input_dim, embed_dim);
  s.prototypes.resize(num_prototypes, embed_dim);
  // Semi-orthogonal projection: QR of a Gaussian matrix, sign-fixed.
  const Index tall = std::max(input_dim, embed_dim);
  const Index narrow = std::min(input_dim, embed_dim);
  Eigen::MatrixXd g(tall, narrow);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall, narrow);
  for (Index c = 0; c < narrow; ++c)
    if (qr.matrixQR()(c, c) < 0.0) q.col(c) *= -1.0;
  if (input_dim >= embed_dim) s.projection = q;
  else s.projection = q.transpose();
  for (Index i = 0; i < s.prototypes.size(); ++i)
    s.prototypes.data()[i] = normal(rng);
  s.ema_projection = s.projection;
  s.ema_prototypes = s.prototypes;
  return s;
}

namespace detail {

inline RowMatrix normalize_rows(const RowMatrix& m) {
  RowMatrix out = m;
  for (Index i = 0; i < m.rows(); ++i)
    out.row(i) /= m.row(i).norm() + kNormGuard;
  return out;
}

/// Back-propagates d/dz through z = h / (|h| + guard), row by row.
inline RowMatrix normalize_rows_backward(const RowMatrix& h,
                                         const RowMatrix& dz) {
  RowMatrix dh(h.rows(), h.cols());
  for (Index i = 0; i < h.rows(); ++i) {
    const double r = h.row(i).norm();
    const double rg = r + kNormGuard;
    dh.row(i) = dz.row(i) / rg;
    if (r > 0.0)
      dh.row(i) -= h.row(i) * (h.row(i).dot(dz.row(i)) / (r * rg * rg));
  }
  return dh;
}

inline RowMatrix cosine_logits(const RowMatrix& projection,
                               const RowMatrix& prototypes,
                               const RowMatrix& batch) {
  return normalize_rows(batch * projection) *
         normalize_rows(prototypes).transpose();
}

}  // namespace detail

/// Cosine-similarity logits of a batch against the prototypes, using the
/// online weights or the EMA shadow weights.
inline LogitMatrix forward(const EncoderState& state, const RowMatrix& batch,
                           bool use_ema) {
  const RowMatrix& proj = use_ema ? state.ema_projection : state.projection;
  const RowMatrix& protos = use_ema ? state.ema_prototypes : state.prototypes;
  return LogitMatrix::from(detail::cosine_logits(proj, protos, batch));
}

/// Swapped prediction loss: each view's predictions are scored against the
/// other view's pseudo-labels,
///   L = -(1/B) sum u1 log q2 - (1/B) sum u2 log q1.
inline double swapped_loss(const ProbMatrix& u1, const ProbMatrix& u2,
                           const ProbMatrix& q1, const ProbMatrix& q2) {
  auto cross_entropy = [](const ProbMatrix& u, const ProbMatrix& q) {
    if (u.rows() != q.rows() || u.cols() != q.cols())
      throw ParameterError("target and prediction shapes differ");
    std::vector<double> rows(static_cast<std::size_t>(u.rows()));
    for (Index i = 0; i < u.rows(); ++i) {
      double s = 0.0;
      for (Index j = 0; j < u.cols(); ++j)
        if (u(i, j) > 0.0) s -= u(i, j) * std::log(q(i, j));
      rows[i] = s;
    }
    return pairwise_sum(rows) / static_cast<double>(u.rows());
  };
  return cross_entropy(u1, q2) + cross_entropy(u2, q1);
}

struct EncoderGradient {
  RowMatrix projection;
  RowMatrix prototypes;
};

/// Swapped loss evaluated from raw views with the online weights.
inline double swapped_loss_from_views(const EncoderState& state,
                                      const RowMatrix& view1,
                                      const RowMatrix& view2,
                                      const ProbMatrix& u1,
                                      const ProbMatrix& u2, double tau_s) {
  const auto q1 = softmax_with_temperature(forward(state, view1, false), tau_s);
  const auto q2 = softmax_with_temperature(forward(state, view2, false), tau_s);
  return swapped_loss(u1, u2, q1, q2);
}

/// Analytic gradient of the swapped loss with respect to the online weights.
/// Pseudo-labels are constants (no gradient flows into them).
inline EncoderGradient loss_gradient(const EncoderState& state,
                                     const RowMatrix& view1,
                                     const RowMatrix& view2,
                                     const ProbMatrix& u1,
                                     const ProbMatrix& u2, double tau_s) {
  if (!(tau_s > 0.0)) throw ParameterError("tau_s must be > 0");
  const RowMatrix protos = detail::normalize_rows(state.prototypes);
  EncoderGradient grad{RowMatrix::Zero(state.projection.rows(),
                                       state.projection.cols()),
                       RowMatrix::Zero(state.prototypes.rows(),
                                       state.prototypes.cols())};
  RowMatrix d_protos = RowMatrix::Zero(protos.rows(), protos.cols());

  // View m is predicted against the other view's labels.
  auto accumulate = [&](const RowMatrix& view, const ProbMatrix& target) {
    const RowMatrix h = view * state.projection;
    const RowMatrix z = detail::normalize_rows(h);
    const RowMatrix logits = z * protos.transpose();
    const RowMatrix q = softmax_rows(logits, tau_s);
    const RowMatrix g = (q - target.values()) /
                        (static_cast<double>(view.rows()) * tau_s);
    const RowMatrix dz = g * protos;
    d_protos += g.transpose() * z;
    grad.projection +=
        view.transpose() * detail::normalize_rows_backward(h, dz);
  };
  accumulate(view1, u2);
  accumulate(view2, u1);
  grad.prototypes = detail::normalize_rows_backward(state.prototypes, d_protos);
  return grad;
}

/// Cosine interpolation from `start` (step 0) to `end` (step total - 1).
inline double cosine_schedule(double start, double end, long step,
                              long total_steps) {
  if (total_steps <= 1) return end;
  const double t = static_cast<double>(step) /
                   static_cast<double>(total_steps - 1);
  return end + (start - end) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

struct TrainConfig {
  double tau_s = 0.1;
  double tau_t = 0.225;
  double beta_start = 0.7;
  double beta_end = 2.0 / 3.0;
  double ema_start = 0.99;
  double ema_end = 1.0;
  double learning_rate = 2.0;
  int epochs = 50;
  int batch_size = 16;
  int fp_iters = 30;
  double augment_noise = 0.05;
  Index embed_dim = 2;
  Index num_prototypes = 4;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(tau_s > 0.0) || !(tau_t > 0.0))
      throw ParameterError("temperatures must be > 0");
    if (!(0.0 <= beta_end && beta_end <= beta_start && beta_start < 1.0))
      throw ParameterError("need 0 <= beta_end <= beta_start < 1");
    if (!(0.0 < ema_start && ema_start <= ema_end && ema_end <= 1.0))
      throw ParameterError("need 0 < ema_start <= ema_end <= 1");
    if (!(learning_rate >= 0.0))
      throw ParameterError("learning_rate must be >= 0");
    if (epochs < 1 || batch_size < 1 || fp_iters < 1)
      throw ParameterError("epochs, batch_size and fp_iters must be >= 1");
    if (!(augment_noise >= 0.0))
      throw ParameterError("augment_noise must be >= 0");
    if (embed_dim < 2 || num_prototypes < 2)
      throw ParameterError("embed_dim and num_prototypes must be >= 2");
  }
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double marg_entropy = 0.0;      // mean over batches and views
  double min_marg_entropy = 0.0;  // smallest batch value in the epoch
  double mi = 0.0;
  double accuracy = 0.0;
};

/// Observation hook, called once per optimization step.
struct StepInfo {
  int epoch = 0;
  long step = 0;
  double beta = 0.0;
  double momentum = 0.0;
  double loss = 0.0;
  const ProbMatrix* labels1 = nullptr;
  const ProbMatrix* labels2 = nullptr;
};
using StepObserver = std::function<void(const StepInfo&)>;

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::vector<EpochRecord> history)
      : Error(what), history_(std::move(history)) {}
  const std::vector<EpochRecord>& history() const { return history_; }

 private:
  std::vector<EpochRecord> history_;
};

struct AccuracyResult {
  double value = 0.0;
  bool exact = true;
};

/// Accuracy of argmax assignments under the best one-to-one matching of
/// clusters to labels. Exhaustive over permutations up to 8 classes; above
/// that a greedy matching is used when allowed and the result is flagged.
inline AccuracyResult cluster_accuracy(const RowMatrix& assignments,
                                       const std::vector<int>& labels,
                                       int num_classes,
                                       bool allow_greedy = false) {
  if (static_cast<std::size_t>(assignments.rows()) != labels.size())
    throw ParameterError("one label per assignment row is required");
  const int size = std::max<int>(num_classes, assignments.cols());
  if (size > 8 && !allow_greedy)
    throw UnsupportedSizeError("exact matching supports at most 8 classes");

  std::vector<std::vector<long>> table(size, std::vector<long>(size, 0));
  for (Index i = 0; i < assignments.rows(); ++i) {
    Index cluster = 0;
    assignments.row(i).maxCoeff(&cluster);  // first maximum on ties
    const int label = labels[i];
    if (label < 0 || label >= num_classes)
      throw ParameterError("label out of range");
    ++table[cluster][label];
  }
  const double n = static_cast<double>(labels.size());

  if (size <= 8) {
    std::vector<int> perm(size);
    std::iota(perm.begin(), perm.end(), 0);
    long best = 0;
    do {
      long hits = 0;
      for (int c = 0; c < size; ++c) hits += table[c][perm[c]];
      best = std::max(best, hits);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return {static_cast<double>(best) / n, true};
  }

  std::vector<char> used_cluster(size, 0), used_label(size, 0);
  long hits = 0;
  for (int round = 0; round < size; ++round) {
    long best = -1;
    int bc = 0, bl = 0;
    for (int c = 0; c < size; ++c)
      for (int l = 0; l < size; ++l)
        if (!used_cluster[c] && !used_label[l] && table[c][l] > best) {
          best = table[c][l];
          bc = c;
          bl = l;
        }
    used_cluster[bc] = used_label[bl] = 1;
    hits += best;
  }
  return {static_cast<double>(hits) / n, false};
}

struct TrainResult {
  EncoderState state;
  std::vector<EpochRecord> history;
  double final_beta = 0.0;
  double final_momentum = 0.0;
};

/// Full-dataset accuracy of the online network's predictions.
inline double evaluate_accuracy(const EncoderState& state,
                                const ToyDataset& data) {
  const auto logits = forward(state, data.points, false);
  return cluster_accuracy(logits.values(), data.labels, data.num_clusters,
                          true)
      .value;
}

inline TrainResult train(const ToyDataset& data, const TrainConfig& cfg,
                         const StepObserver& observer = {}) {
  cfg.validate();
  const Index n = data.size();
  const Index batch = std::min<Index>(cfg.batch_size, n);
  const long steps_per_epoch = static_cast<long>((n + batch - 1) / batch);
  const long total_steps = steps_per_epoch * cfg.epochs;

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  TrainResult out;
  out.state = init_encoder(data.dim(), cfg.embed_dim, cfg.num_prototypes,
                           rng());

  // One fixed shuffle: batch composition is identical across epochs, so the
  // only per-epoch randomness is the view noise.
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);

  SolverConfig scfg;
  scfg.tau_t = cfg.tau_t;
  scfg.max_iters = cfg.fp_iters;

  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.min_marg_entropy = std::numeric_limits<double>::infinity();
    int label_sets = 0;
    for (long b = 0; b < steps_per_epoch; ++b, ++step) {
      const Index begin = b * batch;
      const Index rows = std::min<Index>(batch, n - begin);
      RowMatrix x(rows, data.dim());
      for (Index r = 0; r < rows; ++r)
        x.row(r) = data.points.row(order[begin + r]);
      RowMatrix v1 = x, v2 = x;
      for (Index t = 0; t < v1.size(); ++t)
        v1.data()[t] += cfg.augment_noise * normal(rng);
      for (Index t = 0; t < v2.size(); ++t)
        v2.data()[t] += cfg.augment_noise * normal(rng);

      scfg.beta =
          cosine_schedule(cfg.beta_start, cfg.beta_end, step, total_steps);
      const double momentum =
          cosine_schedule(cfg.ema_start, cfg.ema_end, step, total_steps);

      // Pseudo-labels from the EMA network, treated as constants.
      const auto lab1 = solve_from_logits(forward(out.state, v1, true), scfg);
      const auto lab2 = solve_from_logits(forward(out.state, v2, true), scfg);
      const ProbMatrix& u1 = lab1.assignment;
      const ProbMatrix& u2 = lab2.assignment;

      const double loss =
          swapped_loss_from_views(out.state, v1, v2, u1, u2, cfg.tau_s);
      if (!std::isfinite(loss)) {
        throw DivergenceError("non-finite loss at epoch " +
                                  std::to_string(epoch) + ", step " +
                                  std::to_string(step),
                              out.history);
      }
      const auto grad = loss_gradient(out.state, v1, v2, u1, u2, cfg.tau_s);
      auto& s = out.state;
      s.projection -= cfg.learning_rate * grad.projection;
      s.prototypes -= cfg.learning_rate * grad.prototypes;
      // m * ema + (1 - m) * online, written so equal weights stay equal.
      s.ema_projection += (1.0 - momentum) * (s.projection - s.ema_projection);
      s.ema_prototypes += (1.0 - momentum) * (s.prototypes - s.ema_prototypes);
      if (!s.all_finite())
        throw DivergenceError("non-finite weights at epoch " +
                                  std::to_string(epoch),
                              out.history);

      rec.loss += loss;
      for (const auto* lab : {&lab1, &lab2}) {
        rec.marg_entropy += lab->breakdown.marg_entropy;
        rec.mi += lab->breakdown.mi_estimate;
        rec.min_marg_entropy =
            std::min(rec.min_marg_entropy, lab->breakdown.marg_entropy);
        ++label_sets;
      }
      out.final_beta = scfg.beta;
      out.final_momentum = momentum;
      if (observer)
        observer(StepInfo{epoch, step, scfg.beta, momentum, loss, &u1, &u2});
    }
    rec.loss /= static_cast<double>(steps_per_epoch);
    rec.marg_entropy /= label_sets;
    rec.mi /= label_sets;
    rec.accuracy = evaluate_accuracy(out.state, data);
    out.history.push_back(rec);
  }
  return out;
}

}  // namespace mira::trainer
