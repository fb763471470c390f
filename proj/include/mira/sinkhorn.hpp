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

#include "mira/core.hpp"
#include "mira/objective.hpp"
#include "mira/solver.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mira {

/// Equipartition Sinkhorn-Knopp settings (SwAV-style defaults).
struct SinkhornConfig {
  double epsilon = 0.05;
  int max_iters = 1000;
  int ref_iters = 1000;
  double tol = 1e-12;  // early exit on column-sum violation; 0 disables

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon))
      throw ParameterError("epsilon must be > 0");
    if (max_iters < 1) throw ParameterError("max_iters must be >= 1");
    if (ref_iters < max_iters)
      throw ParameterError("ref_iters must be >= max_iters");
    if (!(tol >= 0.0)) throw ParameterError("tol must be >= 0");
  }
};

struct SinkhornResult {
  ProbMatrix assignment;
  int iterations_run = 0;
  std::optional<int> converged_at;
  double column_violation = 0.0;  // max_j |col_sum_j - B/K|
  std::vector<double> step_sse;   // ||M^(n) - M^(n-1)||^2 per iteration
};

/// Smallest probability fed to the log-kernel; softmax outputs can underflow.
inline constexpr double kSinkhornFloor = 1e-30;

namespace detail {

inline double log_sum_exp(const double* x, Index n, Index stride) {
  double m = -std::numeric_limits<double>::infinity();
  for (Index t = 0; t < n; ++t) m = std::max(m, x[t * stride]);
  double s = 0.0;
  for (Index t = 0; t < n; ++t) s += std::exp(x[t * stride] - m);
  return m + std::log(s);
}

/// Log-domain Sinkhorn state: M = exp(L + f 1' + 1 g') with L = log(P)/eps.
/// Keeping potentials in log space lets eps = 0.05 run without the kernel
/// exp(log p / eps) underflowing to zero.
class LogSinkhorn {
 public:
  LogSinkhorn(const RowMatrix& p, double epsilon)
      : rows_(p.rows()), cols_(p.cols()), log_kernel_(p.rows(), p.cols()),
        f_(Vector::Zero(p.rows())), g_(Vector::Zero(p.cols())),
        scratch_(p.rows(), p.cols()) {
    for (Index i = 0; i < rows_; ++i)
      for (Index j = 0; j < cols_; ++j)
        log_kernel_(i, j) = std::log(std::max(p(i, j), kSinkhornFloor)) /
                            epsilon;
  }

  /// Columns to mass B/K, then rows to mass 1.
  void iterate() {
    const double log_col_mass =
        std::log(static_cast<double>(rows_) / static_cast<double>(cols_));
    for (Index i = 0; i < rows_; ++i)
      for (Index j = 0; j < cols_; ++j)
        scratch_(i, j) = log_kernel_(i, j) + f_[i];
    for (Index j = 0; j < cols_; ++j)
      g_[j] = log_col_mass - log_sum_exp(scratch_.data() + j, rows_, cols_);
    for (Index i = 0; i < rows_; ++i) {
      for (Index j = 0; j < cols_; ++j)
        scratch_(i, j) = log_kernel_(i, j) + g_[j];
      f_[i] = -log_sum_exp(scratch_.row(i).data(), cols_, 1);
    }
  }

  RowMatrix assignment() const {
    RowMatrix m(rows_, cols_);
    for (Index i = 0; i < rows_; ++i)
      for (Index j = 0; j < cols_; ++j)
        m(i, j) = std::exp(log_kernel_(i, j) + f_[i] + g_[j]);
    return m;
  }

 private:
  Index rows_, cols_;
  RowMatrix log_kernel_;
  Vector f_, g_;
  RowMatrix scratch_;
};

inline double column_violation(const RowMatrix& m) {
  const double target =
      static_cast<double>(m.rows()) / static_cast<double>(m.cols());
  const Vector sums = column_means(m) * static_cast<double>(m.rows());
  return (sums.array() - target).abs().maxCoeff();
}

inline void require_positive(const RowMatrix& p) {
  for (Index i = 0; i < p.rows(); ++i)
    for (Index j = 0; j < p.cols(); ++j)
      if (!(p(i, j) > 0.0))
        throw SupportError("Sinkhorn-Knopp needs a strictly positive kernel; "
                           "entry (" + std::to_string(i) + "," +
                           std::to_string(j) + ") is zero");
}

}  // namespace detail

/// Replaces entries below `floor` by `floor` and renormalizes rows.
inline ProbMatrix floor_probabilities(const ProbMatrix& p,
                                      double floor = kSinkhornFloor) {
  RowMatrix v = p.values().cwiseMax(floor);
  for (Index i = 0; i < v.rows(); ++i) v.row(i) /= v.row(i).sum();
  return ProbMatrix::trusted(std::move(v));
}

/// Alternating column (to B/K) and row (to 1) scaling of p^(1/eps).
/// The returned matrix is row-stochastic; its column sums approach B/K.
inline SinkhornResult sinkhorn_solve(const ProbMatrix& p,
                                     const SinkhornConfig& cfg) {
  cfg.validate();
  detail::require_positive(p.values());
  detail::LogSinkhorn state(p.values(), cfg.epsilon);
  RowMatrix prev = state.assignment();
  SinkhornResult out{ProbMatrix::trusted(prev), 0, std::nullopt, 0.0, {}};
  for (int n = 1; n <= cfg.max_iters; ++n) {
    state.iterate();
    RowMatrix cur = state.assignment();
    out.step_sse.push_back((cur - prev).squaredNorm());
    out.iterations_run = n;
    prev = std::move(cur);
    if (cfg.tol > 0.0 && detail::column_violation(prev) < cfg.tol) {
      out.converged_at = n;
      break;
    }
  }
  out.column_violation = detail::column_violation(prev);
  out.assignment = ProbMatrix::trusted(std::move(prev));
  return out;
}

// ---------------------------------------------------------------------------
// Convergence comparison
// ---------------------------------------------------------------------------

enum class Method { kMira, kSinkhorn };

inline std::string_view to_string(Method m) {
  return m == Method::kMira ? "mira" : "sinkhorn";
}

/// One iteration of a traced run. The tracked state is the K-vector marginal
/// for MIRA and the full B x K assignment for Sinkhorn-Knopp, so SSE units
/// differ between methods.
struct TraceRecord {
  int iteration = 0;
  double sse_to_reference = 0.0;
  double step_sse = 0.0;
  double objective_total = 0.0;  // MI-regularized objective of the iterate
};

struct TraceOptions {
  double beta = 2.0 / 3.0;  // MIRA trade-off; also used to score iterates
  double epsilon = 0.05;    // Sinkhorn entropic temperature
};

/// Runs `ref_iters` iterations to obtain the converged reference point, and
/// reports SSE of iterates 1..iters against it. For MIRA the traced states
/// are the head of the reference run (the iteration is deterministic).
inline std::vector<TraceRecord> convergence_trace(Method method,
                                                  const ProbMatrix& p,
                                                  int iters, int ref_iters,
                                                  const TraceOptions& opt = {}) {
  if (iters < 1) throw ParameterError("iters must be >= 1");
  if (ref_iters < iters) throw ParameterError("ref_iters must be >= iters");
  std::vector<TraceRecord> records(static_cast<std::size_t>(iters));

  if (method == Method::kMira) {
    SolverConfig cfg;
    cfg.beta = opt.beta;
    cfg.max_iters = ref_iters;
    cfg.validate();
    const RowMatrix k = cfg.beta == 0.0
                            ? p.values()
                            : detail::powered_kernel(p.values(), cfg.beta);
    const auto fp = detail::iterate_marginal(k, cfg, std::nullopt);
    const Vector& ref = fp.marginal.values();
    Vector prev = detail::initial_marginal(k, cfg.beta);
    for (int n = 0; n < iters; ++n) {
      const Vector& u = fp.trace[n];
      auto& r = records[n];
      r.iteration = n + 1;
      r.sse_to_reference = (u - ref).squaredNorm();
      r.step_sse = (u - prev).squaredNorm();
      const auto w = ProbMatrix::trusted(
          cfg.beta == 0.0 ? p.values()
                          : detail::assignment_from_kernel(k, u, cfg.beta));
      r.objective_total = objective(w, p, cfg.beta).total;
      prev = u;
    }
    return records;
  }

  if (!(opt.epsilon > 0.0)) throw ParameterError("epsilon must be > 0");
  const ProbMatrix pf = floor_probabilities(p);
  RowMatrix ref;
  {
    detail::LogSinkhorn reference(pf.values(), opt.epsilon);
    for (int n = 1; n <= ref_iters; ++n) reference.iterate();
    ref = reference.assignment();
  }
  detail::LogSinkhorn state(pf.values(), opt.epsilon);
  RowMatrix prev = state.assignment();
  for (int n = 1; n <= iters; ++n) {
    state.iterate();
    RowMatrix cur = state.assignment();
    auto& r = records[n - 1];
    r.iteration = n;
    r.sse_to_reference = (cur - ref).squaredNorm();
    r.step_sse = (cur - prev).squaredNorm();
    r.objective_total =
        objective(ProbMatrix::trusted(cur), pf, opt.beta).total;
    prev = std::move(cur);
  }
  return records;
}

/// First iteration whose SSE to the reference is below `threshold`.
inline std::optional<int> iterations_to(const std::vector<TraceRecord>& trace,
                                        double threshold) {
  for (const auto& r : trace)
    if (r.sse_to_reference < threshold) return r.iteration;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Collapse behaviour: soft MI regularization vs hard equipartition
// ---------------------------------------------------------------------------

struct MethodSummary {
  double marg_entropy = 0.0;
  double mi_estimate = 0.0;
  double kl_to_model = 0.0;
};

struct BatchComparison {
  MethodSummary model;  // the input P itself
  MethodSummary mira;
  MethodSummary sinkhorn;
  double sinkhorn_column_violation = 0.0;
};

struct CollapseReport {
  std::vector<BatchComparison> batches;
  double mean_kl_mira = 0.0;
  double mean_kl_sinkhorn = 0.0;
};

inline CollapseReport compare_collapse(const std::vector<ProbMatrix>& stream,
                                       double beta, double epsilon,
                                       int mira_iters = 30,
                                       int sinkhorn_iters = 1000) {
  CollapseReport report;
  if (stream.empty()) return report;
  const Index cols = stream.front().cols();
  SolverConfig mcfg;
  mcfg.beta = beta;
  mcfg.max_iters = mira_iters;
  SinkhornConfig scfg;
  scfg.epsilon = epsilon;
  scfg.max_iters = sinkhorn_iters;
  scfg.ref_iters = sinkhorn_iters;

  auto summarize = [](const ProbMatrix& w, const ProbMatrix& model) {
    return MethodSummary{entropy(marginal(w)), mi_estimate(w),
                         kl_term(w, model)};
  };
  for (const auto& p : stream) {
    if (p.cols() != cols)
      throw ParameterError("all batches must share the cluster count");
    const ProbMatrix pf = floor_probabilities(p);
    const auto mira_out = solve(p, mcfg);
    const auto sk_out = sinkhorn_solve(pf, scfg);
    BatchComparison b;
    b.model = summarize(p, p);
    b.mira = summarize(mira_out.assignment, pf);
    b.sinkhorn = summarize(sk_out.assignment, pf);
    b.sinkhorn_column_violation = sk_out.column_violation;
    report.mean_kl_mira += b.mira.kl_to_model;
    report.mean_kl_sinkhorn += b.sinkhorn.kl_to_model;
    report.batches.push_back(b);
  }
  report.mean_kl_mira /= static_cast<double>(stream.size());
  report.mean_kl_sinkhorn /= static_cast<double>(stream.size());
  return report;
}

}  // namespace mira
