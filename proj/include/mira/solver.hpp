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

// Mutual-information regularized assignment.
//
// Given model probabilities P (B x K), the pseudo-labels W* minimize
//
//   (1/B) sum_i KL(w_i || p_i) - beta * I(Y_W; B)
//
// over row-stochastic W. The optimum has the closed form
//
//   w*_ij  ∝  wbar_j^(-beta/(1-beta)) * p_ij^(1/(1-beta))
//
// in terms of its own marginal wbar, so only the K-vector wbar has to be
// found. It is the fixed point of
//
//   u_j <- [ (1/B) sum_i k_ij / sum_l u_l^(-beta/(1-beta)) k_il ]^(1-beta)
//
// with k the row-normalized p^(1/(1-beta)). The map is positively
// homogeneous of degree beta, so iterates are renormalized onto the simplex
// after each update; this leaves the sequence of directions (and therefore
// every recovered W) unchanged.

#include "mira/core.hpp"
#include "mira/objective.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace mira {

struct FixedPointResult {
  MarginalVector marginal;
  int iterations_run = 0;
  double final_step_sse = 0.0;
  std::vector<Vector> trace;  // u^(1), ..., u^(N)
};

struct AssignmentResult {
  ProbMatrix assignment;
  MarginalVector marginal;
  int iterations_run = 0;
  double final_step_sse = 0.0;
  double kkt_residual = 0.0;
  ObjectiveBreakdown breakdown;
};

namespace detail {

inline double checked_beta_exponent(double beta) {
  if (!(beta >= 0.0 && beta < 1.0))
    throw ParameterError("beta must lie in [0,1), got " +
                         std::to_string(beta));
  return 1.0 / (1.0 - beta);
}

/// Row-normalized p^(1/(1-beta)), computed as exp(a log p - max). Zero
/// probabilities stay exactly zero.
inline RowMatrix powered_kernel(const RowMatrix& p, double beta) {
  const double a = checked_beta_exponent(beta);
  RowMatrix k(p.rows(), p.cols());
  for (Index i = 0; i < p.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < p.cols(); ++j)
      if (p(i, j) > 0.0) m = std::max(m, a * std::log(p(i, j)));
    if (!std::isfinite(m))
      throw ValidationError("row " + std::to_string(i) + " has no mass");
    for (Index j = 0; j < p.cols(); ++j)
      k(i, j) = p(i, j) > 0.0 ? std::exp(a * std::log(p(i, j)) - m) : 0.0;
    k.row(i) /= pairwise_sum(k.row(i).data(),
                             static_cast<std::size_t>(k.cols()));
  }
  return k;
}

/// Columns that carry any mass. Empty columns are pinned to zero marginal.
inline std::vector<char> active_columns(const RowMatrix& k) {
  std::vector<char> active(static_cast<std::size_t>(k.cols()), 0);
  for (Index i = 0; i < k.rows(); ++i)
    for (Index j = 0; j < k.cols(); ++j)
      if (k(i, j) > 0.0) active[j] = 1;
  return active;
}

/// Column weights u_j^(-beta/(1-beta)), scaled so the largest is 1.
/// Zero marginals on active columns are reported through `degenerate`.
inline Vector column_weights(const Vector& u, double beta,
                             const std::vector<char>& active,
                             Index* degenerate = nullptr) {
  const double e = -beta / (1.0 - beta);
  Vector logw(u.size());
  double m = -std::numeric_limits<double>::infinity();
  for (Index j = 0; j < u.size(); ++j) {
    if (!active[j]) continue;
    if (!(u[j] > 0.0)) {
      if (degenerate) *degenerate = j;
      logw[j] = std::numeric_limits<double>::infinity();
      m = logw[j];
      continue;
    }
    logw[j] = e * std::log(u[j]);
    m = std::max(m, logw[j]);
  }
  Vector w(u.size());
  for (Index j = 0; j < u.size(); ++j) {
    if (!active[j]) {
      w[j] = 0.0;
    } else if (std::isinf(m)) {
      w[j] = std::isinf(logw[j]) ? 1.0 : 0.0;
    } else {
      w[j] = std::exp(logw[j] - m);
    }
  }
  return w;
}

inline void normalize_in_place(Vector& u) {
  u /= pairwise_sum(u);
}

/// One fixed-point update, renormalized onto the simplex.
inline Vector fixed_point_step(const RowMatrix& k, const Vector& u,
                               double beta, const std::vector<char>& active) {
  const Index rows = k.rows();
  const Index cols = k.cols();
  const Vector v = column_weights(u, beta, active);
  Vector inv_z(rows);
  for (Index i = 0; i < rows; ++i) {
    const double* row = k.row(i).data();
    double z = 0.0;
    for (Index j = 0; j < cols; ++j) z += v[j] * row[j];
    inv_z[i] = 1.0 / z;
  }
  Vector s(cols);
  pairwise_column_sums(0, rows, std::span<double>(s.data(), s.size()),
                       [&](Index i, std::span<double> acc) {
                         const double* row = k.row(i).data();
                         const double scale = inv_z[i];
                         for (std::size_t j = 0; j < acc.size(); ++j)
                           acc[j] += row[j] * scale;
                       });
  s /= static_cast<double>(rows);
  Vector next(cols);
  for (Index j = 0; j < cols; ++j)
    next[j] = active[j] && s[j] > 0.0 ? std::exp((1.0 - beta) * std::log(s[j]))
                                      : 0.0;
  normalize_in_place(next);
  return next;
}

/// Starting point [(1/B) sum_i k_ij]^(1-beta), renormalized.
inline Vector initial_marginal(const RowMatrix& k, double beta) {
  Vector u = column_means(k);
  for (Index j = 0; j < u.size(); ++j)
    u[j] = u[j] > 0.0 ? std::exp((1.0 - beta) * std::log(u[j])) : 0.0;
  normalize_in_place(u);
  return u;
}

inline FixedPointResult iterate_marginal(const RowMatrix& k,
                                         const SolverConfig& cfg,
                                         const std::optional<Vector>& init) {
  const auto active = active_columns(k);
  Vector u;
  if (init) {
    if (init->size() != k.cols())
      throw ParameterError("initial marginal has the wrong length");
    u = *init;
    for (Index j = 0; j < u.size(); ++j) {
      if (!active[j]) u[j] = 0.0;
      else if (!(u[j] > 0.0))
        throw ParameterError("initial marginal must be strictly positive");
    }
    normalize_in_place(u);
  } else {
    u = initial_marginal(k, cfg.beta);
  }

  FixedPointResult out{MarginalVector::trusted(u), 0, 0.0, {}};
  out.trace.reserve(static_cast<std::size_t>(cfg.max_iters));
  for (int n = 0; n < cfg.max_iters; ++n) {
    Vector next = fixed_point_step(k, u, cfg.beta, active);
    out.final_step_sse = (next - u).squaredNorm();
    u = std::move(next);
    out.trace.push_back(u);
    out.iterations_run = n + 1;
    if (cfg.tol > 0.0 && out.final_step_sse < cfg.tol) break;
  }
  out.marginal = MarginalVector::trusted(u);
  return out;
}

/// w_ij ∝ weight_j * k_ij with weight_j = marginal_j^(-beta/(1-beta)).
inline RowMatrix assignment_from_kernel(const RowMatrix& k,
                                        const Vector& marginal, double beta) {
  const auto active = active_columns(k);
  Index degenerate = -1;
  const Vector v = column_weights(marginal, beta, active, &degenerate);
  if (degenerate >= 0)
    throw DegenerateMarginalError(
        "marginal entry " + std::to_string(degenerate) +
        " is zero but the column carries probability mass");
  RowMatrix w(k.rows(), k.cols());
  for (Index i = 0; i < k.rows(); ++i) {
    for (Index j = 0; j < k.cols(); ++j) w(i, j) = v[j] * k(i, j);
    w.row(i) /= pairwise_sum(w.row(i).data(),
                             static_cast<std::size_t>(w.cols()));
  }
  return w;
}

inline FixedPointResult fixed_point_from_p(const ProbMatrix& p,
                                           const SolverConfig& cfg,
                                           const std::optional<Vector>& init) {
  cfg.validate();
  if (cfg.beta == 0.0) return iterate_marginal(p.values(), cfg, init);
  return iterate_marginal(powered_kernel(p.values(), cfg.beta), cfg, init);
}

}  // namespace detail

/// Iterates the marginal fixed-point map from the default start (or `init`)
/// and returns the last iterate together with the full trace.
inline FixedPointResult fixed_point_solve(
    const ProbMatrix& p, const SolverConfig& cfg,
    const std::optional<Vector>& init = std::nullopt) {
  return detail::fixed_point_from_p(p, cfg, init);
}

/// Closed-form optimal assignment for a given marginal.
inline ProbMatrix recover_assignment(const ProbMatrix& p,
                                     const MarginalVector& marginal,
                                     double beta) {
  detail::checked_beta_exponent(beta);
  if (marginal.size() != p.cols())
    throw ParameterError("marginal length does not match column count");
  if (beta == 0.0) return p;
  return ProbMatrix::trusted(detail::assignment_from_kernel(
      detail::powered_kernel(p.values(), beta), marginal.values(), beta));
}

/// Largest entrywise violation of the optimality condition, evaluated at
/// W's own column means. Zero exactly at the optimum.
inline double kkt_residual(const ProbMatrix& w, const ProbMatrix& p,
                           double beta) {
  detail::checked_beta_exponent(beta);
  if (w.rows() != p.rows() || w.cols() != p.cols())
    throw ParameterError("matrix shapes differ");
  if (beta == 0.0) return (w.values() - p.values()).cwiseAbs().maxCoeff();

  const RowMatrix k = detail::powered_kernel(p.values(), beta);
  const auto active = detail::active_columns(k);
  // A vanishing marginal on a live column puts the whole right-hand side on
  // that column; column_weights encodes this as an infinite weight.
  const Vector v = detail::column_weights(column_means(w.values()), beta,
                                          active);
  double residual = 0.0;
  Vector row(k.cols());
  for (Index i = 0; i < k.rows(); ++i) {
    for (Index j = 0; j < k.cols(); ++j) row[j] = v[j] * k(i, j);
    double z = pairwise_sum(row);
    if (!(z > 0.0)) {
      // Only the degenerate columns could carry this row's mass.
      for (Index j = 0; j < k.cols(); ++j) row[j] = k(i, j);
      z = pairwise_sum(row);
    }
    for (Index j = 0; j < k.cols(); ++j)
      residual = std::max(residual, std::abs(w(i, j) - row[j] / z));
  }
  return residual;
}

namespace detail {

inline AssignmentResult finish(const ProbMatrix& p, RowMatrix w, double beta,
                               int iterations, double step_sse) {
  auto assignment = ProbMatrix::trusted(std::move(w));
  auto wbar = marginal(assignment);
  const double residual = kkt_residual(assignment, p, beta);
  auto breakdown = objective(assignment, p, beta);
  return AssignmentResult{std::move(assignment), std::move(wbar), iterations,
                          step_sse, residual, breakdown};
}

}  // namespace detail

/// Full pseudo-labeling step: fixed-point marginal, closed-form assignment,
/// and diagnostics evaluated on the returned assignment.
inline AssignmentResult solve(const ProbMatrix& p, const SolverConfig& cfg) {
  cfg.validate();
  if (cfg.beta == 0.0) return detail::finish(p, p.values(), 0.0, 0, 0.0);
  const RowMatrix k = detail::powered_kernel(p.values(), cfg.beta);
  auto fp = detail::iterate_marginal(k, cfg, std::nullopt);
  RowMatrix w =
      detail::assignment_from_kernel(k, fp.marginal.values(), cfg.beta);
  return detail::finish(p, std::move(w), cfg.beta, fp.iterations_run,
                        fp.final_step_sse);
}

inline constexpr double kPathAgreementTol = 1e-10;

/// Pseudo-labels straight from logits. Computes the assignment twice: via
/// softmax(logits / tau_t) followed by solve, and via the fused kernel
/// softmax(logits / tau_t / (1 - beta)). Throws if the two disagree.
inline AssignmentResult solve_from_logits(const LogitMatrix& logits,
                                          const SolverConfig& cfg) {
  cfg.validate();
  const ProbMatrix p = softmax_with_temperature(logits, cfg.tau_t);
  AssignmentResult two_stage = solve(p, cfg);

  const RowMatrix fused_kernel =
      softmax_rows(logits.values(), cfg.tau_t * (1.0 - cfg.beta));
  RowMatrix fused;
  if (cfg.beta == 0.0) {
    fused = fused_kernel;
  } else {
    auto fp = detail::iterate_marginal(fused_kernel, cfg, std::nullopt);
    fused = detail::assignment_from_kernel(fused_kernel, fp.marginal.values(),
                                           cfg.beta);
  }
  const double gap =
      (fused - two_stage.assignment.values()).cwiseAbs().maxCoeff();
  if (!(gap <= kPathAgreementTol))
    throw Error("fused and two-stage assignment paths disagree by " +
                std::to_string(gap));
  return two_stage;
}

}  // namespace mira
