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

// Reference solvers for the MI-regularized assignment problem. Nothing here
// calls into solver.hpp or objective.hpp: the objective, its gradient and
// the simplex normalization are re-derived locally so that agreement with
// the fixed-point solver is an independent certificate.

#include "mira/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace mira::oracle {

struct OracleConfig {
  double step_size = 0.0;  // <= 0 selects the default 0.5 * B
  int max_steps = 200000;
  double grad_tol = 1e-13;
  double grid_resolution = 0.1;

  void validate() const {
    if (max_steps < 1) throw ParameterError("max_steps must be >= 1");
    if (!(grad_tol > 0.0)) throw ParameterError("grad_tol must be > 0");
    if (!(grid_resolution > 0.0 && grid_resolution <= 1.0))
      throw ParameterError("grid_resolution must lie in (0, 1]");
  }
};

struct OracleResult {
  ProbMatrix assignment;
  double objective = 0.0;
  int steps = 0;
  bool converged = false;
};

namespace detail {

inline void check_beta(double beta) {
  if (!(beta >= 0.0 && beta < 1.0))
    throw ParameterError("beta must lie in [0,1)");
}

inline double plogp(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

/// Objective in the expanded three-term form, plain left-to-right sums.
inline double value(const RowMatrix& w, const RowMatrix& p, double beta) {
  const Index b = w.rows();
  const Index k = w.cols();
  double linear = 0.0;
  double self = 0.0;
  std::vector<double> col(static_cast<std::size_t>(k), 0.0);
  for (Index i = 0; i < b; ++i) {
    for (Index j = 0; j < k; ++j) {
      const double x = w(i, j);
      if (x > 0.0) {
        if (!(p(i, j) > 0.0)) return std::numeric_limits<double>::infinity();
        linear -= x * std::log(p(i, j));
        self += x * std::log(x);
      }
      col[j] += x;
    }
  }
  double marg = 0.0;
  for (Index j = 0; j < k; ++j) marg += plogp(col[j] / b);
  return linear / b + (1.0 - beta) * self / b + beta * marg;
}

/// Row-wise log-sum-exp normalization of log-weights into probabilities.
inline RowMatrix exp_normalize(const RowMatrix& logw) {
  RowMatrix w(logw.rows(), logw.cols());
  for (Index i = 0; i < logw.rows(); ++i) {
    const double m = logw.row(i).maxCoeff();
    double s = 0.0;
    for (Index j = 0; j < logw.cols(); ++j) {
      w(i, j) = std::exp(logw(i, j) - m);
      s += w(i, j);
    }
    w.row(i) /= s;
  }
  return w;
}

}  // namespace detail

/// Objective value of an arbitrary feasible W (independent evaluation).
inline double objective_value(const ProbMatrix& w, const ProbMatrix& p,
                              double beta) {
  detail::check_beta(beta);
  return detail::value(w.values(), p.values(), beta);
}

/// Gradient of the objective with respect to every w_ij:
///   g_ij = (1/B) [ -log p_ij + (1-beta)(1 + log w_ij) + beta(1 + log wbar_j) ]
/// Requires a strictly interior W and strictly positive P.
inline RowMatrix objective_gradient(const RowMatrix& w, const RowMatrix& p,
                                    double beta) {
  detail::check_beta(beta);
  if (w.rows() != p.rows() || w.cols() != p.cols())
    throw ParameterError("matrix shapes differ");
  if ((w.array() <= 0.0).any())
    throw DomainError("gradient requires a strictly positive assignment");
  if ((p.array() <= 0.0).any())
    throw DomainError("gradient requires strictly positive probabilities");
  const double b = static_cast<double>(w.rows());
  Vector colsum = Vector::Zero(w.cols());
  for (Index i = 0; i < w.rows(); ++i) colsum += w.row(i).transpose();
  RowMatrix g(w.rows(), w.cols());
  for (Index i = 0; i < w.rows(); ++i)
    for (Index j = 0; j < w.cols(); ++j)
      g(i, j) = (-std::log(p(i, j)) + (1.0 - beta) * (1.0 + std::log(w(i, j))) +
                 beta * (1.0 + std::log(colsum[j] / b))) /
                b;
  return g;
}

inline RowMatrix objective_gradient(const ProbMatrix& w, const ProbMatrix& p,
                                    double beta) {
  return objective_gradient(w.values(), p.values(), beta);
}

/// Largest within-row spread of the gradient; zero at a KKT point.
inline double gradient_row_spread(const RowMatrix& g) {
  double spread = 0.0;
  for (Index i = 0; i < g.rows(); ++i)
    spread = std::max(spread, g.row(i).maxCoeff() - g.row(i).minCoeff());
  return spread;
}

/// Multiplicative-weights (mirror) descent on the product of simplices,
/// started at W = P. A step that increases the objective by more than
/// rounding noise is rejected and the step size halved; accepted steps let
/// the step size grow back towards its initial value.
inline OracleResult exp_gradient_solve(const ProbMatrix& p, double beta,
                                       const OracleConfig& cfg = {}) {
  detail::check_beta(beta);
  cfg.validate();
  const RowMatrix& pv = p.values();
  if ((pv.array() <= 0.0).any())
    throw DomainError("exponentiated gradient needs strictly positive P");

  const double eta_max = cfg.step_size > 0.0
                             ? cfg.step_size
                             : 0.5 * static_cast<double>(p.rows());
  const double eta_floor = eta_max * 1e-14;
  double eta = eta_max;
  RowMatrix logw = pv.array().log().matrix();
  RowMatrix w = detail::exp_normalize(logw);
  double f = detail::value(w, pv, beta);

  OracleResult out{ProbMatrix::trusted(w), f, 0, false};
  for (int step = 0; step < cfg.max_steps; ++step) {
    const RowMatrix g = objective_gradient(w, pv, beta);
    out.steps = step;
    if (gradient_row_spread(g) < cfg.grad_tol) {
      out.converged = true;
      break;
    }
    bool accepted = false;
    while (eta > eta_floor) {
      RowMatrix cand_log = w.array().log().matrix() - eta * g;
      RowMatrix cand = detail::exp_normalize(cand_log);
      const double fc = detail::value(cand, pv, beta);
      if (fc <= f + 4.0 * std::numeric_limits<double>::epsilon() *
                        (1.0 + std::abs(f))) {
        w = std::move(cand);
        f = fc;
        accepted = true;
        eta = std::min(eta_max, 2.0 * eta);
        break;
      }
      eta *= 0.5;
    }
    if (!accepted) {
      // No descent direction left at working precision.
      out.converged = gradient_row_spread(g) < 1e3 * cfg.grad_tol;
      break;
    }
  }
  out.assignment = ProbMatrix::trusted(w);
  out.objective = f;
  return out;
}

namespace detail {

/// Golden-section minimization of a unimodal function on [lo, hi].
template <class F>
double golden_section(F&& f, double lo, double hi, double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  // Endpoints are feasible too; the minimum may sit on the boundary.
  double best = 0.5 * (a + b);
  double fbest = f(best);
  for (double x : {lo, hi}) {
    const double fx = f(x);
    if (fx < fbest) {
      best = x;
      fbest = fx;
    }
  }
  return best;
}

}  // namespace detail

/// Exhaustive oracle for K = 2 and B <= 6. Each row is one scalar
/// x_i = w_i1; a coarse grid over [0,1]^B picks the start, then cyclic
/// coordinate golden-section sweeps refine it. Strict convexity makes both
/// stages sound.
inline OracleResult grid_refine_solve(const ProbMatrix& p, double beta,
                                      const OracleConfig& cfg = {}) {
  detail::check_beta(beta);
  cfg.validate();
  if (p.cols() != 2)
    throw UnsupportedSizeError("grid oracle requires K = 2");
  if (p.rows() > 6)
    throw UnsupportedSizeError("grid oracle supports at most 6 rows");

  const Index b = p.rows();
  const RowMatrix& pv = p.values();
  RowMatrix w(b, 2);
  auto set_row = [&](Index i, double x) {
    w(i, 0) = x;
    w(i, 1) = 1.0 - x;
  };

  const int ticks = static_cast<int>(std::floor(1.0 / cfg.grid_resolution));
  std::vector<double> grid;
  for (int t = 0; t <= ticks; ++t) grid.push_back(t * cfg.grid_resolution);
  if (grid.back() < 1.0) grid.push_back(1.0);

  std::vector<std::size_t> idx(static_cast<std::size_t>(b), 0);
  std::vector<std::size_t> best_idx = idx;
  double best = std::numeric_limits<double>::infinity();
  for (;;) {
    for (Index i = 0; i < b; ++i) set_row(i, grid[idx[i]]);
    const double f = detail::value(w, pv, beta);
    if (f < best) {
      best = f;
      best_idx = idx;
    }
    Index pos = 0;
    while (pos < b && ++idx[pos] == grid.size()) idx[pos++] = 0;
    if (pos == b) break;
  }
  for (Index i = 0; i < b; ++i) set_row(i, grid[best_idx[i]]);

  // Near the minimum the objective is flat to ~1e-16, so the coordinates
  // are only resolved to ~1e-8; stop once a full sweep no longer lowers it.
  int sweeps = 0;
  bool converged = false;
  double f_prev = detail::value(w, pv, beta);
  const int max_sweeps = std::min(cfg.max_steps, 100000);
  for (; sweeps < max_sweeps; ++sweeps) {
    for (Index i = 0; i < b; ++i) {
      auto along = [&](double x) {
        set_row(i, x);
        return detail::value(w, pv, beta);
      };
      const double before = w(i, 0);
      const double f_before = along(before);
      const double x = detail::golden_section(along, 0.0, 1.0, 1e-12);
      set_row(i, along(x) <= f_before ? x : before);
    }
    const double f = detail::value(w, pv, beta);
    if (f_prev - f <= 1e-16 * (1.0 + std::abs(f))) {
      converged = true;
      ++sweeps;
      break;
    }
    f_prev = f;
  }
  return OracleResult{ProbMatrix::trusted(w), detail::value(w, pv, beta),
                      sweeps, converged};
}

}  // namespace mira::oracle
