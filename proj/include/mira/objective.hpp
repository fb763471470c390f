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

#include <cmath>
#include <vector>

namespace mira {

/// Terms of the MI-regularized assignment objective, all in nats.
struct ObjectiveBreakdown {
  double kl_term = 0.0;       // (1/B) sum_i KL(w_i || p_i)
  double cond_entropy = 0.0;  // H(Y|B): mean row entropy
  double marg_entropy = 0.0;  // H(Y): entropy of the column means
  double mi_estimate = 0.0;   // H(Y) - H(Y|B)
  double total = 0.0;         // kl_term - beta * mi_estimate
};

inline MarginalVector marginal(const ProbMatrix& w) {
  return MarginalVector::trusted(column_means(w.values()));
}

inline double entropy(std::span<const double> d) {
  std::vector<double> terms(d.size());
  for (std::size_t j = 0; j < d.size(); ++j) terms[j] = -xlogx(d[j]);
  return pairwise_sum(terms);
}

inline double entropy(const MarginalVector& d) {
  return entropy(std::span<const double>(d.values().data(),
                                         static_cast<std::size_t>(d.size())));
}

namespace detail {

inline double mean_row_entropy(const RowMatrix& w) {
  std::vector<double> rows(static_cast<std::size_t>(w.rows()));
  for (Index i = 0; i < w.rows(); ++i)
    rows[i] = entropy(std::span<const double>(
        w.row(i).data(), static_cast<std::size_t>(w.cols())));
  return pairwise_sum(rows) / static_cast<double>(w.rows());
}

inline void require_same_shape(const ProbMatrix& a, const ProbMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ParameterError("matrix shapes differ");
}

[[noreturn]] inline void throw_support(Index i, Index j) {
  throw SupportError("assignment has mass at (" + std::to_string(i) + "," +
                     std::to_string(j) +
                     ") where the model probability is zero");
}

}  // namespace detail

/// Mini-batch mutual information between labels and sample index.
inline double mi_estimate(const ProbMatrix& w) {
  return entropy(marginal(w)) - detail::mean_row_entropy(w.values());
}

/// (1/B) sum_i KL(w_i || p_i), with 0 log(0/p) = 0.
inline double kl_term(const ProbMatrix& w, const ProbMatrix& p) {
  detail::require_same_shape(w, p);
  std::vector<double> rows(static_cast<std::size_t>(w.rows()));
  std::vector<double> terms(static_cast<std::size_t>(w.cols()));
  for (Index i = 0; i < w.rows(); ++i) {
    for (Index j = 0; j < w.cols(); ++j) {
      const double wij = w(i, j);
      if (wij <= 0.0) {
        terms[j] = 0.0;
        continue;
      }
      if (p(i, j) <= 0.0) detail::throw_support(i, j);
      terms[j] = wij * std::log(wij / p(i, j));
    }
    rows[i] = pairwise_sum(terms);
  }
  return pairwise_sum(rows) / static_cast<double>(w.rows());
}

/// Evaluates the objective in its expanded form
///   -(1/B) sum w log p + (1-beta)/B sum w log w + beta sum wbar log wbar
/// and cross-checks it against kl_term - beta * mi_estimate.
inline ObjectiveBreakdown objective(const ProbMatrix& w, const ProbMatrix& p,
                                    double beta) {
  detail::require_same_shape(w, p);
  if (!(beta >= 0.0 && beta < 1.0))
    throw ParameterError("beta must lie in [0,1)");

  const Index rows = w.rows();
  const Index cols = w.cols();
  const double inv_b = 1.0 / static_cast<double>(rows);

  std::vector<double> cross_rows(rows), self_rows(rows);
  std::vector<double> cross(cols), self(cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      const double wij = w(i, j);
      if (wij > 0.0 && p(i, j) <= 0.0) detail::throw_support(i, j);
      cross[j] = wij > 0.0 ? -wij * std::log(p(i, j)) : 0.0;
      self[j] = xlogx(wij);
    }
    cross_rows[i] = pairwise_sum(cross);
    self_rows[i] = pairwise_sum(self);
  }
  const double cross_term = pairwise_sum(cross_rows) * inv_b;
  const double neg_cond = pairwise_sum(self_rows) * inv_b;
  const MarginalVector wbar = marginal(w);
  const double marg = entropy(wbar);

  ObjectiveBreakdown out;
  out.kl_term = kl_term(w, p);
  out.cond_entropy = -neg_cond;
  out.marg_entropy = marg;
  out.mi_estimate = marg - out.cond_entropy;
  out.total = cross_term + (1.0 - beta) * neg_cond - beta * marg;

  const double decomposed = out.kl_term - beta * out.mi_estimate;
  const double scale = 1.0 + std::abs(cross_term);
  if (std::abs(decomposed - out.total) > 1e-10 * scale)
    throw Error("objective forms disagree: expanded " +
                std::to_string(out.total) + " vs decomposed " +
                std::to_string(decomposed));
  return out;
}

}  // namespace mira
