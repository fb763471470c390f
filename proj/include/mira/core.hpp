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

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mira {

using Index = Eigen::Index;
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration value lies outside its admissible domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A matrix or vector violates the simplex invariants of its type.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Positive mass placed where the reference distribution has none.
class SupportError : public Error {
 public:
  using Error::Error;
};

/// A zero marginal entry is paired with a column that still carries mass.
class DegenerateMarginalError : public Error {
 public:
  using Error::Error;
};

class UnsupportedSizeError : public Error {
 public:
  using Error::Error;
};

/// Evaluation point outside the open domain of a function (e.g. log 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Tolerances
// ---------------------------------------------------------------------------

inline constexpr double kValidationTol = 1e-9;
inline constexpr double kFreshOutputTol = 1e-12;

// ---------------------------------------------------------------------------
// Deterministic reductions
// ---------------------------------------------------------------------------

/// Pairwise (cascade) summation. The split points depend only on n, so the
/// result is reproducible for a fixed input order.
inline double pairwise_sum(const double* x, std::size_t n) {
  constexpr std::size_t kBlock = 32;
  if (n <= kBlock) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

inline double pairwise_sum(std::span<const double> x) {
  return pairwise_sum(x.data(), x.size());
}

inline double pairwise_sum(const Vector& x) {
  return pairwise_sum(x.data(), static_cast<std::size_t>(x.size()));
}

/// Column sums over rows [begin, end), combined pairwise across row blocks.
/// `accumulate(i, acc)` must add row i's contribution into acc (length cols).
template <class RowAccumulate>
void pairwise_column_sums(Index begin, Index end, std::span<double> out,
                          RowAccumulate&& accumulate) {
  constexpr Index kBlock = 32;
  std::fill(out.begin(), out.end(), 0.0);
  if (end - begin <= kBlock) {
    for (Index i = begin; i < end; ++i) accumulate(i, out);
    return;
  }
  const Index mid = begin + (end - begin) / 2;
  pairwise_column_sums(begin, mid, out, accumulate);
  std::vector<double> right(out.size());
  pairwise_column_sums(mid, end, std::span<double>(right), accumulate);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += right[j];
}

/// Column means of a dense matrix using pairwise row reduction.
inline Vector column_means(const RowMatrix& m) {
  Vector out(m.cols());
  pairwise_column_sums(0, m.rows(), std::span<double>(out.data(), out.size()),
                       [&](Index i, std::span<double> acc) {
                         const double* row = m.row(i).data();
                         for (std::size_t j = 0; j < acc.size(); ++j)
                           acc[j] += row[j];
                       });
  return out / static_cast<double>(m.rows());
}

/// x log x with the continuous extension 0 log 0 = 0.
inline double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct ValidationReport {
  bool passed = false;
  double max_row_sum_deviation = 0.0;
  double min_entry = 0.0;
  Index non_finite_entries = 0;
  Index rows = 0;
  Index cols = 0;

  std::string describe() const {
    std::ostringstream os;
    os << rows << "x" << cols << " matrix: "
       << (passed ? "valid" : "invalid")
       << " (max row-sum deviation " << max_row_sum_deviation
       << ", min entry " << min_entry << ", non-finite entries "
       << non_finite_entries << ")";
    return os.str();
  }
};

/// Checks the row-stochastic invariants without mutating the input.
inline ValidationReport validate_prob_matrix(const RowMatrix& m,
                                             double tol = kValidationTol) {
  ValidationReport report;
  report.rows = m.rows();
  report.cols = m.cols();
  report.min_entry = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < m.rows(); ++i) {
    bool row_finite = true;
    for (Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      if (!std::isfinite(v)) {
        ++report.non_finite_entries;
        row_finite = false;
        continue;
      }
      report.min_entry = std::min(report.min_entry, v);
    }
    if (row_finite) {
      const double s = pairwise_sum(m.row(i).data(),
                                    static_cast<std::size_t>(m.cols()));
      report.max_row_sum_deviation =
          std::max(report.max_row_sum_deviation, std::abs(s - 1.0));
    }
  }
  if (m.size() == 0) report.min_entry = 0.0;
  report.passed = m.rows() >= 1 && m.cols() >= 2 &&
                  report.non_finite_entries == 0 && report.min_entry >= 0.0 &&
                  report.max_row_sum_deviation <= tol;
  return report;
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// B x K matrix whose rows lie on the closed probability simplex.
class ProbMatrix {
 public:
  /// Validates `values`; throws ValidationError if any invariant fails.
  static ProbMatrix from(RowMatrix values) {
    const auto report = validate_prob_matrix(values);
    if (!report.passed) throw ValidationError(report.describe());
    return ProbMatrix(std::move(values));
  }

  /// For values already known to be row-stochastic (internal producers).
  static ProbMatrix trusted(RowMatrix values) {
    return ProbMatrix(std::move(values));
  }

  static ProbMatrix uniform(Index rows, Index cols) {
    return ProbMatrix(RowMatrix::Constant(rows, cols, 1.0 / cols));
  }

  const RowMatrix& values() const { return values_; }
  Index rows() const { return values_.rows(); }
  Index cols() const { return values_.cols(); }
  double operator()(Index i, Index j) const { return values_(i, j); }

 private:
  explicit ProbMatrix(RowMatrix values) : values_(std::move(values)) {}
  RowMatrix values_;
};

/// Unbounded real scores, one row per sample.
class LogitMatrix {
 public:
  static LogitMatrix from(RowMatrix values) {
    if (!values.allFinite())
      throw ValidationError("logit matrix contains non-finite entries");
    if (values.rows() < 1 || values.cols() < 2)
      throw ValidationError("logit matrix needs at least 1 row and 2 columns");
    return LogitMatrix(std::move(values));
  }

  const RowMatrix& values() const { return values_; }
  Index rows() const { return values_.rows(); }
  Index cols() const { return values_.cols(); }

 private:
  explicit LogitMatrix(RowMatrix values) : values_(std::move(values)) {}
  RowMatrix values_;
};

/// A point on the K-simplex: cluster usage of a batch.
class MarginalVector {
 public:
  static MarginalVector from(Vector values) {
    if (!values.allFinite() || (values.array() < 0.0).any())
      throw ValidationError("marginal has negative or non-finite entries");
    const double s = pairwise_sum(values);
    if (std::abs(s - 1.0) > kValidationTol)
      throw ValidationError("marginal does not sum to 1 (sum = " +
                            std::to_string(s) + ")");
    return MarginalVector(std::move(values));
  }

  static MarginalVector trusted(Vector values) {
    return MarginalVector(std::move(values));
  }

  const Vector& values() const { return values_; }
  Index size() const { return values_.size(); }
  double operator[](Index j) const { return values_[j]; }

 private:
  explicit MarginalVector(Vector values) : values_(std::move(values)) {}
  Vector values_;
};

/// Fixed-point solver settings. Defaults follow the published training
/// recipe: beta = 2/3, target temperature 0.225, 30 updates.
struct SolverConfig {
  double beta = 2.0 / 3.0;
  double tau_t = 0.225;
  int max_iters = 30;
  double tol = 0.0;  // early exit on step SSE; 0 disables
  std::uint64_t seed = 0;

  void validate() const {
    if (!(beta >= 0.0 && beta < 1.0))
      throw ParameterError("beta must lie in [0,1), got " +
                           std::to_string(beta));
    if (!(tau_t > 0.0) || !std::isfinite(tau_t))
      throw ParameterError("tau_t must be > 0");
    if (max_iters < 1) throw ParameterError("max_iters must be >= 1");
    if (!(tol >= 0.0)) throw ParameterError("tol must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Softmax and instance generation
// ---------------------------------------------------------------------------

/// Row-wise softmax(row / tau), stabilized by max subtraction.
inline RowMatrix softmax_rows(const RowMatrix& logits, double tau) {
  if (!(tau > 0.0)) throw ParameterError("temperature must be > 0");
  RowMatrix out(logits.rows(), logits.cols());
  const double inv_tau = 1.0 / tau;
  for (Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    auto row = out.row(i);
    for (Index j = 0; j < logits.cols(); ++j)
      row[j] = std::exp((logits(i, j) - m) * inv_tau);
    const double s =
        pairwise_sum(row.data(), static_cast<std::size_t>(row.size()));
    row /= s;
  }
  return out;
}

inline ProbMatrix softmax_with_temperature(const LogitMatrix& logits,
                                           double tau) {
  return ProbMatrix::trusted(softmax_rows(logits.values(), tau));
}

/// Gaussian logits scaled by `sharpness`, pushed through a softmax.
/// Deterministic for a fixed seed; sharpness 0 gives exactly uniform rows.
inline ProbMatrix random_instance(Index rows, Index cols, double sharpness,
                                  std::uint64_t seed) {
  if (rows < 1 || cols < 2)
    throw ParameterError("random_instance needs rows >= 1 and cols >= 2");
  if (!(sharpness >= 0.0)) throw ParameterError("sharpness must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrix logits(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) logits(i, j) = sharpness * normal(rng);
  return ProbMatrix::trusted(softmax_rows(logits, 1.0));
}

/// Random cosine-similarity logits in [-1, 1]: the range produced by an
/// L2-normalized embedding against L2-normalized prototypes.
inline LogitMatrix random_cosine_logits(Index rows, Index cols, Index dim,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrix z(rows, dim), c(cols, dim);
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
  for (Index i = 0; i < c.size(); ++i) c.data()[i] = normal(rng);
  z.rowwise().normalize();
  c.rowwise().normalize();
  RowMatrix logits = z * c.transpose();
  return LogitMatrix::from(logits.cwiseMax(-1.0).cwiseMin(1.0));
}

}  // namespace mira
