#pragma once

// Distance matrices over collections of change-point sets, the triangle
// inequality audit, and the eigenvalue summary used to estimate how many
// series belong to the dominant group.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpdist/errors.hpp"
#include "cpdist/parallel.hpp"
#include "cpdist/set_metrics.hpp"

namespace cpdist {

struct DistanceMatrix {
  Eigen::MatrixXd values;
  MetricSpec metric;
  std::vector<std::string> labels;

  std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
  double operator()(std::size_t i, std::size_t j) const {
    return values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }

  /// Square, symmetric within `tol`, non-negative, zero diagonal.
  void validate(double tol = 1e-9) const {
    if (values.rows() != values.cols()) throw DataError("distance matrix is not square");
    if (!labels.empty() && labels.size() != size()) throw DataError("label count does not match matrix size");
    const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      if (values(i, i) != 0.0) throw DataError("distance matrix diagonal must be zero");
      for (Eigen::Index j = 0; j < values.cols(); ++j) {
        if (!std::isfinite(values(i, j)) || values(i, j) < 0.0) throw DataError("distances must be finite and >= 0");
        if (std::abs(values(i, j) - values(j, i)) > tol * scale) throw NumericalError("distance matrix is not symmetric");
      }
    }
  }
};

inline std::vector<std::string> default_labels(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("TS" + std::to_string(i + 1));
  return out;
}

/// Pairwise distances for i < j, mirrored; zero diagonal.
inline DistanceMatrix build_distance_matrix(std::span<const ChangePointSet> sets, const MetricSpec& metric,
                                            std::vector<std::string> labels = {}) {
  metric.validate();
  const std::size_t n = sets.size();
  if (n < 2) throw DataError("need at least two change-point sets");
  if (labels.empty()) labels = default_labels(n);
  if (labels.size() != n) throw std::invalid_argument("label count does not match set count");
  for (std::size_t i = 0; i < n; ++i) {
    if (sets[i].empty()) throw DataError("series '" + labels[i] + "' has an empty change-point set");
  }
  DistanceMatrix d{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)), metric,
                   std::move(labels)};
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      d.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = distance(metric, sets[i], sets[j]);
    }
  });
  for (Eigen::Index i = 0; i < d.values.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < d.values.cols(); ++j) d.values(j, i) = d.values(i, j);
  }
  return d;
}

enum class TripleClass : std::uint8_t { Blue, Yellow, Red };

inline const char* to_string(TripleClass c) {
  switch (c) {
    case TripleClass::Blue: return "blue";
    case TripleClass::Yellow: return "yellow";
    case TripleClass::Red: return "red";
  }
  return "?";
}

/// D_ik / (D_ij + D_jk). A zero denominator forces a zero numerator in any
/// semi-metric matrix, so 0/0 is read as 0 and x/0 with x > 0 is rejected.
inline double triple_ratio(const Eigen::MatrixXd& d, std::size_t i, std::size_t j, std::size_t k) {
  if (i == j || j == k || i == k) throw std::invalid_argument("triple indices must be distinct");
  const auto n = static_cast<std::size_t>(d.rows());
  if (i >= n || j >= n || k >= n) throw std::out_of_range("triple index outside matrix");
  const auto I = static_cast<Eigen::Index>(i), J = static_cast<Eigen::Index>(j), K = static_cast<Eigen::Index>(k);
  const double num = d(I, K);
  const double den = d(I, J) + d(J, K);
  if (den == 0.0) {
    if (num == 0.0) return 0.0;
    throw DataError("inconsistent matrix: D_ij + D_jk = 0 but D_ik > 0");
  }
  return num / den;
}

inline double triple_ratio(const DistanceMatrix& d, std::size_t i, std::size_t j, std::size_t k) {
  return triple_ratio(d.values, i, j, k);
}

inline TripleClass classify_ratio(double r) {
  if (r <= 1.0) return TripleClass::Blue;
  if (r <= 2.0) return TripleClass::Yellow;
  return TripleClass::Red;
}

struct TransitivityReport {
  std::size_t n = 0;
  std::size_t total = 0;
  std::size_t blue = 0;
  std::size_t yellow = 0;
  std::size_t red = 0;
  double fail_fraction = 0.0;
  std::optional<double> mean_fail_ratio;  // absent when nothing fails
  std::optional<double> max_fail_ratio;
  std::vector<TripleClass> classification;  // n^3 entries, [(i*n + j)*n + k]

  TripleClass at(std::size_t i, std::size_t j, std::size_t k) const { return classification.at((i * n + j) * n + k); }
};

/// Classifies every ordered triple of distinct indices. `slack` absorbs
/// rounding in distances that are not integers: a ratio within slack of 1
/// counts as satisfying the triangle inequality.
inline TransitivityReport transitivity_audit(const Eigen::MatrixXd& d, double slack = 1e-12) {
  const auto n = static_cast<std::size_t>(d.rows());
  if (d.rows() != d.cols()) throw DataError("distance matrix is not square");
  if (n < 3) throw DataError("transitivity audit needs at least three series");
  TransitivityReport rep;
  rep.n = n;
  rep.classification.assign(n * n * n, TripleClass::Blue);
  // Rows are independent; per-row tallies are merged in row order.
  struct Tally {
    std::size_t yellow = 0, red = 0;
    double sum = 0.0, max = 0.0;
  };
  std::vector<Tally> rows(n);
  parallel_for(n, [&](std::size_t i) {
    auto& t = rows[i];
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      for (std::size_t k = 0; k < n; ++k) {
        if (k == i || k == j) continue;
        const double r = triple_ratio(d, i, j, k);
        if (r <= 1.0 + slack) continue;
        const auto c = classify_ratio(r);
        rep.classification[(i * n + j) * n + k] = c;
        (c == TripleClass::Red ? t.red : t.yellow) += 1;
        t.sum += r;
        t.max = std::max(t.max, r);
      }
    }
  });
  double sum = 0.0, mx = 0.0;
  for (const auto& t : rows) {
    rep.yellow += t.yellow;
    rep.red += t.red;
    sum += t.sum;
    mx = std::max(mx, t.max);
  }
  rep.total = n * (n - 1) * (n - 2);
  rep.blue = rep.total - rep.yellow - rep.red;
  const std::size_t fails = rep.yellow + rep.red;
  rep.fail_fraction = static_cast<double>(fails) / static_cast<double>(rep.total);
  if (fails > 0) {
    rep.mean_fail_ratio = sum / static_cast<double>(fails);
    rep.max_fail_ratio = mx;
  }
  return rep;
}

inline TransitivityReport transitivity_audit(const DistanceMatrix& d, double slack = 1e-12) {
  return transitivity_audit(d.values, slack);
}

struct SymmetricEigen {
  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // orthonormal columns
};

/// Real symmetric eigendecomposition (Householder tridiagonalisation + QL).
inline SymmetricEigen symmetric_eigen(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw DataError("matrix is not square");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  if (solver.info() != Eigen::Success) throw NumericalError("symmetric eigensolver did not converge");
  return {solver.eigenvalues(), solver.eigenvectors()};
}

struct EigenReport {
  std::vector<double> eigenvalues;      // signed, ascending
  std::vector<double> abs_eigenvalues;  // ascending
  double operator_norm = 0.0;
  double epsilon = 0.0;
  std::size_t below_epsilon = 0;
  std::size_t majority_cluster_size = 0;
  double eigenvalue_sum = 0.0;
};

/// Sorted absolute eigenvalues and the majority-group estimate: if k
/// eigenvalues are smaller than epsilon in magnitude, k + 1 series are
/// taken to be alike (capped at n). Default epsilon is 5% of the operator
/// norm.
inline EigenReport eigen_report(const Eigen::MatrixXd& d, std::optional<double> epsilon = std::nullopt) {
  if (d.rows() != d.cols()) throw DataError("matrix is not square");
  const auto n = static_cast<std::size_t>(d.rows());
  if (n == 0) throw DataError("empty matrix");
  const double scale = std::max(1.0, d.cwiseAbs().maxCoeff());
  if ((d - d.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) throw NumericalError("matrix is not symmetric");
  if (epsilon && !(*epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");

  const auto eig = symmetric_eigen(d);
  EigenReport rep;
  rep.eigenvalues.assign(eig.values.data(), eig.values.data() + eig.values.size());
  for (double v : rep.eigenvalues) rep.abs_eigenvalues.push_back(std::abs(v));
  std::sort(rep.abs_eigenvalues.begin(), rep.abs_eigenvalues.end());
  rep.operator_norm = rep.abs_eigenvalues.back();
  for (double v : rep.eigenvalues) rep.eigenvalue_sum += v;
  const double trace = d.trace();
  if (std::abs(rep.eigenvalue_sum - trace) > 1e-6 * std::max(rep.operator_norm, 1e-300)) {
    throw NumericalError("eigenvalues do not sum to the trace");
  }
  rep.epsilon = epsilon.value_or(0.05 * rep.operator_norm);
  if (rep.operator_norm == 0.0) {
    rep.below_epsilon = n;
    rep.majority_cluster_size = n;
    return rep;
  }
  rep.below_epsilon = static_cast<std::size_t>(
      std::count_if(rep.abs_eigenvalues.begin(), rep.abs_eigenvalues.end(), [&](double a) { return a < rep.epsilon; }));
  rep.majority_cluster_size = std::min(rep.below_epsilon + 1, n);
  return rep;
}

inline EigenReport eigen_report(const DistanceMatrix& d, std::optional<double> epsilon = std::nullopt) {
  return eigen_report(d.values, epsilon);
}

}  // namespace cpdist
