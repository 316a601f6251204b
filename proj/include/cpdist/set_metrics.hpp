#pragma once

// Distances between finite sets of change points on the time axis.
//
// Every distance is built from the minimal distances d(s, T) = min_t |s - t|
// taken in both directions. Hausdorff takes their maximum, the modified
// Hausdorff variants and MJ_p average them, and the 1-D Wasserstein distance
// compares the empirical measures of the two sets.
//
// All functions accept sorted spans of time indices. Duplicates are allowed
// (multisets), which is what the duplication-invariance checks need;
// ChangePointSet converts implicitly for the common duplicate-free case.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cpdist/errors.hpp"

namespace cpdist {

using TimeIndex = std::int64_t;
using IndexSpan = std::span<const TimeIndex>;

/// Strictly increasing sequence of non-negative time indices.
class ChangePointSet {
 public:
  ChangePointSet() = default;

  explicit ChangePointSet(std::vector<TimeIndex> points) : points_(std::move(points)) {
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (points_[i] < 0) throw DataError("change point indices must be non-negative");
      if (i > 0 && points_[i] <= points_[i - 1]) {
        throw DataError("change point indices must be strictly increasing (index " +
                        std::to_string(points_[i]) + " follows " + std::to_string(points_[i - 1]) + ")");
      }
    }
  }

  ChangePointSet(std::initializer_list<TimeIndex> points)
      : ChangePointSet(std::vector<TimeIndex>(points)) {}

  /// Sorts and removes duplicates before validating.
  static ChangePointSet from_unsorted(std::vector<TimeIndex> points) {
    std::sort(points.begin(), points.end());
    points.erase(std::unique(points.begin(), points.end()), points.end());
    return ChangePointSet(std::move(points));
  }

  /// {first, first + 1, ..., last}.
  static ChangePointSet interval(TimeIndex first, TimeIndex last) {
    std::vector<TimeIndex> pts;
    for (TimeIndex x = first; x <= last; ++x) pts.push_back(x);
    return ChangePointSet(std::move(pts));
  }

  IndexSpan points() const noexcept { return points_; }
  const std::vector<TimeIndex>& vector() const noexcept { return points_; }
  operator IndexSpan() const noexcept { return points_; }  // NOLINT(google-explicit-constructor)

  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }
  auto begin() const noexcept { return points_.begin(); }
  auto end() const noexcept { return points_.end(); }
  TimeIndex operator[](std::size_t i) const { return points_[i]; }

  bool contains(TimeIndex x) const { return std::binary_search(points_.begin(), points_.end(), x); }

  friend bool operator==(const ChangePointSet&, const ChangePointSet&) = default;

 private:
  std::vector<TimeIndex> points_;
};

enum class MetricKind { Hausdorff, MH1, MH2, MH3, Wasserstein, MJ };

/// Which set distance to evaluate. `p` is only meaningful for MJ; p = +inf
/// selects the Hausdorff limit of the family.
struct MetricSpec {
  MetricKind kind = MetricKind::MJ;
  double p = 1.0;

  static MetricSpec hausdorff() { return {MetricKind::Hausdorff, 1.0}; }
  static MetricSpec mh1() { return {MetricKind::MH1, 1.0}; }
  static MetricSpec mh2() { return {MetricKind::MH2, 1.0}; }
  static MetricSpec mh3() { return {MetricKind::MH3, 1.0}; }
  static MetricSpec wasserstein() { return {MetricKind::Wasserstein, 1.0}; }
  static MetricSpec mj(double p) {
    MetricSpec spec{MetricKind::MJ, p};
    spec.validate();
    return spec;
  }

  void validate() const {
    if (kind == MetricKind::MJ && !(p > 0.0)) {
      throw std::invalid_argument("MJ_p is not a semi-metric for p <= 0");
    }
  }

  /// Short identifier used in file names and reports: hausdorff, mh1, mh2,
  /// mh3, wasserstein, mj0.5, mj1, mjinf, ...
  std::string name() const {
    switch (kind) {
      case MetricKind::Hausdorff: return "hausdorff";
      case MetricKind::MH1: return "mh1";
      case MetricKind::MH2: return "mh2";
      case MetricKind::MH3: return "mh3";
      case MetricKind::Wasserstein: return "wasserstein";
      case MetricKind::MJ: {
        if (std::isinf(p)) return "mjinf";
        char buf[32];
        std::snprintf(buf, sizeof buf, "mj%g", p);
        return buf;
      }
    }
    return "unknown";
  }

  static MetricSpec parse(std::string_view text) {
    std::string s(text);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "hausdorff" || s == "h") return hausdorff();
    if (s == "mh1") return mh1();
    if (s == "mh2") return mh2();
    if (s == "mh3") return mh3();
    if (s == "wasserstein" || s == "w" || s == "w1") return wasserstein();
    if (s.rfind("mj", 0) == 0) {
      std::string rest = s.substr(2);
      if (!rest.empty() && (rest.front() == '_' || rest.front() == '-')) rest.erase(0, 1);
      if (rest.empty()) return mj(1.0);
      if (rest == "inf" || rest == "infinity") return mj(std::numeric_limits<double>::infinity());
      std::size_t used = 0;
      double p = 0.0;
      try {
        p = std::stod(rest, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != rest.size()) throw std::invalid_argument("bad MJ order in metric '" + std::string(text) + "'");
      return mj(p);
    }
    throw std::invalid_argument("unknown metric '" + std::string(text) + "'");
  }

  friend bool operator==(const MetricSpec& a, const MetricSpec& b) {
    return a.kind == b.kind && (a.kind != MetricKind::MJ || a.p == b.p);
  }
};

namespace detail {

inline void require_non_empty(IndexSpan s) {
  if (s.empty()) throw DataError("empty set");
}

inline void require_non_decreasing(IndexSpan s) {
  if (!std::is_sorted(s.begin(), s.end())) throw DataError("time indices must be sorted");
}

inline void require_pair(IndexSpan s, IndexSpan t) {
  require_non_empty(s);
  require_non_empty(t);
  require_non_decreasing(s);
  require_non_decreasing(t);
}

inline double nearest(TimeIndex x, IndexSpan sorted) {
  const auto it = std::lower_bound(sorted.begin(), sorted.end(), x);
  TimeIndex best = std::numeric_limits<TimeIndex>::max();
  if (it != sorted.end()) best = *it - x;
  if (it != sorted.begin()) best = std::min(best, x - *std::prev(it));
  return static_cast<double>(best);
}

/// d(s, to) for every s in `from`, in order.
inline std::vector<double> directional(IndexSpan from, IndexSpan to) {
  std::vector<double> out;
  out.reserve(from.size());
  for (TimeIndex x : from) out.push_back(nearest(x, to));
  return out;
}

inline double sum(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc;
}

inline double max(const std::vector<double>& v) { return *std::max_element(v.begin(), v.end()); }

}  // namespace detail

/// d(x, S) = min over s in S of |x - s|.
inline double point_to_set(TimeIndex x, IndexSpan set) {
  detail::require_non_empty(set);
  detail::require_non_decreasing(set);
  return detail::nearest(x, set);
}

/// Smallest pairwise distance between S and T; zero iff they intersect.
inline double min_set_dist(IndexSpan s, IndexSpan t) {
  detail::require_pair(s, t);
  double best = std::numeric_limits<double>::infinity();
  for (TimeIndex x : s) best = std::min(best, detail::nearest(x, t));
  return best;
}

inline double hausdorff(IndexSpan s, IndexSpan t) {
  detail::require_pair(s, t);
  return std::max(detail::max(detail::directional(s, t)), detail::max(detail::directional(t, s)));
}

/// Larger of the two directional mean minimal distances.
inline double mh1(IndexSpan s, IndexSpan t) {
  detail::require_pair(s, t);
  const double a = detail::sum(detail::directional(s, t)) / static_cast<double>(s.size());
  const double b = detail::sum(detail::directional(t, s)) / static_cast<double>(t.size());
  return std::max(a, b);
}

/// Total of all minimal distances in both directions.
inline double mh2(IndexSpan s, IndexSpan t) {
  detail::require_pair(s, t);
  return detail::sum(detail::directional(s, t)) + detail::sum(detail::directional(t, s));
}

inline double mh3(IndexSpan s, IndexSpan t) {
  detail::require_pair(s, t);
  const double total = detail::sum(detail::directional(s, t)) + detail::sum(detail::directional(t, s));
  return total / static_cast<double>(s.size() + t.size());
}

/// MJ_p: the p-power mean of the minimal distances, each direction weighted
/// by half. p = +inf returns the Hausdorff distance; MJ_p never exceeds it.
///
/// The largest minimal distance m is factored out before raising to p so
/// that large orders (p = 100 and beyond) neither overflow nor underflow.
inline double mj(IndexSpan s, IndexSpan t, double p) {
  if (!(p > 0.0)) throw std::invalid_argument("MJ_p is not a semi-metric for p <= 0");
  if (std::isinf(p)) return hausdorff(s, t);
  detail::require_pair(s, t);
  const auto ds = detail::directional(s, t);
  const auto dt = detail::directional(t, s);
  const double m = std::max(detail::max(ds), detail::max(dt));
  if (m == 0.0) return 0.0;
  auto power_sum = [&](const std::vector<double>& d) {
    double acc = 0.0;
    for (double x : d) acc += (p == 1.0) ? x / m : std::pow(x / m, p);
    return acc;
  };
  const double inner = power_sum(ds) / (2.0 * static_cast<double>(ds.size())) +
                       power_sum(dt) / (2.0 * static_cast<double>(dt.size()));
  return m * (p == 1.0 ? inner : std::pow(inner, 1.0 / p));
}

/// MJ_p on multisets; identical formula with multiset cardinalities. Kept as
/// a named entry point because duplicating every element of S must leave the
/// value unchanged, which is a property worth calling out at call sites.
inline double mj_multiset(IndexSpan s, IndexSpan t, double p) { return mj(s, t, p); }

/// 1-D Wasserstein-1 distance between the uniform empirical measures on S
/// and T, computed exactly as the integral of |F - G| over the real line.
/// Both CDFs are step functions, so the integral is a finite sum over the
/// intervals between consecutive breakpoints of S united with T.
inline double wasserstein1(IndexSpan s, IndexSpan t) {
  detail::require_pair(s, t);
  const auto ns = static_cast<std::int64_t>(s.size());
  const auto nt = static_cast<std::int64_t>(t.size());
  std::size_t i = 0;
  std::size_t j = 0;
  std::int64_t cs = 0;  // #S <= current breakpoint
  std::int64_t ct = 0;
  TimeIndex prev = 0;
  bool started = false;
  double area = 0.0;  // in units of 1 / (|S| |T|)
  while (i < s.size() || j < t.size()) {
    TimeIndex x;
    if (j >= t.size() || (i < s.size() && s[i] <= t[j])) {
      x = s[i];
    } else {
      x = t[j];
    }
    if (started) {
      const std::int64_t gap = x - prev;
      const std::int64_t height = std::abs(cs * nt - ct * ns);
      area += static_cast<double>(height) * static_cast<double>(gap);
    }
    while (i < s.size() && s[i] == x) { ++cs; ++i; }
    while (j < t.size() && t[j] == x) { ++ct; ++j; }
    prev = x;
    started = true;
  }
  return area / (static_cast<double>(ns) * static_cast<double>(nt));
}

/// Dispatch on a MetricSpec.
inline double distance(const MetricSpec& metric, IndexSpan s, IndexSpan t) {
  switch (metric.kind) {
    case MetricKind::Hausdorff: return hausdorff(s, t);
    case MetricKind::MH1: return mh1(s, t);
    case MetricKind::MH2: return mh2(s, t);
    case MetricKind::MH3: return mh3(s, t);
    case MetricKind::Wasserstein: return wasserstein1(s, t);
    case MetricKind::MJ: return mj(s, t, metric.p);
  }
  throw std::invalid_argument("unknown metric kind");
}

}  // namespace cpdist
