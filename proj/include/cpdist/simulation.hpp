#pragma once

// Synthetic collections of change-point sets with a known grouping.
//
// Each ground-truth cluster gets a template drawn from a renewal process;
// members copy the template with small index noise. The default ten-series
// layout is {1-5}, {6-8}, {9}, {10}. Outlier scenarios then corrupt some
// members: a moderate outlier moves one change point by several mean
// spacings, an extreme outlier adds a point in an otherwise empty stretch
// at the end of the horizon.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpdist/clustering.hpp"
#include "cpdist/matrix_analysis.hpp"
#include "cpdist/rng.hpp"
#include "cpdist/set_metrics.hpp"

namespace cpdist {

enum class ScenarioKind { NoOutliers, ModerateOutliers, ExtremeOutliers };

inline const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::NoOutliers: return "none";
    case ScenarioKind::ModerateOutliers: return "moderate";
    case ScenarioKind::ExtremeOutliers: return "extreme";
  }
  return "?";
}

inline ScenarioKind parse_scenario(const std::string& s) {
  if (s == "none" || s == "no" || s == "no-outliers" || s == "1") return ScenarioKind::NoOutliers;
  if (s == "moderate" || s == "2") return ScenarioKind::ModerateOutliers;
  if (s == "extreme" || s == "3") return ScenarioKind::ExtremeOutliers;
  throw std::invalid_argument("unknown scenario '" + s + "' (expected none, moderate or extreme)");
}

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::NoOutliers;
  int n_series = 10;
  std::int64_t horizon = 1000;
  std::int64_t mean_spacing = 35;
  double spacing_jitter = 0.3;    // template gaps ~ mean_spacing * U(1 - j, 1 + j)
  std::int64_t min_spacing = 5;   // between consecutive regular points
  std::int64_t member_jitter = 3;  // members move template points by U{-j..j}
  double exact_copy_prob = 0.9;   // chance a member keeps a template point unchanged
  double outlier_rate = 0.0;      // per-series probability of an outlier
  std::int64_t outlier_magnitude = 0;
  std::uint64_t rng_seed = 1;

  /// Calibrated defaults for each scenario. Moderate outliers move one point
  /// by about five mean spacings; extreme outliers sit in the last
  /// magnitude-sized stretch of the horizon, which regular points avoid.
  static ScenarioSpec defaults(ScenarioKind kind, std::uint64_t seed = 1) {
    ScenarioSpec s;
    s.kind = kind;
    s.rng_seed = seed;
    if (kind == ScenarioKind::ModerateOutliers) {
      s.outlier_rate = 0.3;
      s.outlier_magnitude = 5 * s.mean_spacing;
    } else if (kind == ScenarioKind::ExtremeOutliers) {
      s.outlier_rate = 0.5;
      s.outlier_magnitude = static_cast<std::int64_t>(std::llround(0.12 * static_cast<double>(s.horizon)));
    }
    return s;
  }

  /// End (exclusive) of the range that holds regular change points.
  std::int64_t regular_end() const {
    if (kind != ScenarioKind::ExtremeOutliers) return horizon;
    return horizon - static_cast<std::int64_t>(std::ceil(1.2 * static_cast<double>(outlier_magnitude)));
  }

  void validate() const {
    if (n_series < 6) throw std::invalid_argument("n_series must be at least 6");
    if (mean_spacing < 1 || horizon <= mean_spacing) throw std::invalid_argument("need horizon > mean_spacing >= 1");
    if (spacing_jitter < 0.0 || spacing_jitter >= 1.0) throw std::invalid_argument("spacing_jitter must lie in [0, 1)");
    if (min_spacing < 1 || member_jitter < 0) throw std::invalid_argument("bad spacing parameters");
    if (exact_copy_prob < 0.0 || exact_copy_prob > 1.0) throw std::invalid_argument("exact_copy_prob must lie in [0, 1]");
    if (outlier_rate < 0.0 || outlier_rate > 1.0) throw std::invalid_argument("outlier_rate must lie in [0, 1]");
    if (outlier_magnitude < 0) throw std::invalid_argument("outlier_magnitude must be non-negative");
    if (kind != ScenarioKind::NoOutliers && outlier_rate > 0.0 && outlier_magnitude == 0) {
      throw std::invalid_argument("outlier scenarios need a positive outlier_magnitude");
    }
    if (regular_end() <= mean_spacing) throw std::invalid_argument("outlier_magnitude leaves no room for regular points");
  }
};

struct LabeledCollection {
  std::vector<ChangePointSet> sets;
  std::vector<std::string> labels;
  ClusterAssignment truth;
};

/// Ground-truth labels: half the series, then the rest minus two, then two
/// singletons. For ten series this is {1-5}, {6-8}, {9}, {10}.
inline ClusterAssignment scenario_truth(int n_series) {
  const int first = (n_series + 1) / 2;
  const int second = n_series - first - 2;
  std::vector<int> labels;
  for (int i = 0; i < first; ++i) labels.push_back(1);
  for (int i = 0; i < second; ++i) labels.push_back(2);
  labels.push_back(3);
  labels.push_back(4);
  return canonicalize(labels);
}

inline LabeledCollection generate(const ScenarioSpec& spec) {
  spec.validate();
  Rng rng(spec.rng_seed);
  const std::int64_t end = spec.regular_end();
  const std::int64_t floor_gap = spec.min_spacing + 2 * spec.member_jitter;

  LabeledCollection out;
  out.truth = scenario_truth(spec.n_series);
  std::vector<std::vector<TimeIndex>> templates(static_cast<std::size_t>(out.truth.k));
  for (auto& t : templates) {
    TimeIndex x = rng.uniform_int(0, spec.mean_spacing - 1);
    while (x < end) {
      t.push_back(x);
      const double gap = static_cast<double>(spec.mean_spacing) * rng.uniform(1.0 - spec.spacing_jitter, 1.0 + spec.spacing_jitter);
      x += std::max<std::int64_t>(floor_gap, std::llround(gap));
    }
  }

  for (int i = 0; i < spec.n_series; ++i) {
    const auto& tmpl = templates[static_cast<std::size_t>(out.truth.labels[static_cast<std::size_t>(i)] - 1)];
    std::vector<TimeIndex> pts;
    pts.reserve(tmpl.size() + 1);
    for (TimeIndex p : tmpl) {
      if (!rng.bernoulli(spec.exact_copy_prob)) p += rng.uniform_int(-spec.member_jitter, spec.member_jitter);
      pts.push_back(std::clamp<TimeIndex>(p, 0, spec.horizon - 1));
    }
    if (spec.kind == ScenarioKind::ModerateOutliers && rng.bernoulli(spec.outlier_rate)) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pts.size()) - 1));
      const auto shift = static_cast<TimeIndex>(std::llround(static_cast<double>(spec.outlier_magnitude) * rng.uniform(0.8, 1.2)));
      TimeIndex moved = pts[j] + (rng.bernoulli(0.5) ? shift : -shift);
      if (moved < 0 || moved >= spec.horizon) moved = 2 * pts[j] - moved;
      pts[j] = std::clamp<TimeIndex>(moved, 0, spec.horizon - 1);
    }
    if (spec.kind == ScenarioKind::ExtremeOutliers && rng.bernoulli(spec.outlier_rate)) {
      const auto reach = static_cast<std::int64_t>(std::floor(0.2 * static_cast<double>(spec.outlier_magnitude)));
      pts.push_back(spec.horizon - 1 - rng.uniform_int(0, reach));
    }
    out.sets.push_back(ChangePointSet::from_unsorted(std::move(pts)));
    out.labels.push_back("TS" + std::to_string(i + 1));
  }
  return out;
}

struct SweepRow {
  double p = 1.0;
  double fail_fraction = 0.0;
  std::optional<double> mean_fail_ratio;
  double rand_index = 0.0;
  bool meets_tolerance = false;  // fail_fraction < alpha
};

/// For each p: MJ_p matrix, transitivity audit, spectral clustering with the
/// truth's cluster count, Rand index against the truth.
inline std::vector<SweepRow> p_sweep(const LabeledCollection& collection, std::span<const double> p_values,
                                     double alpha = 0.05, std::uint64_t seed = 1) {
  if (p_values.empty()) throw std::invalid_argument("p_sweep needs at least one p value");
  std::vector<SweepRow> rows;
  for (double p : p_values) {
    const auto d = build_distance_matrix(collection.sets, MetricSpec::mj(p), collection.labels);
    const auto audit = transitivity_audit(d);
    const auto clusters = spectral_cluster(d, collection.truth.k, seed);
    rows.push_back({p, audit.fail_fraction, audit.mean_fail_ratio, rand_index(clusters, collection.truth),
                    audit.fail_fraction < alpha});
  }
  return rows;
}

}  // namespace cpdist
