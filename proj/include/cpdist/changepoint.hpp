#pragma once

// Nonparametric change-point detection for univariate series.
//
// Phase I (batch_detect) looks for a single change in a fixed sample by
// maximising a standardised two-sample statistic over every split point.
// Phase II (sequential_detect) feeds observations one at a time, tests the
// growing window after each one, and restarts the window at the estimated
// change whenever the statistic crosses its threshold.
//
// Thresholds come from seeded Monte-Carlo simulation. Both statistics are
// rank based, so under the null their distribution does not depend on the
// data distribution as long as it is continuous.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpdist/errors.hpp"
#include "cpdist/parallel.hpp"
#include "cpdist/rng.hpp"
#include "cpdist/set_metrics.hpp"
#include "cpdist/threshold_cache.hpp"

namespace cpdist {

struct Series {
  std::string label;
  std::vector<double> values;
};

enum class TestStatistic { MannWhitney, KolmogorovSmirnov };
enum class NullDistribution { Normal, Uniform };

inline std::string to_string(TestStatistic s) {
  return s == TestStatistic::MannWhitney ? "mann-whitney" : "kolmogorov-smirnov";
}

inline TestStatistic parse_statistic(const std::string& s) {
  if (s == "mw" || s == "mann-whitney" || s == "mannwhitney") return TestStatistic::MannWhitney;
  if (s == "ks" || s == "kolmogorov-smirnov" || s == "kolmogorovsmirnov") return TestStatistic::KolmogorovSmirnov;
  throw std::invalid_argument("unknown statistic '" + s + "' (expected mw or ks)");
}

struct DetectorConfig {
  TestStatistic statistic = TestStatistic::MannWhitney;
  double alpha = 0.05;   // batch false-positive level
  double arl0 = 1000.0;  // sequential in-control run length, per-step level 1/arl0
  int min_segment = 20;
  // Phase II only: shortest post-split segment. The window is tested once it
  // holds 2*min_segment points and the pre-split side is always at least
  // min_segment long, which keeps detections min_segment apart; allowing a
  // short tail lets a change be located as soon as it is signalled.
  int sequential_min_tail = 1;
  int mc_replicates = 10000;
  std::uint64_t rng_seed = 1234567;
  NullDistribution null_distribution = NullDistribution::Normal;
  std::string cache_dir;  // empty: $CPDIST_CACHE_DIR or ~/.cache/cpdist
  bool use_cache = true;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    if (!(arl0 > 1.0)) throw std::invalid_argument("arl0 must exceed 1");
    if (min_segment < 2) throw std::invalid_argument("min_segment must be at least 2");
    if (sequential_min_tail < 1 || sequential_min_tail > min_segment) {
      throw std::invalid_argument("sequential_min_tail must lie in [1, min_segment]");
    }
    if (mc_replicates < 1000) throw std::invalid_argument("mc_replicates must be at least 1000");
  }
};

/// Standardised statistic for every admissible split k in [first_k, last_k].
/// k counts the observations before the split, so k is also the 0-based
/// index of the first observation after the change.
struct StatisticProfile {
  std::size_t first_k = 0;
  std::vector<double> values;

  std::size_t last_k() const { return first_k + values.size() - 1; }
  double at(std::size_t k) const { return values.at(k - first_k); }

  /// Smallest k attaining the maximum.
  std::size_t argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
      if (values[i] > values[best]) best = i;
    }
    return first_k + best;
  }
  double max() const { return *std::max_element(values.begin(), values.end()); }
};

struct BatchDetection {
  std::size_t change_point = 0;  // first index of the new regime
  double statistic = 0.0;        // D_n
  double threshold = 0.0;        // h_n
};

struct DetectionResult {
  ChangePointSet change_points;
  std::vector<double> statistics;         // D_t at each detection
  std::vector<double> thresholds;         // h_t at each detection
  std::vector<std::size_t> detection_times;  // index of the observation that triggered it
  std::string warning;

  friend bool operator==(const DetectionResult&, const DetectionResult&) = default;
};

/// h[t] for window lengths t = 0..n_max; +inf where no test is run.
/// For the KS statistic the table also carries the null mean and standard
/// deviation of the scaled statistic for every (k, t).
struct ThresholdTable {
  std::size_t n_max = 0;
  int min_segment = 0;
  std::vector<double> h;
  std::vector<double> ks_mean;
  std::vector<double> ks_sd;

  static std::size_t tri(std::size_t k, std::size_t t) { return t * (t + 1) / 2 + k; }
};

namespace detail {

inline void require_finite(std::span<const double> x) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw DataError("non-finite observation at index " + std::to_string(i));
  }
}

inline void check_split(std::size_t n, std::size_t k, int min_segment) {
  const auto m = static_cast<std::size_t>(min_segment);
  if (n < 2 * m) throw DataError("series too short: need at least 2*min_segment observations");
  if (k < m || k > n - m) {
    throw std::invalid_argument("split index " + std::to_string(k) + " outside [" + std::to_string(m) + ", " +
                                std::to_string(n - m) + "]");
  }
}

inline double draw_null(Rng& rng, NullDistribution dist) {
  return dist == NullDistribution::Normal ? rng.normal() : rng.uniform01();
}

inline std::string key_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string base_key(const char* kind, const DetectorConfig& cfg) {
  return std::string(kind) + "|" + to_string(cfg.statistic) + "|" +
         (cfg.null_distribution == NullDistribution::Normal ? "normal" : "uniform") +
         "|m=" + std::to_string(cfg.min_segment) + "|tail=" + std::to_string(cfg.sequential_min_tail) + "|R=" + std::to_string(cfg.mc_replicates) +
         "|seed=" + std::to_string(cfg.rng_seed);
}

/// Doubled midranks (integers) and the tie term sum(t^3 - t) over tie groups.
inline std::vector<std::int64_t> doubled_midranks(std::span<const double> x, std::int64_t& tie_term) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<std::int64_t> r2(n);
  tie_term = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const auto lo = static_cast<std::int64_t>(i + 1);
    const auto hi = static_cast<std::int64_t>(j + 1);
    for (std::size_t q = i; q <= j; ++q) r2[order[q]] = lo + hi;
    const auto g = hi - lo + 1;
    tie_term += g * g * g - g;
    i = j + 1;
  }
  return r2;
}

/// |2U - k(n-k)| / sd(2U) with the tie-corrected variance; 0 when the
/// variance vanishes (all observations tied).
inline double mw_z(std::int64_t u2, std::size_t k, std::size_t n, std::int64_t tie_term) {
  const double kk = static_cast<double>(k);
  const double nk = static_cast<double>(n - k);
  const double nn = static_cast<double>(n);
  const double var = kk * nk / 3.0 * ((nn + 1.0) - static_cast<double>(tie_term) / (nn * (nn - 1.0)));
  if (!(var > 0.0)) return 0.0;
  const double diff = static_cast<double>(u2 - static_cast<std::int64_t>(k * (n - k)));
  return std::abs(diff) / std::sqrt(var);
}

/// Maximum of the Mann-Whitney z over k in [m, t-m] given doubled U counts
/// U2[k] for a window of length t. Shared by the null simulation and the
/// detector so both see bit-identical statistics.
inline double mw_window_max(const std::vector<std::int64_t>& u2, std::size_t t, std::size_t m, std::size_t tail,
                            std::int64_t tie_term, std::size_t* argmax = nullptr) {
  const double tt = static_cast<double>(t);
  const double scale = (tt + 1.0) - static_cast<double>(tie_term) / (tt * (tt - 1.0));
  double best = -1.0;
  std::size_t best_k = m;
  for (std::size_t k = m; k + tail <= t; ++k) {
    const double diff = static_cast<double>(u2[k] - static_cast<std::int64_t>(k * (t - k)));
    const double r = diff * diff / static_cast<double>(k * (t - k));
    if (r > best) {
      best = r;
      best_k = k;
    }
  }
  if (argmax) *argmax = best_k;
  if (!(scale > 0.0)) return 0.0;
  return std::sqrt(best * 3.0 / scale);
}

/// sqrt(k(n-k)/n) * sup_x |F_1:k(x) - F_k+1:n(x)| for k in [m, n-tail].
inline std::vector<double> ks_scaled_profile(std::span<const double> x, std::size_t m, std::size_t tail) {
  const std::size_t n = x.size();
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  const std::size_t u = sorted.size();
  std::vector<std::size_t> rank(n);
  std::vector<std::int64_t> total(u, 0);
  for (std::size_t i = 0; i < n; ++i) {
    rank[i] = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), x[i]) - sorted.begin());
    ++total[rank[i]];
  }
  for (std::size_t r = 1; r < u; ++r) total[r] += total[r - 1];  // N(r): #values with rank <= r
  std::vector<std::int64_t> first(u, 0);                          // c(r) for the first segment
  std::vector<double> out;
  out.reserve(n - m - tail + 1);
  const auto nn = static_cast<std::int64_t>(n);
  for (std::size_t k = 1; k + tail <= n; ++k) {
    for (std::size_t r = rank[k - 1]; r < u; ++r) ++first[r];
    if (k < m) continue;
    const auto kk = static_cast<std::int64_t>(k);
    std::int64_t sup = 0;
    for (std::size_t r = 0; r < u; ++r) sup = std::max(sup, std::abs(first[r] * nn - kk * total[r]));
    const double denom = static_cast<double>(k) * static_cast<double>(n - k);
    const double raw = static_cast<double>(sup) / denom;
    out.push_back(raw * std::sqrt(denom / static_cast<double>(n)));
  }
  return out;
}

/// Sum and sum of squares accumulated over replicates in fixed blocks, with
/// blocks merged in index order so the result does not depend on threading.
template <class PerReplicate>
void blocked_moments(std::size_t replicates, std::size_t width, PerReplicate&& fill, std::vector<double>& sum,
                     std::vector<double>& sumsq) {
  constexpr std::size_t kBlock = 256;
  const std::size_t blocks = (replicates + kBlock - 1) / kBlock;
  const std::size_t group = worker_count();
  sum.assign(width, 0.0);
  sumsq.assign(width, 0.0);
  for (std::size_t g0 = 0; g0 < blocks; g0 += group) {
    const std::size_t g1 = std::min(blocks, g0 + group);
    std::vector<std::vector<double>> ps(g1 - g0), pq(g1 - g0);
    parallel_for(g1 - g0, [&](std::size_t b) {
      auto& s = ps[b];
      auto& q = pq[b];
      s.assign(width, 0.0);
      q.assign(width, 0.0);
      const std::size_t r0 = (g0 + b) * kBlock;
      const std::size_t r1 = std::min(replicates, r0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r) fill(r, s, q);
    });
    for (std::size_t b = 0; b < ps.size(); ++b) {
      for (std::size_t i = 0; i < width; ++i) {
        sum[i] += ps[b][i];
        sumsq[i] += pq[b][i];
      }
    }
  }
}

inline void finish_moments(std::size_t replicates, std::vector<double>& mean, std::vector<double>& sd) {
  const double r = static_cast<double>(replicates);
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double mu = mean[i] / r;
    const double var = std::max(0.0, sd[i] / r - mu * mu) * r / (r - 1.0);
    mean[i] = mu;
    sd[i] = std::sqrt(var);
  }
}

inline double standardise(double v, double mu, double sd) { return sd > 0.0 ? (v - mu) / sd : 0.0; }

enum SeedTag : std::uint64_t { kBatchMoments = 11, kBatchNull = 12, kSeqMoments = 21, kSeqNull = 22 };

}  // namespace detail

// ---------------------------------------------------------------------------
// Mann-Whitney

/// U_k counts pairs (i <= k < j) with x_i > x_j, ties counting one half.
/// Returns |z_k| for every admissible k using midranks and the tie-corrected
/// variance.
inline StatisticProfile mann_whitney_profile(std::span<const double> x, int min_segment) {
  detail::require_finite(x);
  const std::size_t n = x.size();
  const auto m = static_cast<std::size_t>(min_segment);
  if (min_segment < 1 || n < 2 * m) throw DataError("series too short: need at least 2*min_segment observations");
  std::int64_t ties = 0;
  const auto r2 = detail::doubled_midranks(x, ties);
  StatisticProfile p;
  p.first_k = m;
  std::int64_t rank_sum2 = 0;
  for (std::size_t k = 1; k + m <= n; ++k) {
    rank_sum2 += r2[k - 1];
    if (k < m) continue;
    // 2U = 2 R_1 - k(k+1) with R_1 the first segment's rank sum.
    const std::int64_t u2 = rank_sum2 - static_cast<std::int64_t>(k * (k + 1));
    p.values.push_back(detail::mw_z(u2, k, n, ties));
  }
  return p;
}

inline double mann_whitney_norm(std::span<const double> x, std::size_t k, int min_segment) {
  detail::check_split(x.size(), k, min_segment);
  return mann_whitney_profile(x, min_segment).at(k);
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov

/// Raw two-sample statistic sup_x |F_1:k - F_k+1:n| for one split.
inline double ks_statistic(std::span<const double> x, std::size_t k) {
  detail::require_finite(x);
  if (k < 1 || k >= x.size()) throw std::invalid_argument("split index outside [1, n-1]");
  std::vector<double> a(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<double> b(x.begin() + static_cast<std::ptrdiff_t>(k), x.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double sup = 0.0;
  while (i < a.size() || j < b.size()) {
    const double v = (j >= b.size() || (i < a.size() && a[i] <= b[j])) ? a[i] : b[j];
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    sup = std::max(sup, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return sup;
}

/// Null mean and standard deviation of the scaled KS statistic per split,
/// for samples of length n.
struct KsMoments {
  std::size_t n = 0;
  std::size_t first_k = 0;
  std::vector<double> mean;
  std::vector<double> sd;
};

inline KsMoments ks_null_moments(std::size_t n, const DetectorConfig& cfg) {
  cfg.validate();
  const auto m = static_cast<std::size_t>(cfg.min_segment);
  if (n < 2 * m) throw DataError("series too short: need at least 2*min_segment observations");
  const std::string key = detail::base_key("ks-moments", cfg) + "|n=" + std::to_string(n);
  const std::size_t width = n - 2 * m + 1;
  KsMoments out{n, m, {}, {}};
  auto& cache = ThresholdCache::global();
  if (cfg.use_cache) {
    if (auto hit = cache.load(key, cfg.cache_dir); hit && hit->size() == 2 * width) {
      out.mean.assign(hit->begin(), hit->begin() + static_cast<std::ptrdiff_t>(width));
      out.sd.assign(hit->begin() + static_cast<std::ptrdiff_t>(width), hit->end());
      return out;
    }
  }
  const std::uint64_t base = mix_seed(cfg.rng_seed, detail::kBatchMoments);
  detail::blocked_moments(
      static_cast<std::size_t>(cfg.mc_replicates), width,
      [&](std::size_t r, std::vector<double>& s, std::vector<double>& q) {
        Rng rng(mix_seed(base, r));
        std::vector<double> x(n);
        for (auto& v : x) v = detail::draw_null(rng, cfg.null_distribution);
        const auto prof = detail::ks_scaled_profile(x, m, m);
        for (std::size_t i = 0; i < width; ++i) {
          s[i] += prof[i];
          q[i] += prof[i] * prof[i];
        }
      },
      out.mean, out.sd);
  detail::finish_moments(static_cast<std::size_t>(cfg.mc_replicates), out.mean, out.sd);
  if (cfg.use_cache) {
    std::vector<double> blob(out.mean);
    blob.insert(blob.end(), out.sd.begin(), out.sd.end());
    cache.store(key, blob, cfg.cache_dir);
  }
  return out;
}

/// Scaled KS statistic for every split, standardised by its null moments.
/// The statistic is one-sided: large positive values indicate a change.
inline StatisticProfile ks_profile(std::span<const double> x, const DetectorConfig& cfg, const KsMoments& moments) {
  detail::require_finite(x);
  const auto m = static_cast<std::size_t>(cfg.min_segment);
  if (x.size() < 2 * m) throw DataError("series too short: need at least 2*min_segment observations");
  if (moments.n != x.size() || moments.first_k != m) throw std::invalid_argument("KS moments do not match series");
  const auto raw = detail::ks_scaled_profile(x, m, m);
  StatisticProfile p;
  p.first_k = m;
  p.values.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) p.values[i] = detail::standardise(raw[i], moments.mean[i], moments.sd[i]);
  return p;
}

inline StatisticProfile ks_profile(std::span<const double> x, const DetectorConfig& cfg) {
  return ks_profile(x, cfg, ks_null_moments(x.size(), cfg));
}

inline double ks_norm(std::span<const double> x, std::size_t k, const DetectorConfig& cfg) {
  detail::check_split(x.size(), k, cfg.min_segment);
  return ks_profile(x, cfg).at(k);
}

inline StatisticProfile statistic_profile(std::span<const double> x, const DetectorConfig& cfg) {
  return cfg.statistic == TestStatistic::MannWhitney ? mann_whitney_profile(x, cfg.min_segment) : ks_profile(x, cfg);
}

// ---------------------------------------------------------------------------
// Phase I

/// Upper-alpha quantile of D_n = max_k statistic under the null, by
/// simulation of cfg.mc_replicates samples of length n.
inline double batch_threshold(std::size_t n, const DetectorConfig& cfg) {
  cfg.validate();
  const auto m = static_cast<std::size_t>(cfg.min_segment);
  if (n < 2 * m) throw DataError("series too short: need at least 2*min_segment observations");
  const std::string key =
      detail::base_key("batch", cfg) + "|alpha=" + detail::key_double(cfg.alpha) + "|n=" + std::to_string(n);
  auto& cache = ThresholdCache::global();
  if (cfg.use_cache) {
    if (auto hit = cache.load(key, cfg.cache_dir); hit && hit->size() == 1) return (*hit)[0];
  }
  std::optional<KsMoments> moments;
  if (cfg.statistic == TestStatistic::KolmogorovSmirnov) moments = ks_null_moments(n, cfg);
  const auto reps = static_cast<std::size_t>(cfg.mc_replicates);
  std::vector<double> dn(reps);
  const std::uint64_t base = mix_seed(cfg.rng_seed, detail::kBatchNull);
  parallel_for(reps, [&](std::size_t r) {
    Rng rng(mix_seed(base, r));
    std::vector<double> x(n);
    for (auto& v : x) v = detail::draw_null(rng, cfg.null_distribution);
    dn[r] = moments ? ks_profile(x, cfg, *moments).max() : mann_whitney_profile(x, cfg.min_segment).max();
  });
  std::sort(dn.begin(), dn.end());
  auto idx = static_cast<std::size_t>(std::ceil((1.0 - cfg.alpha) * static_cast<double>(reps)));
  idx = std::clamp<std::size_t>(idx, 1, reps) - 1;
  const double h = dn[idx];
  if (cfg.use_cache) cache.store(key, {h}, cfg.cache_dir);
  return h;
}

/// Single change-point test on the whole series. Returns the estimated
/// change (argmax, earliest on ties) only when D_n exceeds h_n.
inline std::optional<BatchDetection> batch_detect(std::span<const double> x, const DetectorConfig& cfg) {
  cfg.validate();
  const auto prof = statistic_profile(x, cfg);
  const double h = batch_threshold(x.size(), cfg);
  const std::size_t k = prof.argmax();
  const double d = prof.at(k);
  if (d > h) return BatchDetection{k, d, h};
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Phase II

namespace detail {

/// Per-replicate D_t for t = 2m..n_max (Mann-Whitney), no ties assumed.
inline void mw_null_stream(Rng& rng, NullDistribution dist, std::size_t n_max, std::size_t m, std::size_t tail,
                           float* out) {
  std::vector<double> x;
  x.reserve(n_max);
  std::vector<std::int64_t> u2;
  u2.reserve(n_max + 1);
  for (std::size_t t = 1; t <= n_max; ++t) {
    const double v = draw_null(rng, dist);
    x.push_back(v);
    u2.push_back(0);
    std::int64_t cnt = 0;
    for (std::size_t k = 1; k < t; ++k) {
      cnt += 2 * static_cast<std::int64_t>(x[k - 1] > v);
      u2[k] += cnt;
    }
    if (t >= 2 * m) out[t - 2 * m] = static_cast<float>(mw_window_max(u2, t, m, tail, 0));
  }
}

inline double ks_window_max(std::span<const double> w, std::size_t m, std::size_t tail, const ThresholdTable& table,
                            std::size_t* argmax = nullptr) {
  const std::size_t t = w.size();
  const auto raw = ks_scaled_profile(w, m, tail);
  double best = -std::numeric_limits<double>::infinity();
  std::size_t best_k = m;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const std::size_t k = m + i;
    const std::size_t at = ThresholdTable::tri(k, t);
    const double z = standardise(raw[i], table.ks_mean[at], table.ks_sd[at]);
    if (z > best) {
      best = z;
      best_k = k;
    }
  }
  if (argmax) *argmax = best_k;
  return best;
}

inline ThresholdTable simulate_sequential_table(std::size_t n_max, const DetectorConfig& cfg) {
  const auto m = static_cast<std::size_t>(cfg.min_segment);
  const auto tail = static_cast<std::size_t>(cfg.sequential_min_tail);
  const auto reps = static_cast<std::size_t>(cfg.mc_replicates);
  ThresholdTable table;
  table.n_max = n_max;
  table.min_segment = cfg.min_segment;
  table.h.assign(n_max + 1, std::numeric_limits<double>::infinity());
  if (n_max < 2 * m) return table;

  const bool ks = cfg.statistic == TestStatistic::KolmogorovSmirnov;
  auto draw_stream = [&](std::uint64_t base, std::size_t r) {
    Rng rng(mix_seed(base, r));
    std::vector<double> x(n_max);
    for (auto& v : x) v = draw_null(rng, cfg.null_distribution);
    return x;
  };

  if (ks) {
    // First pass: null moments of the scaled statistic for each (k, t).
    const std::size_t width = ThresholdTable::tri(0, n_max + 1);
    const std::uint64_t base = mix_seed(cfg.rng_seed, kSeqMoments);
    blocked_moments(
        reps, width,
        [&](std::size_t r, std::vector<double>& s, std::vector<double>& q) {
          const auto x = draw_stream(base, r);
          for (std::size_t t = 2 * m; t <= n_max; ++t) {
            const auto prof = ks_scaled_profile(std::span<const double>(x.data(), t), m, tail);
            for (std::size_t i = 0; i < prof.size(); ++i) {
              const std::size_t at = ThresholdTable::tri(m + i, t);
              s[at] += prof[i];
              q[at] += prof[i] * prof[i];
            }
          }
        },
        table.ks_mean, table.ks_sd);
    finish_moments(reps, table.ks_mean, table.ks_sd);
  }

  // D_t for every replicate and window length; thresholds are then set one
  // t at a time among the replicates that have not yet signalled.
  const std::size_t cols = n_max - 2 * m + 1;
  std::vector<float> d(reps * cols);
  const std::uint64_t base = mix_seed(cfg.rng_seed, kSeqNull);
  parallel_for(reps, [&](std::size_t r) {
    float* row = d.data() + r * cols;
    if (!ks) {
      Rng rng(mix_seed(base, r));
      mw_null_stream(rng, cfg.null_distribution, n_max, m, tail, row);
      return;
    }
    const auto x = draw_stream(base, r);
    for (std::size_t t = 2 * m; t <= n_max; ++t) {
      row[t - 2 * m] = static_cast<float>(ks_window_max(std::span<const double>(x.data(), t), m, tail, table));
    }
  });

  const double level = 1.0 / cfg.arl0;
  std::vector<std::size_t> alive(reps);
  std::iota(alive.begin(), alive.end(), std::size_t{0});
  std::vector<float> vals;
  for (std::size_t c = 0; c < cols && !alive.empty(); ++c) {
    vals.resize(alive.size());
    for (std::size_t i = 0; i < alive.size(); ++i) vals[i] = d[alive[i] * cols + c];
    const auto idx = static_cast<std::size_t>(std::floor(level * static_cast<double>(vals.size())));
    std::nth_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(idx), vals.end(), std::greater<>());
    const float h = vals[idx];
    table.h[2 * m + c] = h;
    std::erase_if(alive, [&](std::size_t r) { return d[r * cols + c] > h; });
  }
  return table;
}

inline std::vector<double> pack_table(const ThresholdTable& t) {
  std::vector<double> blob{static_cast<double>(t.n_max)};
  blob.insert(blob.end(), t.h.begin(), t.h.end());
  blob.insert(blob.end(), t.ks_mean.begin(), t.ks_mean.end());
  blob.insert(blob.end(), t.ks_sd.begin(), t.ks_sd.end());
  return blob;
}

/// Restores a cached table, truncated to n_max. Tables are prefix
/// consistent: replicate r always uses the same seeded stream, so the
/// thresholds for t <= n_max do not depend on how far the simulation ran.
inline std::optional<ThresholdTable> unpack_table(const std::vector<double>& blob, std::size_t n_max, int m,
                                                  bool ks) {
  if (blob.empty()) return std::nullopt;
  const auto stored = static_cast<std::size_t>(blob[0]);
  if (stored < n_max) return std::nullopt;
  const std::size_t h_len = stored + 1;
  const std::size_t tri_len = ks ? ThresholdTable::tri(0, stored + 1) : 0;
  if (blob.size() != 1 + h_len + 2 * tri_len) return std::nullopt;
  ThresholdTable t;
  t.n_max = n_max;
  t.min_segment = m;
  auto it = blob.begin() + 1;
  t.h.assign(it, it + static_cast<std::ptrdiff_t>(n_max + 1));
  if (ks) {
    const std::size_t need = ThresholdTable::tri(0, n_max + 1);
    auto mb = blob.begin() + 1 + static_cast<std::ptrdiff_t>(h_len);
    t.ks_mean.assign(mb, mb + static_cast<std::ptrdiff_t>(need));
    auto sb = mb + static_cast<std::ptrdiff_t>(tri_len);
    t.ks_sd.assign(sb, sb + static_cast<std::ptrdiff_t>(need));
  }
  return t;
}

}  // namespace detail

/// Conditional thresholds h_t for window lengths up to n_max such that,
/// among null streams with no signal before t, a fraction 1/arl0 signals at
/// t. Cached on disk; a cached table for a longer horizon is reused.
inline ThresholdTable null_thresholds(std::size_t n_max, const DetectorConfig& cfg) {
  cfg.validate();
  const bool ks = cfg.statistic == TestStatistic::KolmogorovSmirnov;
  const std::string key = detail::base_key("sequential", cfg) + "|arl0=" + detail::key_double(cfg.arl0);
  auto& cache = ThresholdCache::global();
  if (!cfg.use_cache) return detail::simulate_sequential_table(n_max, cfg);
  if (auto hit = cache.load(key, cfg.cache_dir)) {
    if (auto t = detail::unpack_table(*hit, n_max, cfg.min_segment, ks)) return *t;
  }
  std::lock_guard lock(cache.generation_mutex());
  if (auto hit = cache.load(key, cfg.cache_dir)) {
    if (auto t = detail::unpack_table(*hit, n_max, cfg.min_segment, ks)) return *t;
  }
  auto table = detail::simulate_sequential_table(n_max, cfg);
  cache.store(key, detail::pack_table(table), cfg.cache_dir);
  return table;
}

/// Multiple change points by repeated sequential testing. Uses `table`,
/// which must cover window lengths up to x.size().
inline DetectionResult sequential_detect(std::span<const double> x, const DetectorConfig& cfg,
                                         const ThresholdTable& table) {
  cfg.validate();
  detail::require_finite(x);
  DetectionResult result;
  const auto m = static_cast<std::size_t>(cfg.min_segment);
  const std::size_t n = x.size();
  if (n < 2 * m) {
    result.warning = "series shorter than 2*min_segment; no test performed";
    return result;
  }
  if (table.n_max < n || table.min_segment != cfg.min_segment) {
    throw std::invalid_argument("threshold table does not cover the series");
  }
  const bool ks = cfg.statistic == TestStatistic::KolmogorovSmirnov;
  const auto tail = static_cast<std::size_t>(cfg.sequential_min_tail);
  std::vector<TimeIndex> cps;
  std::size_t start = 0;
  while (start + 2 * m <= n) {
    std::vector<double> w;
    std::vector<std::int64_t> u2;
    std::map<double, std::int64_t> counts;
    std::int64_t ties = 0;
    bool restarted = false;
    for (std::size_t p = start; p < n; ++p) {
      const double v = x[p];
      w.push_back(v);
      const std::size_t t = w.size();
      if (!ks) {
        u2.push_back(0);
        std::int64_t cnt = 0;
        for (std::size_t k = 1; k < t; ++k) {
          cnt += 2 * static_cast<std::int64_t>(w[k - 1] > v) + static_cast<std::int64_t>(w[k - 1] == v);
          u2[k] += cnt;
        }
        auto& c = counts[v];
        ties += 3 * c * c + 3 * c;
        ++c;
      }
      if (t < 2 * m) continue;
      std::size_t k_hat = m;
      const double dt = ks ? detail::ks_window_max(w, m, tail, table, &k_hat)
                          : detail::mw_window_max(u2, t, m, tail, ties, &k_hat);
      if (dt > table.h[t]) {
        cps.push_back(static_cast<TimeIndex>(start + k_hat));
        result.statistics.push_back(dt);
        result.thresholds.push_back(table.h[t]);
        result.detection_times.push_back(p);
        start += k_hat;
        restarted = true;
        break;
      }
    }
    if (!restarted) break;
  }
  result.change_points = ChangePointSet(std::move(cps));
  return result;
}

inline DetectionResult sequential_detect(std::span<const double> x, const DetectorConfig& cfg) {
  cfg.validate();
  const auto m = static_cast<std::size_t>(cfg.min_segment);
  if (x.size() < 2 * m) return sequential_detect(x, cfg, ThresholdTable{x.size(), cfg.min_segment, {}, {}, {}});
  return sequential_detect(x, cfg, null_thresholds(x.size(), cfg));
}

}  // namespace cpdist
