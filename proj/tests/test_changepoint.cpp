#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <vector>

#include "cpdist/changepoint.hpp"
#include "support/oracles.hpp"

using namespace cpdist;
using Catch::Approx;

namespace {

std::vector<double> normals(Rng& rng, std::size_t n, double mu = 0.0) {
  std::vector<double> x(n);
  for (auto& v : x) v = mu + rng.normal();
  return x;
}

// Consecutive regimes of the given lengths and means, unit variance.
std::vector<double> regimes(Rng& rng, std::initializer_list<std::pair<std::size_t, double>> parts) {
  std::vector<double> x;
  for (auto [len, mu] : parts)
    for (std::size_t i = 0; i < len; ++i) x.push_back(mu + rng.normal());
  return x;
}

// Tie-corrected |z| straight from the textbook variance formula.
double mw_z_ties(const std::vector<double>& x, std::size_t k) {
  const double n = static_cast<double>(x.size()), kk = static_cast<double>(k);
  std::map<double, int> counts;
  for (double v : x) ++counts[v];
  double t = 0;
  for (auto [v, c] : counts) t += static_cast<double>(c) * c * c - c;
  const double var = kk * (n - kk) / 12.0 * ((n + 1.0) - t / (n * (n - 1.0)));
  return std::abs(oracle::mw_u(x, k) - kk * (n - kk) / 2.0) / std::sqrt(var);
}

DetectorConfig quick(TestStatistic s = TestStatistic::MannWhitney) {
  DetectorConfig c;
  c.statistic = s;
  c.mc_replicates = 2000;
  c.min_segment = 10;
  c.use_cache = false;
  return c;
}

}  // namespace

TEST_CASE("Mann-Whitney profile matches pair counting", "[changepoint]") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const auto x = normals(rng, 60);
    const auto p = mann_whitney_profile(x, 5);
    REQUIRE(p.first_k == 5);
    REQUIRE(p.last_k() == 55);
    for (std::size_t k = 5; k <= 55; ++k) CHECK(p.at(k) == Approx(oracle::mw_z(x, k)).epsilon(1e-10));
  }
}

TEST_CASE("Mann-Whitney tie correction", "[changepoint]") {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> x(50);
    for (auto& v : x) v = static_cast<double>(rng.uniform_int(0, 6));
    const auto p = mann_whitney_profile(x, 4);
    for (std::size_t k = 4; k <= 46; ++k) CHECK(p.at(k) == Approx(mw_z_ties(x, k)).epsilon(1e-10).margin(1e-12));
  }
  const std::vector<double> flat(40, 2.5);
  const auto p = mann_whitney_profile(flat, 5);
  CHECK(p.max() == 0.0);
}

TEST_CASE("KS statistic matches CDF enumeration", "[changepoint]") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> x(40);
    for (auto& v : x) v = trial % 2 ? rng.normal() : static_cast<double>(rng.uniform_int(0, 5));
    for (std::size_t k = 1; k < x.size(); ++k) CHECK(ks_statistic(x, k) == Approx(oracle::ks(x, k)).margin(1e-12));
  }
}

TEST_CASE("statistics depend only on ranks", "[changepoint]") {
  Rng rng(6);
  const auto x = normals(rng, 80);
  std::vector<double> y(x.size());
  std::transform(x.begin(), x.end(), y.begin(), [](double v) { return std::exp(3 * v) - 7.0; });
  const auto a = mann_whitney_profile(x, 10), b = mann_whitney_profile(y, 10);
  for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == Approx(b.values[i]).epsilon(1e-12));
  auto cfg = quick(TestStatistic::KolmogorovSmirnov);
  const auto ka = ks_profile(x, cfg), kb = ks_profile(y, cfg);
  for (std::size_t i = 0; i < ka.values.size(); ++i) CHECK(ka.values[i] == kb.values[i]);
}

TEST_CASE("reversing the series mirrors the split", "[changepoint]") {
  Rng rng(8);
  const auto x = normals(rng, 70);
  std::vector<double> r(x.rbegin(), x.rend());
  const auto a = mann_whitney_profile(x, 7), b = mann_whitney_profile(r, 7);
  for (std::size_t k = 7; k <= 63; ++k) {
    CHECK(a.at(k) == Approx(b.at(70 - k)).epsilon(1e-12));
    CHECK(ks_statistic(x, k) == Approx(ks_statistic(r, 70 - k)).margin(1e-15));
  }
}

TEST_CASE("invalid inputs are rejected", "[changepoint]") {
  std::vector<double> x(30, 0.0);
  x[4] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(mann_whitney_profile(x, 5), DataError);
  CHECK_THROWS_AS(mann_whitney_profile(std::vector<double>(9, 1.0), 5), DataError);
  CHECK_THROWS_AS(mann_whitney_norm(std::vector<double>(30, 1.0), 3, 5), std::exception);

  auto cfg = quick();
  cfg.alpha = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = quick();
  cfg.arl0 = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = quick();
  cfg.mc_replicates = 10;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = quick();
  cfg.sequential_min_tail = cfg.min_segment + 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK(parse_statistic("ks") == TestStatistic::KolmogorovSmirnov);
  CHECK_THROWS_AS(parse_statistic("t-test"), std::invalid_argument);
}

TEST_CASE("batch thresholds are deterministic and distribution-free", "[changepoint]") {
  auto cfg = quick();
  const double h1 = batch_threshold(100, cfg);
  CHECK(batch_threshold(100, cfg) == h1);
  cfg.null_distribution = NullDistribution::Uniform;
  const double hu = batch_threshold(100, cfg);
  CHECK(hu == Approx(h1).epsilon(0.06));
  cfg.null_distribution = NullDistribution::Normal;
  cfg.rng_seed = 99;
  CHECK(batch_threshold(100, cfg) == Approx(h1).epsilon(0.06));
  cfg.alpha = 0.01;
  CHECK(batch_threshold(100, cfg) > h1);
}

TEST_CASE("batch detection locates an obvious shift", "[changepoint]") {
  Rng rng(12);
  const auto x = regimes(rng, {{100, 0.0}, {100, 3.0}});
  for (auto s : {TestStatistic::MannWhitney, TestStatistic::KolmogorovSmirnov}) {
    const auto d = batch_detect(x, quick(s));
    REQUIRE(d);
    CHECK(std::abs(static_cast<long>(d->change_point) - 100) <= 3);
    CHECK(d->statistic > d->threshold);
  }
}

TEST_CASE("batch detection stays silent on a constant series", "[changepoint]") {
  CHECK_FALSE(batch_detect(std::vector<double>(80, 1.0), quick()));
}

TEST_CASE("sequential tables are prefix-consistent", "[changepoint]") {
  for (auto s : {TestStatistic::MannWhitney, TestStatistic::KolmogorovSmirnov}) {
    auto cfg = quick(s);
    cfg.arl0 = 200;
    const auto a = null_thresholds(80, cfg);
    const auto b = null_thresholds(120, cfg);
    REQUIRE(a.h.size() == 81);
    REQUIRE(b.h.size() == 121);
    for (std::size_t t = 0; t <= 80; ++t) CHECK(a.h[t] == b.h[t]);
    for (std::size_t t = 0; t < 20; ++t) CHECK(std::isinf(a.h[t]));
    CHECK(std::isfinite(a.h[20]));
  }
}

TEST_CASE("first sequential threshold equals a batch threshold at 2m", "[changepoint]") {
  auto cfg = quick();
  cfg.mc_replicates = 20000;
  cfg.arl0 = 20;
  cfg.sequential_min_tail = cfg.min_segment;
  const auto table = null_thresholds(40, cfg);
  auto bcfg = cfg;
  bcfg.alpha = 1.0 / cfg.arl0;
  CHECK(table.h[20] == Approx(batch_threshold(20, bcfg)).epsilon(0.03));
}

TEST_CASE("sequential detection finds both changes", "[changepoint]") {
  // KS tables cost O(R n^3), so the KS run uses shorter regimes.
  for (auto [s, len] : {std::pair{TestStatistic::MannWhitney, std::size_t{150}},
                        std::pair{TestStatistic::KolmogorovSmirnov, std::size_t{50}}}) {
    Rng rng(21);
    const auto x = regimes(rng, {{len, 0.0}, {len, 4.0}, {len, 0.0}});
    auto cfg = quick(s);
    cfg.arl0 = 500;
    const auto r = sequential_detect(x, cfg);
    INFO(to_string(s));
    REQUIRE(r.change_points.size() == 2);
    CHECK(std::abs(r.change_points[0] - static_cast<TimeIndex>(len)) <= 8);
    CHECK(std::abs(r.change_points[1] - static_cast<TimeIndex>(2 * len)) <= 8);
    REQUIRE(r.detection_times.size() == 2);
    CHECK(r.detection_times[0] >= len);
    for (std::size_t i = 0; i < 2; ++i) CHECK(r.statistics[i] > r.thresholds[i]);
    CHECK(r.change_points[0] >= cfg.min_segment);
    CHECK(r.change_points[1] - r.change_points[0] >= cfg.min_segment);
    CHECK(sequential_detect(x, cfg) == r);
  }
}

TEST_CASE("short series produce a warning, not an error", "[changepoint]") {
  const auto r = sequential_detect(std::vector<double>(15, 0.0), quick());
  CHECK(r.change_points.empty());
  CHECK_FALSE(r.warning.empty());
}

TEST_CASE("threshold cache round-trips through disk", "[changepoint]") {
  const std::filesystem::path dir = std::filesystem::path(CPDIST_TEST_TMP) / "cache";
  std::filesystem::remove_all(dir);
  auto cfg = quick();
  cfg.use_cache = true;
  cfg.cache_dir = dir.string();
  ThresholdCache::global().clear_memory();
  const double h = batch_threshold(60, cfg);
  CHECK(std::distance(std::filesystem::directory_iterator(dir), std::filesystem::directory_iterator{}) == 1);
  ThresholdCache::global().clear_memory();
  CHECK(batch_threshold(60, cfg) == h);
  auto nocache = cfg;
  nocache.use_cache = false;
  CHECK(batch_threshold(60, nocache) == h);

  const auto t = null_thresholds(60, cfg);
  ThresholdCache::global().clear_memory();
  const auto shorter = null_thresholds(50, cfg);
  for (std::size_t i = 0; i <= 50; ++i) CHECK(shorter.h[i] == t.h[i]);
  std::filesystem::remove_all(dir);
}
