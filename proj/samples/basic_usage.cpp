// Detect changes in a few synthetic series, compare the resulting sets
// under MJ_1 and cluster them.

#include <cstdio>
#include <vector>

#include "cpdist/cpdist.hpp"

int main() {
  using namespace cpdist;

  // Four series: two shift level near t=100, two near t=60 and t=140.
  Rng rng(42);
  auto make = [&](std::vector<std::pair<std::size_t, double>> regimes, std::size_t n) {
    std::vector<double> x(n);
    for (std::size_t t = 0; t < n; ++t) {
      double level = 0.0;
      for (auto [start, mu] : regimes)
        if (t >= start) level = mu;
      x[t] = level + rng.normal();
    }
    return x;
  };
  std::vector<std::vector<double>> series{make({{0, 0.0}, {100, 4.0}}, 200), make({{0, 0.0}, {101, 4.0}}, 200),
                                          make({{0, 0.0}, {60, 4.0}, {140, 0.0}}, 200),
                                          make({{0, 0.0}, {62, 4.0}, {139, 0.0}}, 200)};

  DetectorConfig cfg;
  cfg.arl0 = 500;
  cfg.mc_replicates = 5000;
  const auto table = null_thresholds(200, cfg);

  std::vector<ChangePointSet> sets;
  for (std::size_t i = 0; i < series.size(); ++i) {
    auto r = sequential_detect(series[i], cfg, table);
    std::printf("TS%zu:", i + 1);
    for (auto cp : r.change_points) std::printf(" %lld", static_cast<long long>(cp));
    std::printf("\n");
    sets.push_back(r.change_points.empty() ? ChangePointSet{0} : r.change_points);
  }

  const auto d = build_distance_matrix(sets, MetricSpec::mj(1.0));
  std::printf("MJ_1 distance matrix:\n");
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < d.size(); ++j) std::printf(" %8.3f", d(i, j));
    std::printf("\n");
  }

  const auto clusters = spectral_cluster(d, 2, 7);
  std::printf("clusters:");
  for (int c : clusters.labels) std::printf(" %d", c);
  std::printf("\n%s\n", to_newick(hierarchical_cluster(d)).c_str());
  return 0;
}
