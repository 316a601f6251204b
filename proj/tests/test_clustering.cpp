#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "cpdist/clustering.hpp"
#include "support/oracles.hpp"

using namespace cpdist;
using Catch::Approx;

namespace {

DistanceMatrix from_points(const std::vector<double>& x) {
  DistanceMatrix d;
  const auto n = static_cast<Eigen::Index>(x.size());
  d.values.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) d.values(i, j) = std::abs(x[i] - x[j]);
  d.labels = default_labels(x.size());
  return d;
}

// Agglomeration that recomputes every cluster distance from the original
// members; slow but free of update formulas.
std::vector<double> naive_heights(const Eigen::MatrixXd& d, Linkage linkage) {
  std::vector<std::vector<Eigen::Index>> clusters;
  for (Eigen::Index i = 0; i < d.rows(); ++i) clusters.push_back({i});
  std::vector<double> heights;
  while (clusters.size() > 1) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t a = 0; a < clusters.size(); ++a)
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        double lo = std::numeric_limits<double>::infinity(), hi = 0, sum = 0;
        for (auto i : clusters[a])
          for (auto j : clusters[b]) {
            lo = std::min(lo, d(i, j));
            hi = std::max(hi, d(i, j));
            sum += d(i, j);
          }
        const double v = linkage == Linkage::Single     ? lo
                         : linkage == Linkage::Complete ? hi
                                                        : sum / double(clusters[a].size() * clusters[b].size());
        if (v < best) {
          best = v;
          bi = a;
          bj = b;
        }
      }
    heights.push_back(best);
    clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bj));
  }
  return heights;
}

}  // namespace

TEST_CASE("canonical labels and the Rand index", "[clustering]") {
  const auto c = canonicalize({7, 7, 3, 9, 3});
  CHECK(c.labels == std::vector<int>{1, 1, 2, 3, 2});
  CHECK(c.k == 3);
  CHECK(rand_index({1, 1, 2, 2}, {5, 5, 6, 6}) == 1.0);
  // Pairs (0,1), (0,2) and (1,2) agree; every pair involving item 3 disagrees.
  CHECK(rand_index({1, 1, 2, 2}, {1, 1, 2, 1}) == Approx(0.5));
  CHECK_THROWS_AS(rand_index({1, 2}, {1}), std::invalid_argument);
}

TEST_CASE("affinity and Laplacian", "[clustering]") {
  const auto d = from_points({0, 1, 5, 6, 20});
  const auto a = to_affinity(d);
  CHECK(a.values.diagonal().isOnes());
  CHECK(a.values.minCoeff() == 0.0);
  CHECK(a.values(0, 1) == Approx(1 - 1.0 / 20));
  const auto l = laplacian(a);
  CHECK(l.values.rowwise().sum().cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(l.eigen.values(0)) < 1e-12);
  CHECK(l.eigen.values.minCoeff() > -1e-12);

  DistanceMatrix same;
  same.values = Eigen::MatrixXd::Zero(3, 3);
  CHECK_THROWS_WITH(to_affinity(same), Catch::Matchers::ContainsSubstring("degenerate"));
}

TEST_CASE("k-means separates well-spaced blobs deterministically", "[clustering]") {
  Rng rng(1);
  Eigen::MatrixXd x(60, 2);
  for (Eigen::Index i = 0; i < 60; ++i) {
    const double cx = (i / 20) * 10.0;
    x(i, 0) = cx + 0.3 * rng.normal();
    x(i, 1) = -cx + 0.3 * rng.normal();
  }
  const auto r = kmeans(x, 3, 5);
  const auto c = canonicalize(r.labels);
  std::vector<int> truth;
  for (int i = 0; i < 60; ++i) truth.push_back(i / 20 + 1);
  CHECK(c.labels == truth);
  const auto again = kmeans(x, 3, 5);
  CHECK(again.labels == r.labels);
  CHECK(again.inertia == r.inertia);
  CHECK(r.inertia <= detail::kmeans_once(x, 3, 12345, {}).inertia + 1e-9);
  CHECK_THROWS_AS(kmeans(x, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(kmeans(x, 61, 1), std::invalid_argument);
}

TEST_CASE("k-means on identical points does not break", "[clustering]") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(6, 2);
  const auto r = kmeans(x, 3, 1);
  CHECK(r.labels.size() == 6);
  CHECK(r.inertia == 0.0);
}

TEST_CASE("spectral clustering recovers block structure", "[clustering]") {
  const auto d = from_points({0, 1, 2, 100, 101, 102, 103, 300, 500});
  const auto c = spectral_cluster(d, 4, 7);
  CHECK(c.labels == std::vector<int>{1, 1, 1, 2, 2, 2, 2, 3, 4});
  CHECK(spectral_cluster(d, 4, 7) == c);
  auto scaled = d;
  scaled.values *= 37.0;
  CHECK(spectral_cluster(scaled, 4, 7) == c);
  CHECK(cut_dendrogram(hierarchical_cluster(scaled), 4) == cut_dendrogram(hierarchical_cluster(d), 4));
  CHECK_THROWS_AS(spectral_cluster(d, 1, 7), std::invalid_argument);
  CHECK_THROWS_AS(spectral_cluster(d, 10, 7), std::invalid_argument);
}

TEST_CASE("hierarchical merge heights match a naive agglomeration", "[clustering]") {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> x;
    for (int i = 0; i < 9; ++i) x.push_back(rng.uniform(0, 1000));
    const auto d = from_points(x);
    for (auto linkage : {Linkage::Single, Linkage::Complete, Linkage::Average}) {
      INFO(to_string(linkage));
      const auto dendro = hierarchical_cluster(d, linkage);
      const auto naive = naive_heights(d.values, linkage);
      REQUIRE(dendro.merges.size() == 8);
      for (std::size_t s = 0; s < 8; ++s) CHECK(dendro.merges[s].height == Approx(naive[s]).epsilon(1e-12));
      for (std::size_t s = 1; s < 8; ++s) CHECK(dendro.merges[s].height >= dendro.merges[s - 1].height - 1e-9);
      CHECK(dendro.merges.back().size == 9);
    }
  }
}

TEST_CASE("dendrogram ties break towards the smallest node ids", "[clustering]") {
  const auto d = from_points({0, 1, 2, 3});
  const auto dendro = hierarchical_cluster(d, Linkage::Single);
  CHECK(dendro.merges[0].left == 0);
  CHECK(dendro.merges[0].right == 1);
  // {0,1} to 2 and 2 to 3 are both at distance 1; (2, 3) has the smaller ids.
  CHECK(dendro.merges[1].left == 2);
  CHECK(dendro.merges[1].right == 3);
  CHECK(dendro.merges[2].left == 4);
  CHECK(dendro.merges[2].right == 5);
}

TEST_CASE("cutting the dendrogram", "[clustering]") {
  const auto d = from_points({0, 1, 5, 6, 20});
  const auto dendro = hierarchical_cluster(d);
  CHECK(cut_dendrogram(dendro, 1).k == 1);
  CHECK(cut_dendrogram(dendro, 5).labels == std::vector<int>{1, 2, 3, 4, 5});
  CHECK(cut_dendrogram(dendro, 3).labels == std::vector<int>{1, 1, 2, 2, 3});
  CHECK_THROWS_AS(cut_dendrogram(dendro, 6), std::invalid_argument);
}

TEST_CASE("Newick output", "[clustering]") {
  auto d = from_points({0, 1, 5, 6, 20});
  d.labels = {"a", "b", "c d", "e:f", "g"};
  CHECK(to_newick(hierarchical_cluster(d)) == "(g:17,((a:1,b:1):4,(c_d:1,e_f:1):4):12);");
  CHECK(to_newick(hierarchical_cluster(d, Linkage::Single)) == "(g:14,((a:1,b:1):3,(c_d:1,e_f:1):3):10);");
  CHECK(parse_linkage("complete") == Linkage::Complete);
  CHECK_THROWS_AS(parse_linkage("ward"), std::invalid_argument);
}
