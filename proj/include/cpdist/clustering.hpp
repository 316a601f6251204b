#pragma once

// Spectral clustering on the unnormalised graph Laplacian of a distance
// matrix, seeded k-means, and agglomerative hierarchical clustering with
// Newick output.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpdist/errors.hpp"
#include "cpdist/matrix_analysis.hpp"
#include "cpdist/parallel.hpp"
#include "cpdist/rng.hpp"

namespace cpdist {

struct AffinityMatrix {
  Eigen::MatrixXd values;
  std::string metric;
};

struct LaplacianMatrix {
  Eigen::MatrixXd values;
  SymmetricEigen eigen;  // kept for the spectral embedding
};

/// Cluster labels 1..k, one per series.
struct ClusterAssignment {
  std::vector<int> labels;
  int k = 0;

  friend bool operator==(const ClusterAssignment&, const ClusterAssignment&) = default;
};

/// Renumbers labels by first occurrence so equal partitions compare equal.
inline ClusterAssignment canonicalize(const std::vector<int>& raw) {
  std::map<int, int> remap;
  ClusterAssignment out;
  out.labels.reserve(raw.size());
  for (int r : raw) {
    auto [it, inserted] = remap.try_emplace(r, static_cast<int>(remap.size()) + 1);
    out.labels.push_back(it->second);
  }
  out.k = static_cast<int>(remap.size());
  return out;
}

/// Fraction of point pairs on which two partitions agree.
inline double rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("partitions have different sizes");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) agree += ((a[i] == a[j]) == (b[i] == b[j]));
  }
  return static_cast<double>(agree) / static_cast<double>(n * (n - 1) / 2);
}

inline double rand_index(const ClusterAssignment& a, const ClusterAssignment& b) { return rand_index(a.labels, b.labels); }

/// A_ij = 1 - D_ij / max D, with an exact unit diagonal.
inline AffinityMatrix to_affinity(const DistanceMatrix& d) {
  const double mx = d.values.size() ? d.values.maxCoeff() : 0.0;
  if (!(mx > 0.0)) throw DataError("degenerate collection: all sets identical");
  AffinityMatrix a{Eigen::MatrixXd::Ones(d.values.rows(), d.values.cols()) - d.values / mx, d.metric.name()};
  a.values.diagonal().setOnes();
  return a;
}

/// L = E - A with E the diagonal degree matrix. Checks that L is positive
/// semi-definite up to rounding.
inline LaplacianMatrix laplacian(const AffinityMatrix& a) {
  LaplacianMatrix l;
  l.values = -a.values;
  l.values.diagonal() += a.values.rowwise().sum();
  l.eigen = symmetric_eigen(l.values);
  const double scale = std::max(1.0, l.values.cwiseAbs().maxCoeff());
  if (l.eigen.values.size() && l.eigen.values.minCoeff() < -1e-9 * scale) {
    throw NumericalError("graph Laplacian is not positive semi-definite");
  }
  return l;
}

struct KMeansOptions {
  int restarts = 10;
  int max_iterations = 300;
  double tolerance = 1e-8;
};

struct KMeansResult {
  std::vector<int> labels;  // 0-based
  Eigen::MatrixXd centroids;
  double inertia = 0.0;
};

namespace detail {

inline std::pair<int, double> nearest_centroid(const Eigen::MatrixXd& x, Eigen::Index i, const Eigen::MatrixXd& c) {
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < c.rows(); ++j) {
    const double dd = (x.row(i) - c.row(j)).squaredNorm();
    if (dd < bd) {
      bd = dd;
      best = static_cast<int>(j);
    }
  }
  return {best, bd};
}

inline KMeansResult kmeans_once(const Eigen::MatrixXd& x, int k, std::uint64_t seed, const KMeansOptions& opt) {
  const Eigen::Index n = x.rows();
  Rng rng(seed);
  // k-means++ seeding.
  Eigen::MatrixXd c(k, x.cols());
  c.row(0) = x.row(rng.uniform_int(0, n - 1));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (int j = 1; j < k; ++j) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int q = 0; q < j; ++q) best = std::min(best, (x.row(i) - c.row(q)).squaredNorm());
      d2[static_cast<std::size_t>(i)] = best;
      total += best;
    }
    Eigen::Index pick = n - 1;
    if (total > 0.0) {
      double u = rng.uniform01() * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        u -= d2[static_cast<std::size_t>(i)];
        if (u < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_int(0, n - 1);
    }
    c.row(j) = x.row(pick);
  }

  KMeansResult res;
  res.labels.assign(static_cast<std::size_t>(n), 0);
  double prev = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto [lab, dd] = nearest_centroid(x, i, c);
      res.labels[static_cast<std::size_t>(i)] = lab;
      inertia += dd;
    }
    // Refill empty clusters with the point farthest from its centroid,
    // taken from a cluster that can spare it.
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int lab : res.labels) ++counts[static_cast<std::size_t>(lab)];
    for (int j = 0; j < k; ++j) {
      if (counts[static_cast<std::size_t>(j)] > 0) continue;
      Eigen::Index far = -1;
      double fd = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const int lab = res.labels[static_cast<std::size_t>(i)];
        if (counts[static_cast<std::size_t>(lab)] <= 1) continue;
        const double dd = (x.row(i) - c.row(lab)).squaredNorm();
        if (dd > fd) {
          fd = dd;
          far = i;
        }
      }
      if (far < 0) break;
      --counts[static_cast<std::size_t>(res.labels[static_cast<std::size_t>(far)])];
      res.labels[static_cast<std::size_t>(far)] = j;
      counts[static_cast<std::size_t>(j)] = 1;
    }
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(k, x.cols());
    for (Eigen::Index i = 0; i < n; ++i) next.row(res.labels[static_cast<std::size_t>(i)]) += x.row(i);
    for (int j = 0; j < k; ++j) {
      if (counts[static_cast<std::size_t>(j)] > 0) next.row(j) /= counts[static_cast<std::size_t>(j)];
      else next.row(j) = c.row(j);
    }
    c = next;
    if (prev - inertia <= opt.tolerance * std::max(1.0, prev) && iter > 0) break;
    prev = inertia;
  }
  res.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [lab, dd] = nearest_centroid(x, i, c);
    res.labels[static_cast<std::size_t>(i)] = lab;
    res.inertia += dd;
  }
  res.centroids = c;
  return res;
}

}  // namespace detail

/// Lloyd's algorithm on the rows of x with k-means++ seeding. Restarts use
/// seeds derived from `seed`; the lowest inertia wins, earliest restart on
/// ties.
inline KMeansResult kmeans(const Eigen::MatrixXd& x, int k, std::uint64_t seed, const KMeansOptions& opt = {}) {
  if (k < 1 || k > x.rows()) throw std::invalid_argument("k must lie in [1, number of points]");
  if (opt.restarts < 1) throw std::invalid_argument("k-means needs at least one restart");
  std::vector<KMeansResult> runs(static_cast<std::size_t>(opt.restarts));
  parallel_for(runs.size(), [&](std::size_t r) { runs[r] = detail::kmeans_once(x, k, mix_seed(seed, r), opt); });
  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (runs[r].inertia < runs[best].inertia) best = r;
  }
  return runs[best];
}

/// Embeds each series as the row of the eigenvectors belonging to the k
/// smallest Laplacian eigenvalues and clusters the rows with k-means.
inline ClusterAssignment spectral_cluster(const DistanceMatrix& d, int k, std::uint64_t seed,
                                          const KMeansOptions& opt = {}) {
  const auto n = static_cast<int>(d.size());
  if (k < 2 || k > n) throw std::invalid_argument("cluster count k must lie in [2, n]");
  const auto lap = laplacian(to_affinity(d));
  const Eigen::MatrixXd f = lap.eigen.vectors.leftCols(k);
  return canonicalize(kmeans(f, k, seed, opt).labels);
}

enum class Linkage { Average, Single, Complete };

inline const char* to_string(Linkage l) {
  switch (l) {
    case Linkage::Average: return "average";
    case Linkage::Single: return "single";
    case Linkage::Complete: return "complete";
  }
  return "?";
}

inline Linkage parse_linkage(const std::string& s) {
  if (s == "average") return Linkage::Average;
  if (s == "single") return Linkage::Single;
  if (s == "complete") return Linkage::Complete;
  throw std::invalid_argument("unknown linkage '" + s + "'");
}

/// Node ids: leaves are 0..n-1, the cluster created by merge s is n + s.
struct Merge {
  std::size_t left = 0;   // smaller node id
  std::size_t right = 0;  // larger node id
  double height = 0.0;
  std::size_t size = 0;
};

struct Dendrogram {
  std::vector<Merge> merges;
  std::vector<std::string> labels;
  Linkage linkage = Linkage::Average;

  std::size_t leaves() const { return labels.size(); }
};

/// Agglomerative clustering with Lance-Williams updates. Among equally close
/// pairs the one with the smallest node ids is merged first.
inline Dendrogram hierarchical_cluster(const DistanceMatrix& d, Linkage linkage = Linkage::Average) {
  const std::size_t n = d.size();
  if (n < 2) throw DataError("hierarchical clustering needs at least two series");
  Dendrogram out;
  out.linkage = linkage;
  out.labels = d.labels.empty() ? default_labels(n) : d.labels;
  Eigen::MatrixXd dist = d.values;
  std::vector<std::size_t> node(n), size(n, 1);
  std::iota(node.begin(), node.end(), std::size_t{0});
  std::vector<bool> active(n, true);
  for (std::size_t step = 0; step + 1 < n; ++step) {
    std::size_t bi = 0, bj = 0;
    double bd = std::numeric_limits<double>::infinity();
    std::pair<std::size_t, std::size_t> bid{SIZE_MAX, SIZE_MAX};
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!active[j]) continue;
        const double v = dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        const std::pair<std::size_t, std::size_t> id{std::min(node[i], node[j]), std::max(node[i], node[j])};
        if (v < bd || (v == bd && id < bid)) {
          bd = v;
          bi = i;
          bj = j;
          bid = id;
        }
      }
    }
    const std::size_t na = size[bi], nb = size[bj];
    for (std::size_t q = 0; q < n; ++q) {
      if (!active[q] || q == bi || q == bj) continue;
      const auto Q = static_cast<Eigen::Index>(q);
      const double da = dist(static_cast<Eigen::Index>(bi), Q);
      const double db = dist(static_cast<Eigen::Index>(bj), Q);
      double nv = 0.0;
      switch (linkage) {
        case Linkage::Single: nv = std::min(da, db); break;
        case Linkage::Complete: nv = std::max(da, db); break;
        case Linkage::Average:
          nv = (static_cast<double>(na) * da + static_cast<double>(nb) * db) / static_cast<double>(na + nb);
          break;
      }
      dist(static_cast<Eigen::Index>(bi), Q) = nv;
      dist(Q, static_cast<Eigen::Index>(bi)) = nv;
    }
    out.merges.push_back({bid.first, bid.second, bd, na + nb});
    node[bi] = n + step;
    size[bi] = na + nb;
    active[bj] = false;
  }
  return out;
}

/// Undoes the k-1 highest merges; each remaining component is a cluster.
inline ClusterAssignment cut_dendrogram(const Dendrogram& dendro, int k) {
  const std::size_t n = dendro.leaves();
  if (k < 1 || static_cast<std::size_t>(k) > n) throw std::invalid_argument("cut size must lie in [1, n]");
  std::vector<std::size_t> parent(2 * n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (std::size_t s = 0; s < n - static_cast<std::size_t>(k); ++s) {
    const auto& m = dendro.merges[s];
    parent[find(m.left)] = n + s;
    parent[find(m.right)] = n + s;
  }
  std::vector<int> raw(n);
  for (std::size_t i = 0; i < n; ++i) raw[i] = static_cast<int>(find(i));
  return canonicalize(raw);
}

inline std::string newick_label(const std::string& name) {
  std::string out = name;
  for (char& c : out) {
    if (c == '(' || c == ')' || c == ',' || c == ':' || c == ';' || c == ' ' || c == '\'' || c == '[' || c == ']') {
      c = '_';
    }
  }
  return out;
}

inline std::string to_newick(const Dendrogram& dendro) {
  const std::size_t n = dendro.leaves();
  if (n == 1) return newick_label(dendro.labels[0]) + ";";
  auto height = [&](std::size_t id) { return id < n ? 0.0 : dendro.merges[id - n].height; };
  auto fmt = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return std::string(buf);
  };
  std::vector<std::string> text(2 * n - 1);
  for (std::size_t i = 0; i < n; ++i) text[i] = newick_label(dendro.labels[i]);
  for (std::size_t s = 0; s < dendro.merges.size(); ++s) {
    const auto& m = dendro.merges[s];
    const double h = m.height;
    text[n + s] = "(" + text[m.left] + ":" + fmt(h - height(m.left)) + "," + text[m.right] + ":" +
                  fmt(h - height(m.right)) + ")";
    text[m.left].clear();
    text[m.right].clear();
  }
  return text[2 * n - 2] + ";";
}

}  // namespace cpdist
