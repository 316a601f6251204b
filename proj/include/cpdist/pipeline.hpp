#pragma once

// End-to-end run: load series or change-point sets, detect changes when
// needed, build the distance matrix, audit it, cluster it and write every
// artifact into one output directory.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cpdist/changepoint.hpp"
#include "cpdist/clustering.hpp"
#include "cpdist/errors.hpp"
#include "cpdist/io.hpp"
#include "cpdist/matrix_analysis.hpp"
#include "cpdist/parallel.hpp"
#include "cpdist/set_metrics.hpp"

#ifndef CPDIST_VERSION
#define CPDIST_VERSION "0.0.0"
#endif

namespace cpdist {

enum class InputKind { Auto, Series, ChangePointSets };
enum class Transform { None, LogReturns };
enum class DetectionMode { Sequential, Batch };

inline InputKind parse_input_kind(const std::string& s) {
  if (s == "auto") return InputKind::Auto;
  if (s == "series") return InputKind::Series;
  if (s == "sets" || s == "changepoints") return InputKind::ChangePointSets;
  throw std::invalid_argument("unknown input kind '" + s + "' (expected auto, series or sets)");
}

inline Transform parse_transform(const std::string& s) {
  if (s == "none") return Transform::None;
  if (s == "log_returns" || s == "log-returns") return Transform::LogReturns;
  throw std::invalid_argument("unknown transform '" + s + "' (expected none or log_returns)");
}

inline DetectionMode parse_detection_mode(const std::string& s) {
  if (s == "sequential") return DetectionMode::Sequential;
  if (s == "batch") return DetectionMode::Batch;
  throw std::invalid_argument("unknown detection mode '" + s + "' (expected sequential or batch)");
}

struct PipelineConfig {
  std::filesystem::path input;
  InputKind input_kind = InputKind::Auto;
  Transform transform = Transform::None;
  DetectionMode mode = DetectionMode::Sequential;
  DetectorConfig detector;
  MetricSpec metric = MetricSpec::mj(1.0);
  std::optional<int> k;
  std::optional<double> epsilon;
  Linkage linkage = Linkage::Average;
  bool normalize_indices = false;  // map indices to parts-per-million of each series' length
  std::filesystem::path output_dir = "cpdist_out";
  std::uint64_t seed = 1;

  /// Canonical text of everything that influences the results. The output
  /// directory is left out so a relocated run hashes the same.
  std::string canonical() const {
    std::ostringstream os;
    os << "input=" << input.generic_string() << ";kind=" << static_cast<int>(input_kind)
       << ";transform=" << static_cast<int>(transform) << ";mode=" << static_cast<int>(mode)
       << ";statistic=" << to_string(detector.statistic) << ";alpha=" << detail::key_double(detector.alpha)
       << ";arl0=" << detail::key_double(detector.arl0) << ";min_segment=" << detector.min_segment
       << ";tail=" << detector.sequential_min_tail << ";replicates=" << detector.mc_replicates
       << ";detector_seed=" << detector.rng_seed << ";metric=" << metric.name()
       << ";k=" << (k ? std::to_string(*k) : "auto")
       << ";epsilon=" << (epsilon ? detail::key_double(*epsilon) : "auto") << ";linkage=" << to_string(linkage)
       << ";normalize=" << normalize_indices << ";seed=" << seed;
    return os.str();
  }
};

struct RunReport {
  std::vector<std::string> labels;
  std::vector<ChangePointSet> sets;
  std::vector<DetectionResult> detections;  // empty when sets were read directly
  DistanceMatrix distances;
  std::optional<TransitivityReport> transitivity;  // needs at least three series
  EigenReport eigen;
  ClusterAssignment clusters;
  Dendrogram dendrogram;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string version = CPDIST_VERSION;
};

/// Heuristic cluster count when none is given: the majority group plus one
/// cluster per remaining series, kept within [2, n].
inline int default_cluster_count(const EigenReport& eig, std::size_t n) {
  const auto rest = static_cast<int>(n) - static_cast<int>(eig.majority_cluster_size);
  return std::clamp(1 + rest, 2, static_cast<int>(n));
}

namespace detail {

inline InputKind sniff_input(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  while (std::getline(in, line) && blank(line)) {
  }
  const auto cells = split_csv(line);
  for (std::size_t c = 1; c < cells.size(); ++c) {
    if (!cells[c].empty() && !parse_int(cells[c])) return InputKind::Series;
  }
  // A lone header cell is a one-column series file; "label" alone is an
  // empty set, which the distance stage reports.
  if (cells.size() == 1) {
    std::string next;
    while (std::getline(in, next) && blank(next)) {
    }
    const auto nc = split_csv(next);
    if (!next.empty() && nc.size() == 1 && parse_double(nc[0])) return InputKind::Series;
  }
  return InputKind::ChangePointSets;
}

template <class Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  const std::string prefix = std::string("stage '") + name + "': ";
  try {
    return fn();
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(prefix + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(prefix + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(prefix + e.what());
  }
}

}  // namespace detail

/// Everything except file output.
inline RunReport analyse(const PipelineConfig& cfg) {
  RunReport rep;
  rep.seed = cfg.seed;
  char hash[24];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(cfg.canonical())));
  rep.config_hash = hash;

  std::vector<Series> series;
  bool detect = false;
  detail::stage("load", [&] {
    const auto kind = cfg.input_kind == InputKind::Auto ? detail::sniff_input(cfg.input) : cfg.input_kind;
    if (kind == InputKind::ChangePointSets) {
      auto ls = load_changepoint_sets(cfg.input);
      rep.labels = std::move(ls.labels);
      rep.sets = std::move(ls.sets);
      return 0;
    }
    series = load_csv(cfg.input);
    if (cfg.transform == Transform::LogReturns) {
      for (auto& s : series) s = log_returns(s);
    }
    detect = true;
    return 0;
  });

  if (detect) {
    detail::stage("detect", [&] {
      cfg.detector.validate();
      const auto m = static_cast<std::size_t>(cfg.detector.min_segment);
      std::size_t n_max = 0;
      for (const auto& s : series) n_max = std::max(n_max, s.values.size());
      std::optional<ThresholdTable> table;
      if (cfg.mode == DetectionMode::Sequential && n_max >= 2 * m) table = null_thresholds(n_max, cfg.detector);
      rep.detections.resize(series.size());
      parallel_for(series.size(), [&](std::size_t i) {
        const auto& x = series[i].values;
        DetectionResult r;
        if (x.size() < 2 * m) {
          r.warning = "series shorter than 2*min_segment; no test performed";
        } else if (cfg.mode == DetectionMode::Sequential) {
          r = sequential_detect(x, cfg.detector, *table);
        } else if (auto b = batch_detect(x, cfg.detector)) {
          r.change_points = ChangePointSet({static_cast<TimeIndex>(b->change_point)});
          r.statistics = {b->statistic};
          r.thresholds = {b->threshold};
          r.detection_times = {x.size() - 1};
        }
        rep.detections[i] = std::move(r);
      });
      for (std::size_t i = 0; i < series.size(); ++i) {
        rep.labels.push_back(series[i].label);
        auto pts = rep.detections[i].change_points.vector();
        if (cfg.normalize_indices && !series[i].values.empty()) {
          const auto len = static_cast<TimeIndex>(series[i].values.size());
          for (auto& p : pts) p = p * 1000000 / len;
        }
        rep.sets.push_back(ChangePointSet::from_unsorted(std::move(pts)));
      }
      return 0;
    });
  }

  rep.distances = detail::stage("distance", [&] { return build_distance_matrix(rep.sets, cfg.metric, rep.labels); });
  const std::size_t n = rep.distances.size();
  if (n >= 3) rep.transitivity = detail::stage("transitivity", [&] { return transitivity_audit(rep.distances); });
  rep.eigen = detail::stage("eigen", [&] { return eigen_report(rep.distances, cfg.epsilon); });
  rep.clusters = detail::stage("cluster", [&] {
    const int k = cfg.k.value_or(default_cluster_count(rep.eigen, n));
    return spectral_cluster(rep.distances, k, cfg.seed);
  });
  rep.dendrogram = detail::stage("dendrogram", [&] { return hierarchical_cluster(rep.distances, cfg.linkage); });
  return rep;
}

inline Json report_json(const RunReport& rep, const PipelineConfig& cfg) {
  Json series = Json::array();
  for (std::size_t i = 0; i < rep.sets.size(); ++i) {
    Json s{{"label", rep.labels[i]}, {"change_points", rep.sets[i].vector()}};
    if (!rep.detections.empty()) s["detection"] = to_json(rep.detections[i]);
    series.push_back(std::move(s));
  }
  return Json{{"provenance", {{"version", rep.version}, {"config_hash", rep.config_hash}, {"seed", rep.seed},
                              {"config", cfg.canonical()}}},
              {"metric", rep.distances.metric.name()},
              {"n_series", rep.sets.size()},
              {"series", series},
              {"transitivity", rep.transitivity ? to_json(*rep.transitivity) : Json(nullptr)},
              {"eigen", to_json(rep.eigen)},
              {"k", rep.clusters.k},
              {"clusters", to_json(rep.labels, rep.clusters)},
              {"dendrogram", to_json(rep.dendrogram)}};
}

/// Runs the analysis and writes changepoints.csv, distmat_<metric>.csv,
/// transitivity.json, eigen.json, clusters.csv, dendrogram.newick,
/// dendrogram.json and report.json. If any stage fails, files written by
/// this run are removed before the error propagates.
inline RunReport run_pipeline(const PipelineConfig& cfg) {
  auto rep = analyse(cfg);
  std::vector<std::filesystem::path> written;
  try {
    detail::stage("write", [&] {
      std::error_code ec;
      std::filesystem::create_directories(cfg.output_dir, ec);
      if (ec) throw DataError("cannot create output directory '" + cfg.output_dir.string() + "'");
      auto emit = [&](const std::string& name, const std::string& text) {
        const auto path = cfg.output_dir / name;
        written.push_back(path);
        write_text(path, text);
      };
      std::ostringstream cp, dm, cl;
      write_changepoint_sets(cp, rep.labels, rep.sets);
      emit("changepoints.csv", cp.str());
      write_distance_matrix(dm, rep.distances);
      emit("distmat_" + rep.distances.metric.name() + ".csv", dm.str());
      emit("transitivity.json", (rep.transitivity ? to_json(*rep.transitivity) : Json(nullptr)).dump(2) + "\n");
      emit("eigen.json", to_json(rep.eigen).dump(2) + "\n");
      write_clusters(cl, rep.labels, rep.clusters);
      emit("clusters.csv", cl.str());
      emit("dendrogram.newick", to_newick(rep.dendrogram) + "\n");
      emit("dendrogram.json", to_json(rep.dendrogram).dump(2) + "\n");
      emit("report.json", report_json(rep, cfg).dump(2) + "\n");
      return 0;
    });
  } catch (...) {
    std::error_code ec;
    for (const auto& p : written) std::filesystem::remove(p, ec);
    throw;
  }
  return rep;
}

}  // namespace cpdist
