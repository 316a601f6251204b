#pragma once

// CSV ingestion and emission, plus JSON renderings of the analysis reports.
// Numbers are written with 12 significant digits so outputs diff cleanly.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpdist/changepoint.hpp"
#include "cpdist/clustering.hpp"
#include "cpdist/errors.hpp"
#include "cpdist/matrix_analysis.hpp"
#include "cpdist/set_metrics.hpp"

namespace cpdist {

using Json = nlohmann::ordered_json;

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// JSON number rounded to 12 significant digits; null for inf/nan.
inline Json json_number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return std::stod(format_number(v));
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

/// Splits one CSV record. Double-quoted fields may contain commas and "".
inline std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* b = s.data();
  if (*b == '+') ++b;
  const auto [ptr, ec] = std::from_chars(b, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<std::int64_t> parse_int(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::int64_t v = 0;
  const char* b = s.data();
  if (*b == '+') ++b;
  const auto [ptr, ec] = std::from_chars(b, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return in;
}

inline bool blank(const std::string& line) { return trim(line).empty(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Series

/// Header row of labels, then one row per time step, one column per series.
/// Columns may end early (ragged lengths) but may not have holes.
inline std::vector<Series> parse_series_csv(std::istream& in, const std::string& source = "input") {
  std::string line;
  std::size_t row = 0;
  std::vector<Series> out;
  while (std::getline(in, line)) {
    ++row;
    if (!detail::blank(line)) break;
  }
  if (detail::blank(line)) throw DataError(source + ": empty file");
  for (auto& label : detail::split_csv(line)) out.push_back({label, {}});
  const std::size_t cols = out.size();
  std::vector<bool> ended(cols, false);
  while (std::getline(in, line)) {
    ++row;
    if (detail::blank(line)) continue;
    auto cells = detail::split_csv(line);
    if (cells.size() > cols) {
      throw DataError(source + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                      " cells but the header has " + std::to_string(cols));
    }
    cells.resize(cols);
    for (std::size_t c = 0; c < cols; ++c) {
      const std::string where = source + ": row " + std::to_string(row) + ", column " + std::to_string(c + 1) +
                                " ('" + out[c].label + "')";
      if (cells[c].empty()) {
        ended[c] = true;
        continue;
      }
      if (ended[c]) throw DataError(where + ": value after a blank cell; blanks are only allowed at the end");
      const auto v = detail::parse_double(cells[c]);
      if (!v || !std::isfinite(*v)) throw DataError(where + ": non-numeric value '" + cells[c] + "'");
      out[c].values.push_back(*v);
    }
  }
  return out;
}

inline std::vector<Series> load_csv(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_series_csv(in, path.string());
}

/// r_t = ln(x_{t+1} / x_t).
inline Series log_returns(const Series& s) {
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    if (!(s.values[i] > 0.0)) {
      throw DataError("series '" + s.label + "': log returns need positive values (index " + std::to_string(i) + ")");
    }
  }
  Series r{s.label, {}};
  for (std::size_t i = 1; i < s.values.size(); ++i) r.values.push_back(std::log(s.values[i] / s.values[i - 1]));
  return r;
}

// ---------------------------------------------------------------------------
// Change-point sets: one line per series, "label,i1,i2,..."

struct LabeledSets {
  std::vector<std::string> labels;
  std::vector<ChangePointSet> sets;
};

inline LabeledSets parse_changepoint_sets(std::istream& in, const std::string& source = "input") {
  LabeledSets out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (detail::blank(line)) continue;
    auto cells = detail::split_csv(line);
    std::vector<TimeIndex> pts;
    for (std::size_t c = 1; c < cells.size(); ++c) {
      if (cells[c].empty() && c + 1 == cells.size()) break;  // tolerate a trailing comma
      const auto v = detail::parse_int(cells[c]);
      if (!v) {
        throw DataError(source + ": row " + std::to_string(row) + ", column " + std::to_string(c + 1) +
                        ": not an integer index '" + cells[c] + "'");
      }
      pts.push_back(*v);
    }
    try {
      out.sets.emplace_back(std::move(pts));
    } catch (const DataError& e) {
      throw DataError(source + ": row " + std::to_string(row) + " ('" + cells[0] + "'): " + e.what());
    }
    out.labels.push_back(cells[0]);
  }
  if (out.sets.empty()) throw DataError(source + ": no change-point sets found");
  return out;
}

inline LabeledSets load_changepoint_sets(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_changepoint_sets(in, path.string());
}

inline void write_changepoint_sets(std::ostream& out, const std::vector<std::string>& labels,
                                   const std::vector<ChangePointSet>& sets) {
  for (std::size_t i = 0; i < sets.size(); ++i) {
    out << detail::csv_field(labels.at(i));
    for (TimeIndex p : sets[i]) out << ',' << p;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Distance matrices: header "<metric>,label1,...", then "label,v1,..."

inline void write_distance_matrix(std::ostream& out, const DistanceMatrix& d) {
  const auto labels = d.labels.empty() ? default_labels(d.size()) : d.labels;
  out << d.metric.name();
  for (const auto& l : labels) out << ',' << detail::csv_field(l);
  out << '\n';
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << detail::csv_field(labels[i]);
    for (std::size_t j = 0; j < d.size(); ++j) out << ',' << format_number(d(i, j));
    out << '\n';
  }
}

inline DistanceMatrix parse_distance_matrix(std::istream& in, const std::string& source = "input") {
  std::string line;
  std::size_t row = 0;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!detail::blank(line)) rows.push_back(detail::split_csv(line));
  }
  if (rows.empty()) throw DataError(source + ": empty file");
  DistanceMatrix d;
  try {
    d.metric = MetricSpec::parse(rows[0][0]);
  } catch (const std::invalid_argument& e) {
    throw DataError(source + ": header cell must name the metric (" + e.what() + ")");
  }
  d.labels.assign(rows[0].begin() + 1, rows[0].end());
  const std::size_t n = d.labels.size();
  if (rows.size() != n + 1) throw DataError(source + ": expected " + std::to_string(n) + " matrix rows");
  d.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    row = i + 2;
    const auto& cells = rows[i + 1];
    if (cells.size() != n + 1) throw DataError(source + ": row " + std::to_string(row) + " has the wrong width");
    if (cells[0] != d.labels[i]) throw DataError(source + ": row " + std::to_string(row) + " label does not match header");
    for (std::size_t j = 0; j < n; ++j) {
      const auto v = detail::parse_double(cells[j + 1]);
      if (!v) {
        throw DataError(source + ": row " + std::to_string(row) + ", column " + std::to_string(j + 2) +
                        ": non-numeric value '" + cells[j + 1] + "'");
      }
      d.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = *v;
    }
  }
  d.validate(1e-9);
  return d;
}

inline DistanceMatrix load_distance_matrix(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_distance_matrix(in, path.string());
}

// ---------------------------------------------------------------------------
// Cluster labels: "label,cluster"

inline void write_clusters(std::ostream& out, const std::vector<std::string>& labels, const ClusterAssignment& c) {
  out << "label,cluster\n";
  for (std::size_t i = 0; i < c.labels.size(); ++i) out << detail::csv_field(labels.at(i)) << ',' << c.labels[i] << '\n';
}

struct LabeledClusters {
  std::vector<std::string> labels;
  ClusterAssignment clusters;
};

inline LabeledClusters parse_clusters(std::istream& in, const std::string& source = "input") {
  LabeledClusters out;
  std::vector<int> raw;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (detail::blank(line)) continue;
    const auto cells = detail::split_csv(line);
    if (row == 1 && cells.size() == 2 && cells[0] == "label" && cells[1] == "cluster") continue;
    if (cells.size() != 2) throw DataError(source + ": row " + std::to_string(row) + ": expected 'label,cluster'");
    const auto v = detail::parse_int(cells[1]);
    if (!v) throw DataError(source + ": row " + std::to_string(row) + ": cluster id must be an integer");
    out.labels.push_back(cells[0]);
    raw.push_back(static_cast<int>(*v));
  }
  if (raw.empty()) throw DataError(source + ": no cluster labels found");
  out.clusters = canonicalize(raw);
  return out;
}

inline LabeledClusters load_clusters(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_clusters(in, path.string());
}

// ---------------------------------------------------------------------------
// JSON

inline Json optional_number(const std::optional<double>& v) { return v ? json_number(*v) : Json(nullptr); }

inline Json to_json(const TransitivityReport& r) {
  return Json{{"n", r.n},
              {"triples", r.total},
              {"blue", r.blue},
              {"yellow", r.yellow},
              {"red", r.red},
              {"fail_fraction", json_number(r.fail_fraction)},
              {"mean_fail_ratio", optional_number(r.mean_fail_ratio)},
              {"max_fail_ratio", optional_number(r.max_fail_ratio)}};
}

inline Json to_json(const EigenReport& r) {
  Json abs = Json::array(), sig = Json::array();
  for (double v : r.abs_eigenvalues) abs.push_back(json_number(v));
  for (double v : r.eigenvalues) sig.push_back(json_number(v));
  return Json{{"abs_eigenvalues", abs},
              {"eigenvalues", sig},
              {"operator_norm", json_number(r.operator_norm)},
              {"epsilon", json_number(r.epsilon)},
              {"below_epsilon", r.below_epsilon},
              {"majority_cluster_size", r.majority_cluster_size},
              {"eigenvalue_sum", json_number(r.eigenvalue_sum)}};
}

inline Json to_json(const Dendrogram& d) {
  Json merges = Json::array();
  for (const auto& m : d.merges) merges.push_back(Json::array({m.left, m.right, json_number(m.height), m.size}));
  return Json{{"linkage", to_string(d.linkage)}, {"labels", d.labels}, {"merges", merges}};
}

inline Json to_json(const std::vector<std::string>& labels, const ClusterAssignment& c) {
  Json arr = Json::array();
  for (std::size_t i = 0; i < c.labels.size(); ++i) arr.push_back(Json{{"label", labels.at(i)}, {"cluster", c.labels[i]}});
  return arr;
}

inline Json to_json(const DetectionResult& r) {
  Json stats = Json::array(), th = Json::array();
  for (double v : r.statistics) stats.push_back(json_number(v));
  for (double v : r.thresholds) th.push_back(json_number(v));
  Json j{{"change_points", r.change_points.vector()},
         {"statistics", stats},
         {"thresholds", th},
         {"detection_times", r.detection_times}};
  if (!r.warning.empty()) j["warning"] = r.warning;
  return j;
}

/// Writes `text` to `path`, throwing DataError when the file cannot be written.
inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

}  // namespace cpdist
