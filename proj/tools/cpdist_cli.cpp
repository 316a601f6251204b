// cpdist command-line front end.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cpdist/cpdist.hpp"

namespace {

using namespace cpdist;

// Reads "key = value" lines (# comments, blank lines and [section] headers
// ignored) and turns them into "--key=value" tokens.
std::vector<std::string> config_tokens(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("--config", "cannot open config file '" + path + "'");
  std::vector<std::string> out;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto text = detail::trim(line);
    if (text.empty() || text.front() == '[') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw CLI::ValidationError("--config", path + ":" + std::to_string(row) + ": expected key=value");
    }
    auto key = detail::trim(text.substr(0, eq));
    auto value = detail::trim(text.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    std::replace(key.begin(), key.end(), '_', '-');
    out.push_back("--" + key + "=" + value);
  }
  return out;
}

// Splices config-file options in right after the subcommand so that flags
// given on the command line, which come later, take precedence.
std::vector<std::string> expand_args(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::optional<std::string> config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (config) {
    const auto extra = config_tokens(*config);
    auto sub = std::find_if(args.begin(), args.end(), [](const std::string& a) { return a.empty() || a[0] != '-'; });
    const auto at = sub == args.end() ? args.end() : sub + 1;
    args.insert(at, extra.begin(), extra.end());
  }
  std::reverse(args.begin(), args.end());  // CLI11 consumes vectors from the back
  return args;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  write_text(path, text);
}

struct DetectorArgs {
  std::string statistic = "mw";
  std::string null_dist = "normal";
  DetectorConfig cfg;

  void add(CLI::App* app) {
    app->add_option("--statistic", statistic, "Test statistic: mw or ks")->capture_default_str();
    app->add_option("--alpha", cfg.alpha, "Batch false-positive level")->capture_default_str();
    app->add_option("--arl0", cfg.arl0, "Sequential in-control average run length")->capture_default_str();
    app->add_option("--min-segment", cfg.min_segment, "Minimum observations per segment")->capture_default_str();
    app->add_option("--min-tail", cfg.sequential_min_tail, "Shortest post-split segment in sequential mode")
        ->capture_default_str();
    app->add_option("--replicates", cfg.mc_replicates, "Monte-Carlo replicates for thresholds")->capture_default_str();
    app->add_option("--detector-seed", cfg.rng_seed, "Seed for threshold simulation")->capture_default_str();
    app->add_option("--null", null_dist, "Null distribution for simulation: normal or uniform")->capture_default_str();
    app->add_option("--cache-dir", cfg.cache_dir, "Threshold cache directory");
  }

  DetectorConfig resolve() {
    cfg.statistic = parse_statistic(statistic);
    if (null_dist == "normal") cfg.null_distribution = NullDistribution::Normal;
    else if (null_dist == "uniform") cfg.null_distribution = NullDistribution::Uniform;
    else throw std::invalid_argument("unknown null distribution '" + null_dist + "'");
    cfg.validate();
    return cfg;
  }
};

std::vector<double> parse_p_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& cell : detail::split_csv(text)) {
    const auto v = detail::parse_double(cell);
    if (!v || !(*v > 0.0)) throw std::invalid_argument("bad p value '" + cell + "'");
    out.push_back(*v);
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Distances between change-point sets of time series, with detection, audits and clustering"};
  app.set_version_flag("--version", std::string(CPDIST_VERSION));
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.add_option("--config", "key=value file; command-line flags override it");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a labelled scenario collection of change-point sets");
  std::string sim_kind = "none", sim_out = "-", sim_truth;
  std::uint64_t sim_seed = 1;
  std::optional<int> sim_n;
  std::optional<std::int64_t> sim_horizon, sim_spacing, sim_mag;
  std::optional<double> sim_rate;
  sim->add_option("--scenario", sim_kind, "none, moderate or extreme")->capture_default_str();
  sim->add_option("--seed", sim_seed, "Random seed")->capture_default_str();
  sim->add_option("--n-series", sim_n, "Number of series (default 10)");
  sim->add_option("--horizon", sim_horizon, "Time horizon (default 1000)");
  sim->add_option("--mean-spacing", sim_spacing, "Mean gap between change points (default 35)");
  sim->add_option("--outlier-rate", sim_rate, "Per-series outlier probability");
  sim->add_option("--outlier-magnitude", sim_mag, "Outlier displacement or reach");
  sim->add_option("--out", sim_out, "Change-point CSV path, - for stdout")->capture_default_str();
  sim->add_option("--truth", sim_truth, "Write ground-truth labels to this CSV");

  // detect
  auto* det = app.add_subcommand("detect", "Detect change points in each column of a series CSV");
  std::string det_in, det_out = "-", det_json, det_transform = "none", det_mode = "sequential";
  DetectorArgs det_args;
  det->add_option("--input", det_in, "Series CSV (header of labels, one column per series)")->required();
  det->add_option("--transform", det_transform, "none or log_returns")->capture_default_str();
  det->add_option("--mode", det_mode, "sequential or batch")->capture_default_str();
  det->add_option("--out", det_out, "Change-point CSV path, - for stdout")->capture_default_str();
  det->add_option("--json", det_json, "Also write per-series detection details as JSON");
  det_args.add(det);

  // distmat
  auto* dm = app.add_subcommand("distmat", "Distance matrix between change-point sets");
  std::string dm_in, dm_out = "-", dm_metric = "mj1";
  dm->add_option("--input", dm_in, "Change-point CSV")->required();
  dm->add_option("--metric", dm_metric, "hausdorff, mh1, mh2, mh3, wasserstein or mj<p>")->capture_default_str();
  dm->add_option("--out", dm_out, "Matrix CSV path, - for stdout")->capture_default_str();

  // transitivity
  auto* tr = app.add_subcommand("transitivity", "Triangle-inequality audit of a distance matrix");
  std::string tr_in, tr_out = "-";
  tr->add_option("--matrix", tr_in, "Matrix CSV")->required();
  tr->add_option("--out", tr_out, "JSON path, - for stdout")->capture_default_str();

  // eigen
  auto* eg = app.add_subcommand("eigen", "Eigenvalue summary of a distance matrix");
  std::string eg_in, eg_out = "-";
  std::optional<double> eg_eps;
  eg->add_option("--matrix", eg_in, "Matrix CSV")->required();
  eg->add_option("--epsilon", eg_eps, "Small-eigenvalue threshold (default 5% of the operator norm)");
  eg->add_option("--out", eg_out, "JSON path, - for stdout")->capture_default_str();

  // cluster
  auto* cl = app.add_subcommand("cluster", "Spectral or hierarchical clustering of a distance matrix");
  std::string cl_in, cl_out = "-", cl_method = "spectral", cl_linkage = "average", cl_newick, cl_djson;
  std::optional<int> cl_k;
  std::uint64_t cl_seed = 1;
  cl->add_option("--matrix", cl_in, "Matrix CSV")->required();
  cl->add_option("--k", cl_k, "Cluster count (default: eigenvalue heuristic)");
  cl->add_option("--method", cl_method, "spectral or hierarchical")->capture_default_str();
  cl->add_option("--linkage", cl_linkage, "average, single or complete")->capture_default_str();
  cl->add_option("--seed", cl_seed, "k-means seed")->capture_default_str();
  cl->add_option("--out", cl_out, "Cluster CSV path, - for stdout")->capture_default_str();
  cl->add_option("--newick", cl_newick, "Write the dendrogram as Newick");
  cl->add_option("--dendrogram-json", cl_djson, "Write the dendrogram merge list as JSON");

  // run
  auto* rn = app.add_subcommand("run", "Full pipeline from series or change-point sets to reports");
  PipelineConfig pc;
  std::string rn_in, rn_kind = "auto", rn_transform = "none", rn_mode = "sequential", rn_metric = "mj1",
                     rn_linkage = "average", rn_out = "cpdist_out";
  std::optional<int> rn_k;
  std::optional<double> rn_eps;
  bool rn_norm = false;
  std::uint64_t rn_seed = 1;
  DetectorArgs rn_args;
  rn->add_option("--input", rn_in, "Series CSV or change-point CSV")->required();
  rn->add_option("--input-kind", rn_kind, "auto, series or sets")->capture_default_str();
  rn->add_option("--transform", rn_transform, "none or log_returns")->capture_default_str();
  rn->add_option("--mode", rn_mode, "sequential or batch")->capture_default_str();
  rn->add_option("--metric", rn_metric, "hausdorff, mh1, mh2, mh3, wasserstein or mj<p>")->capture_default_str();
  rn->add_option("--k", rn_k, "Cluster count (default: eigenvalue heuristic)");
  rn->add_option("--epsilon", rn_eps, "Small-eigenvalue threshold");
  rn->add_option("--linkage", rn_linkage, "average, single or complete")->capture_default_str();
  rn->add_flag("--normalize", rn_norm, "Rescale change points to parts per million of series length");
  rn->add_option("--out-dir", rn_out, "Output directory")->capture_default_str();
  rn->add_option("--seed", rn_seed, "Seed for clustering")->capture_default_str();
  rn_args.add(rn);

  // p-sweep
  auto* ps = app.add_subcommand("p-sweep", "Transitivity and cluster recovery across MJ orders p");
  std::string ps_in, ps_truth, ps_kind = "extreme", ps_p = "0.5,1,2,3,5,7", ps_out = "-";
  double ps_alpha = 0.05;
  std::uint64_t ps_seed = 1;
  int ps_seeds = 1;
  ps->add_option("--input", ps_in, "Change-point CSV (needs --truth); otherwise a scenario is simulated");
  ps->add_option("--truth", ps_truth, "Ground-truth CSV (label,cluster)");
  ps->add_option("--scenario", ps_kind, "Scenario when simulating")->capture_default_str();
  ps->add_option("--seed", ps_seed, "First seed")->capture_default_str();
  ps->add_option("--seeds", ps_seeds, "Number of simulated collections to average over")->capture_default_str();
  ps->add_option("--p", ps_p, "Comma-separated MJ orders")->capture_default_str();
  ps->add_option("--alpha", ps_alpha, "Tolerated fail fraction")->capture_default_str();
  ps->add_option("--out", ps_out, "CSV path, - for stdout")->capture_default_str();

  auto args = expand_args(argc, argv);
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (sim->parsed()) {
    auto spec = ScenarioSpec::defaults(parse_scenario(sim_kind), sim_seed);
    if (sim_n) spec.n_series = *sim_n;
    if (sim_horizon) spec.horizon = *sim_horizon;
    if (sim_spacing) spec.mean_spacing = *sim_spacing;
    if (sim_rate) spec.outlier_rate = *sim_rate;
    if (sim_mag) spec.outlier_magnitude = *sim_mag;
    const auto col = generate(spec);
    std::ostringstream os;
    write_changepoint_sets(os, col.labels, col.sets);
    emit(sim_out, os.str());
    if (!sim_truth.empty()) {
      std::ostringstream ts;
      write_clusters(ts, col.labels, col.truth);
      write_text(sim_truth, ts.str());
    }
  } else if (det->parsed()) {
    const auto cfg = det_args.resolve();
    const auto transform = parse_transform(det_transform);
    const auto mode = parse_detection_mode(det_mode);
    auto series = load_csv(det_in);
    if (transform == Transform::LogReturns) {
      for (auto& s : series) s = log_returns(s);
    }
    std::vector<std::string> labels;
    std::vector<ChangePointSet> sets;
    Json details = Json::array();
    for (const auto& s : series) {
      DetectionResult r;
      if (s.values.size() < 2 * static_cast<std::size_t>(cfg.min_segment)) {
        r.warning = "series shorter than 2*min_segment; no test performed";
      } else if (mode == DetectionMode::Sequential) {
        r = sequential_detect(s.values, cfg);
      } else if (auto b = batch_detect(s.values, cfg)) {
        r.change_points = ChangePointSet({static_cast<TimeIndex>(b->change_point)});
        r.statistics = {b->statistic};
        r.thresholds = {b->threshold};
        r.detection_times = {s.values.size() - 1};
      }
      if (!r.warning.empty()) std::cerr << "warning: " << s.label << ": " << r.warning << "\n";
      labels.push_back(s.label);
      sets.push_back(r.change_points);
      Json j = to_json(r);
      j["label"] = s.label;
      details.push_back(std::move(j));
    }
    std::ostringstream os;
    write_changepoint_sets(os, labels, sets);
    emit(det_out, os.str());
    if (!det_json.empty()) write_text(det_json, details.dump(2) + "\n");
  } else if (dm->parsed()) {
    const auto metric = MetricSpec::parse(dm_metric);
    const auto ls = load_changepoint_sets(dm_in);
    std::ostringstream os;
    write_distance_matrix(os, build_distance_matrix(ls.sets, metric, ls.labels));
    emit(dm_out, os.str());
  } else if (tr->parsed()) {
    emit(tr_out, to_json(transitivity_audit(load_distance_matrix(tr_in))).dump(2) + "\n");
  } else if (eg->parsed()) {
    emit(eg_out, to_json(eigen_report(load_distance_matrix(eg_in), eg_eps)).dump(2) + "\n");
  } else if (cl->parsed()) {
    const auto d = load_distance_matrix(cl_in);
    const auto dendro = hierarchical_cluster(d, parse_linkage(cl_linkage));
    const int k = cl_k.value_or(default_cluster_count(eigen_report(d), d.size()));
    ClusterAssignment c;
    if (cl_method == "spectral") c = spectral_cluster(d, k, cl_seed);
    else if (cl_method == "hierarchical") c = cut_dendrogram(dendro, k);
    else throw std::invalid_argument("unknown method '" + cl_method + "'");
    std::ostringstream os;
    write_clusters(os, d.labels, c);
    emit(cl_out, os.str());
    if (!cl_newick.empty()) write_text(cl_newick, to_newick(dendro) + "\n");
    if (!cl_djson.empty()) write_text(cl_djson, to_json(dendro).dump(2) + "\n");
  } else if (rn->parsed()) {
    pc.input = rn_in;
    pc.input_kind = parse_input_kind(rn_kind);
    pc.transform = parse_transform(rn_transform);
    pc.mode = parse_detection_mode(rn_mode);
    pc.detector = rn_args.resolve();
    pc.metric = MetricSpec::parse(rn_metric);
    pc.k = rn_k;
    pc.epsilon = rn_eps;
    pc.linkage = parse_linkage(rn_linkage);
    pc.normalize_indices = rn_norm;
    pc.output_dir = rn_out;
    pc.seed = rn_seed;
    const auto rep = run_pipeline(pc);
    std::cout << "series: " << rep.sets.size() << "\nmetric: " << rep.distances.metric.name() << "\n";
    if (rep.transitivity) std::cout << "fail fraction: " << format_number(rep.transitivity->fail_fraction) << "\n";
    std::cout << "majority cluster size: " << rep.eigen.majority_cluster_size << "\nclusters (k=" << rep.clusters.k
              << "):";
    for (int c : rep.clusters.labels) std::cout << ' ' << c;
    std::cout << "\noutputs: " << pc.output_dir.string() << "\n";
  } else if (ps->parsed()) {
    const auto ps_values = parse_p_list(ps_p);
    std::vector<LabeledCollection> cols;
    if (!ps_in.empty()) {
      if (ps_truth.empty()) throw std::invalid_argument("--input requires --truth");
      const auto ls = load_changepoint_sets(ps_in);
      const auto truth = load_clusters(ps_truth);
      if (truth.labels != ls.labels) throw DataError("truth labels do not match the change-point file");
      cols.push_back({ls.sets, ls.labels, truth.clusters});
    } else {
      if (ps_seeds < 1) throw std::invalid_argument("--seeds must be positive");
      for (int s = 0; s < ps_seeds; ++s) {
        cols.push_back(generate(ScenarioSpec::defaults(parse_scenario(ps_kind), ps_seed + static_cast<std::uint64_t>(s))));
      }
    }
    std::vector<double> ff(ps_values.size()), ri(ps_values.size()), mr(ps_values.size());
    std::vector<int> mr_n(ps_values.size());
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const auto rows = p_sweep(cols[c], ps_values, ps_alpha, ps_seed + c);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        ff[i] += rows[i].fail_fraction;
        ri[i] += rows[i].rand_index;
        if (rows[i].mean_fail_ratio) {
          mr[i] += *rows[i].mean_fail_ratio;
          ++mr_n[i];
        }
      }
    }
    std::ostringstream os;
    os << "p,fail_fraction,mean_fail_ratio,rand_index,meets_tolerance\n";
    const auto n = static_cast<double>(cols.size());
    for (std::size_t i = 0; i < ps_values.size(); ++i) {
      const double f = ff[i] / n;
      os << format_number(ps_values[i]) << ',' << format_number(f) << ','
         << (mr_n[i] ? format_number(mr[i] / mr_n[i]) : std::string()) << ',' << format_number(ri[i] / n) << ','
         << (f < ps_alpha ? "true" : "false") << '\n';
    }
    emit(ps_out, os.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
