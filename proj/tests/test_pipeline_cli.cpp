#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "cpdist/pipeline.hpp"
#include "cpdist/simulation.hpp"

using namespace cpdist;
namespace fs = std::filesystem;
using Catch::Matchers::ContainsSubstring;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(CPDIST_TEST_TMP) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

int cli(const std::string& args, const fs::path& log = {}) {
  std::string cmd = std::string("\"") + CPDIST_CLI_PATH + "\" " + args;
  cmd += log.empty() ? " >/dev/null 2>&1" : " >\"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scenario_file(const fs::path& dir, ScenarioKind kind, std::uint64_t seed) {
  const auto col = generate(ScenarioSpec::defaults(kind, seed));
  std::ostringstream os;
  write_changepoint_sets(os, col.labels, col.sets);
  const auto p = dir / "sets.csv";
  spit(p, os.str());
  return p;
}

// Three noisy series: two share a shift at 100, one shifts at 60 and 140.
fs::path series_file(const fs::path& dir) {
  Rng rng(77);
  std::ostringstream os;
  os << "alpha,beta,gamma\n";
  for (int t = 0; t < 200; ++t) {
    const double a = (t >= 100 ? 4.0 : 0.0) + rng.normal();
    const double b = (t >= 100 ? 4.0 : 0.0) + rng.normal();
    const double c = (t >= 60 && t < 140 ? 4.0 : 0.0) + rng.normal();
    os << a << ',' << b << ',' << c << '\n';
  }
  const auto p = dir / "series.csv";
  spit(p, os.str());
  return p;
}

PipelineConfig quick_config(const fs::path& input, const fs::path& out) {
  PipelineConfig cfg;
  cfg.input = input;
  cfg.output_dir = out;
  cfg.detector.mc_replicates = 5000;
  cfg.detector.min_segment = 10;
  cfg.detector.arl0 = 2000;
  return cfg;
}

}  // namespace

TEST_CASE("input kind is sniffed from the first record", "[pipeline]") {
  const auto dir = scratch("sniff");
  spit(dir / "a.csv", "TS1,3,9\nTS2,4\n");
  spit(dir / "b.csv", "x,y\n0.5,1\n");
  spit(dir / "c.csv", "x\n2.5\n");
  CHECK(detail::sniff_input(dir / "a.csv") == InputKind::ChangePointSets);
  CHECK(detail::sniff_input(dir / "b.csv") == InputKind::Series);
  CHECK(detail::sniff_input(dir / "c.csv") == InputKind::Series);
}

TEST_CASE("default cluster count follows the majority group", "[pipeline]") {
  EigenReport e;
  e.majority_cluster_size = 7;
  CHECK(default_cluster_count(e, 10) == 4);
  e.majority_cluster_size = 10;
  CHECK(default_cluster_count(e, 10) == 2);
  e.majority_cluster_size = 1;
  CHECK(default_cluster_count(e, 3) == 3);
}

TEST_CASE("pipeline on change-point sets writes every artifact", "[pipeline]") {
  const auto dir = scratch("sets_run");
  auto cfg = quick_config(scenario_file(dir, ScenarioKind::NoOutliers, 2), dir / "out");
  cfg.k = 4;
  const auto rep = run_pipeline(cfg);
  CHECK(rep.sets.size() == 10);
  CHECK(rep.detections.empty());
  REQUIRE(rep.transitivity);
  CHECK(rand_index(rep.clusters, scenario_truth(10)) >= 0.95);
  for (const char* f : {"changepoints.csv", "distmat_mj1.csv", "transitivity.json", "eigen.json", "clusters.csv",
                        "dendrogram.newick", "dendrogram.json", "report.json"}) {
    CHECK(fs::exists(dir / "out" / f));
  }
  const auto report = Json::parse(slurp(dir / "out" / "report.json"));
  CHECK(report["metric"] == "mj1");
  CHECK(report["provenance"]["config_hash"] == rep.config_hash);
  CHECK(report["k"] == 4);
}

TEST_CASE("MH2 distance file for the shifted pair", "[pipeline]") {
  const auto dir = scratch("mh2_pair");
  spit(dir / "pair.csv", "A1,0,999\nB1,1,1000\n");
  auto cfg = quick_config(dir / "pair.csv", dir / "out");
  cfg.metric = MetricSpec::mh2();
  run_pipeline(cfg);
  CHECK(slurp(dir / "out" / "distmat_mh2.csv") == "mh2,A1,B1\nA1,0,4\nB1,4,0\n");
}

TEST_CASE("reports are byte-identical across runs and output directories", "[pipeline]") {
  const auto dir = scratch("repro");
  const auto input = scenario_file(dir, ScenarioKind::ExtremeOutliers, 5);
  run_pipeline(quick_config(input, dir / "one"));
  run_pipeline(quick_config(input, dir / "two"));
  for (const char* f : {"report.json", "distmat_mj1.csv", "clusters.csv", "dendrogram.newick"}) {
    CHECK(slurp(dir / "one" / f) == slurp(dir / "two" / f));
  }
  auto other = quick_config(input, dir / "three");
  other.seed = 2;
  CHECK(analyse(other).config_hash != analyse(quick_config(input, dir / "one")).config_hash);
}

TEST_CASE("pipeline detects change points in series", "[pipeline]") {
  const auto dir = scratch("series_run");
  auto cfg = quick_config(series_file(dir), dir / "out");
  cfg.k = 2;
  const auto rep = run_pipeline(cfg);
  REQUIRE(rep.detections.size() == 3);
  CHECK(rep.labels == std::vector<std::string>{"alpha", "beta", "gamma"});
  auto near = [](const ChangePointSet& s, TimeIndex at) {
    return std::any_of(s.begin(), s.end(), [&](TimeIndex v) { return std::abs(v - at) <= 3; });
  };
  CHECK(near(rep.sets[0], 100));
  CHECK(near(rep.sets[1], 100));
  CHECK(near(rep.sets[2], 60));
  CHECK(near(rep.sets[2], 140));
  CHECK(rep.clusters.labels == std::vector<int>{1, 1, 2});

  cfg.mode = DetectionMode::Batch;
  cfg.normalize_indices = true;
  cfg.output_dir = dir / "batch";
  const auto b = analyse(cfg);
  REQUIRE(b.sets[0].size() == 1);
  CHECK(std::abs(b.sets[0][0] - 500000) <= 25000);
}

TEST_CASE("stage failures name the stage and leave no partial output", "[pipeline]") {
  const auto dir = scratch("failing");
  spit(dir / "sets.csv", "a,1,5\nb\nc,7\n");
  auto cfg = quick_config(dir / "sets.csv", dir / "out");
  CHECK_THROWS_WITH(run_pipeline(cfg), ContainsSubstring("stage 'distance'") && ContainsSubstring("'b'"));
  CHECK_FALSE(fs::exists(dir / "out"));

  spit(dir / "same.csv", "a,1,5\nb,1,5\nc,1,5\n");
  cfg.input = dir / "same.csv";
  CHECK_THROWS_WITH(run_pipeline(cfg), ContainsSubstring("stage 'cluster'") && ContainsSubstring("degenerate"));

  spit(dir / "blocker", "");
  cfg = quick_config(scenario_file(dir, ScenarioKind::NoOutliers, 1), dir / "blocker" / "out");
  CHECK_THROWS_AS(run_pipeline(cfg), DataError);

  cfg = quick_config(dir / "missing.csv", dir / "out");
  CHECK_THROWS_WITH(run_pipeline(cfg), ContainsSubstring("stage 'load'"));
}

TEST_CASE("command-line tools chain together", "[cli]") {
  const auto dir = scratch("cli_chain");
  const auto d = dir.string();
  REQUIRE(cli("simulate --scenario moderate --seed 3 --out " + d + "/sets.csv --truth " + d + "/truth.csv") == 0);
  REQUIRE(cli("distmat --input " + d + "/sets.csv --metric mj2 --out " + d + "/dm.csv") == 0);
  CHECK(slurp(dir / "dm.csv").rfind("mj2,TS1", 0) == 0);
  REQUIRE(cli("transitivity --matrix " + d + "/dm.csv --out " + d + "/tr.json") == 0);
  CHECK(Json::parse(slurp(dir / "tr.json"))["triples"] == 720);
  REQUIRE(cli("eigen --matrix " + d + "/dm.csv --out " + d + "/eig.json") == 0);
  CHECK(Json::parse(slurp(dir / "eig.json"))["abs_eigenvalues"].size() == 10);
  REQUIRE(cli("cluster --matrix " + d + "/dm.csv --k 4 --out " + d + "/cl.csv --newick " + d + "/tree.nwk") == 0);
  const auto cl = load_clusters(dir / "cl.csv");
  const auto truth = load_clusters(dir / "truth.csv");
  CHECK(rand_index(cl.clusters, truth.clusters) >= 0.95);
  CHECK(slurp(dir / "tree.nwk").back() == '\n');
  REQUIRE(cli("cluster --matrix " + d + "/dm.csv --k 4 --method hierarchical --out " + d + "/hc.csv") == 0);
  REQUIRE(cli("p-sweep --input " + d + "/sets.csv --truth " + d + "/truth.csv --p 1,7 --out " + d + "/ps.csv") == 0);
  CHECK(slurp(dir / "ps.csv").rfind("p,fail_fraction,mean_fail_ratio,rand_index,meets_tolerance\n1,", 0) == 0);
}

TEST_CASE("command-line detect and run", "[cli]") {
  const auto dir = scratch("cli_detect");
  const auto d = dir.string();
  const auto input = series_file(dir).string();
  const std::string det = " --replicates 5000 --min-segment 10 --arl0 2000";
  REQUIRE(cli("detect --input " + input + det + " --out " + d + "/cp.csv --json " + d + "/det.json") == 0);
  const auto sets = load_changepoint_sets(dir / "cp.csv");
  CHECK(sets.labels == std::vector<std::string>{"alpha", "beta", "gamma"});
  CHECK(Json::parse(slurp(dir / "det.json")).size() == 3);
  REQUIRE(cli("run --input " + input + det + " --k 2 --out-dir " + d + "/run", dir / "run.log") == 0);
  CHECK_THAT(slurp(dir / "run.log"), ContainsSubstring("clusters (k=2): 1 1 2"));
}

TEST_CASE("config files supply defaults that flags override", "[cli]") {
  const auto dir = scratch("cli_config");
  const auto d = dir.string();
  spit(dir / "sets.csv", "a,1,5\nb,2,9\nc,40\n");
  spit(dir / "run.conf", "# distances\n[distmat]\nmetric = hausdorff\nout = " + d + "/from_config.csv\n");
  REQUIRE(cli("distmat --config " + d + "/run.conf --input " + d + "/sets.csv") == 0);
  CHECK(slurp(dir / "from_config.csv").rfind("hausdorff,", 0) == 0);
  REQUIRE(cli("distmat --config " + d + "/run.conf --input " + d + "/sets.csv --metric mh2") == 0);
  CHECK(slurp(dir / "from_config.csv").rfind("mh2,", 0) == 0);
  spit(dir / "bad.conf", "metric\n");
  CHECK(cli("distmat --config " + d + "/bad.conf --input " + d + "/sets.csv") == 1);
}

TEST_CASE("exit codes distinguish usage, data and numerical errors", "[cli]") {
  const auto dir = scratch("cli_exit");
  const auto d = dir.string();
  spit(dir / "sets.csv", "a,1,5\nb,2,9\nc,40\n");
  spit(dir / "asym.csv", "h,a,b\na,0,1\nb,2,0\n");
  spit(dir / "bad.csv", "a,1,x\n");
  CHECK(cli("--version") == 0);
  CHECK(cli("") == 1);
  CHECK(cli("distmat") == 1);
  CHECK(cli("distmat --input " + d + "/sets.csv --metric mj0") == 1);
  CHECK(cli("distmat --input " + d + "/sets.csv --metric euclid") == 1);
  CHECK(cli("distmat --input " + d + "/missing.csv") == 2);
  CHECK(cli("distmat --input " + d + "/bad.csv", dir / "bad.log") == 2);
  CHECK_THAT(slurp(dir / "bad.log"), ContainsSubstring("row 1, column 3"));
  CHECK(cli("eigen --matrix " + d + "/asym.csv") == 3);
  CHECK(cli("transitivity --matrix " + d + "/asym.csv") == 3);
  CHECK(cli("cluster --matrix " + d + "/asym.csv --k 0") == 3);
}
