#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "epo/config.hpp"
#include "epo/plot.hpp"

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(EPO_CLI_BINARY) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_tiny_config(const fs::path& p) {
  std::ofstream out(p);
  out << R"({
  "env": {"task": "pendulum", "num_envs": 8},
  "population": {"K": 2, "N_lat": 4},
  "run": {"seed": 5, "total_env_steps": 640}
})";
}

// long enough on the 100-step reacher for every agent's fitness window to fill
void write_reacher_config(const fs::path& p) {
  std::ofstream out(p);
  out << R"({
  "env": {"task": "multigoal_reacher", "num_envs": 8},
  "population": {"K": 2, "N_lat": 4},
  "run": {"seed": 5, "total_env_steps": 2432}
})";
}

}  // namespace

TEST_CASE("cli: missing config file exits 2", "[cli]") {
  CHECK(run_cli("train --config /no/such/file.json --out /tmp/epo_nowhere") == 2);
}

TEST_CASE("cli: bad override and unknown key exit 2", "[cli]") {
  TempDir dir("epo_cli_badkey");
  write_tiny_config(dir.path / "cfg.json");
  CHECK(run_cli("train --config " + (dir.path / "cfg.json").string() +
                " --out " + (dir.path / "run").string() + " nope.key=1") == 2);
  CHECK(run_cli("train --config " + (dir.path / "cfg.json").string() +
                " --out " + (dir.path / "run").string() + " population.K=3") == 2);
}

TEST_CASE("cli: train produces a self-describing run directory", "[cli][slow]") {
  TempDir dir("epo_cli_train");
  write_tiny_config(dir.path / "cfg.json");
  const std::string run = (dir.path / "run").string();
  REQUIRE(run_cli("train --config " + (dir.path / "cfg.json").string() + " --out " +
                  run + " --progress-every 0") == 0);
  CHECK(fs::exists(run + "/metrics.csv"));
  CHECK(fs::exists(run + "/evolution.jsonl"));
  CHECK(fs::exists(run + "/ckpt_final.ckpt"));
  CHECK(fs::exists(run + "/manifest.json"));

  // manifest config snapshot re-parses into an identical config
  nlohmann::json manifest;
  std::ifstream in(run + "/manifest.json");
  in >> manifest;
  const epo::TrainConfig cfg = epo::config_from_json(manifest.at("config"));
  CHECK(cfg.env_task == "pendulum");
  CHECK(cfg.run_seed == 5);
  CHECK(epo::config_to_json(cfg) == manifest.at("config"));
  CHECK(manifest.at("status") == "complete");

  // metrics csv is re-readable by the plot loader
  const epo::MetricsTable table = epo::read_metrics_csv(run + "/metrics.csv");
  CHECK(table.columns.size() == 19);
  CHECK(table.rows.size() == 5);  // 640 / (8*16)
}

TEST_CASE("cli: identical invocations give byte-identical metrics", "[cli][slow]") {
  TempDir dir("epo_cli_det");
  write_tiny_config(dir.path / "cfg.json");
  const std::string r1 = (dir.path / "r1").string();
  const std::string r2 = (dir.path / "r2").string();
  const std::string common = " --config " + (dir.path / "cfg.json").string() +
                             " --progress-every 0 --seed 123";
  REQUIRE(run_cli("train" + common + " --out " + r1) == 0);
  REQUIRE(run_cli("train" + common + " --out " + r2) == 0);
  REQUIRE(slurp(r1 + "/metrics.csv") == slurp(r2 + "/metrics.csv"));
}

TEST_CASE("cli: eval of a checkpoint works and rejects bad input", "[cli][slow]") {
  TempDir dir("epo_cli_eval");
  write_tiny_config(dir.path / "cfg.json");
  const std::string run = (dir.path / "run").string();
  REQUIRE(run_cli("train --config " + (dir.path / "cfg.json").string() + " --out " +
                  run + " --progress-every 0") == 0);
  CHECK(run_cli("eval --checkpoint " + run + "/ckpt_final.ckpt --episodes 3") == 0);
  CHECK(run_cli("eval --checkpoint " + run + "/ckpt_final.ckpt --episodes 3 "
                "--all-genes") == 0);
  CHECK(run_cli("eval --checkpoint " + run + "/ckpt_final.ckpt --episodes 0") == 2);
  // corrupt checkpoint: manifest/blob mismatch
  const std::string bad = (dir.path / "bad.ckpt").string();
  {
    std::ofstream out(bad, std::ios::binary);
    out << "EPOCKPT1garbage-not-a-length";
  }
  CHECK(run_cli("eval --checkpoint " + bad + " --episodes 3") == 1);
}

TEST_CASE("cli: sweep writes one run per cell plus an aggregate", "[cli][slow]") {
  TempDir dir("epo_cli_sweep");
  write_reacher_config(dir.path / "cfg.json");
  const std::string out = (dir.path / "sweep").string();
  REQUIRE(run_cli("sweep --config " + (dir.path / "cfg.json").string() +
                  " --axis population.K=1,2 --seeds 2 --out " + out) == 0);
  CHECK(fs::exists(out + "/1_s0/metrics.csv"));
  CHECK(fs::exists(out + "/1_s1/metrics.csv"));
  CHECK(fs::exists(out + "/2_s0/metrics.csv"));
  CHECK(fs::exists(out + "/2_s1/metrics.csv"));
  REQUIRE(fs::exists(out + "/aggregate.csv"));
  const std::string agg = slurp(out + "/aggregate.csv");
  CHECK(agg.find("axis_key") != std::string::npos);
  CHECK(agg.find("population.K,1,2,0") != std::string::npos);
  CHECK(agg.find("population.K,2,2,0") != std::string::npos);

  // aggregate recomputable from child metrics
  std::vector<double> finals;
  for (const std::string child : {"/2_s0", "/2_s1"}) {
    const epo::MetricsTable t = epo::read_metrics_csv(out + child + "/metrics.csv");
    const std::size_t yi = t.column_index("master_mean_return");
    double last = std::nan("");
    for (const auto& row : t.rows) {
      if (!std::isnan(row[yi])) last = row[yi];
    }
    finals.push_back(last);
  }
  const double expect_mean = epo::mean_of(finals);
  std::stringstream agg_ss(agg);
  std::string line;
  std::getline(agg_ss, line);  // header
  double got_mean = std::nan("");
  while (std::getline(agg_ss, line)) {
    if (line.rfind("population.K,2,", 0) == 0) {
      std::stringstream ls(line);
      std::string cell;
      for (int i = 0; i < 5 && std::getline(ls, cell, ','); ++i) {
      }
      got_mean = std::stod(cell);
    }
  }
  CHECK(got_mean == Catch::Approx(expect_mean).margin(1e-9));

  // invalid axis key exits 2
  CHECK(run_cli("sweep --config " + (dir.path / "cfg.json").string() +
                " --axis bogus.key=1,2 --seeds 1 --out " + out) == 2);
}

TEST_CASE("cli: plot emits svg and csv, rejects unknown metrics", "[cli][slow]") {
  TempDir dir("epo_cli_plot");
  write_tiny_config(dir.path / "cfg.json");
  const std::string r1 = (dir.path / "curve_s0").string();
  const std::string r2 = (dir.path / "curve_s1").string();
  const std::string common =
      " --config " + (dir.path / "cfg.json").string() + " --progress-every 0";
  REQUIRE(run_cli("train" + common + " --out " + r1 + " --seed 1") == 0);
  REQUIRE(run_cli("train" + common + " --out " + r2 + " --seed 2") == 0);
  const std::string svg = (dir.path / "fig.svg").string();
  REQUIRE(run_cli("plot --runs " + r1 + " " + r2 + " --metric loss_total --out " +
                  svg) == 0);
  REQUIRE(fs::exists(svg));
  const std::string body = slurp(svg);
  CHECK(body.find("<svg") != std::string::npos);
  CHECK(body.find("polyline") != std::string::npos);
  CHECK(body.find("curve (n=2)") != std::string::npos);  // shared label band

  const std::string csv = (dir.path / "fig.csv").string();
  REQUIRE(run_cli("plot --runs " + r1 + " " + r2 + " --metric loss_total --format csv"
                  " --out " + csv) == 0);
  const std::string csv_body = slurp(csv);
  CHECK(csv_body.find("label,env_steps,mean,stderr") != std::string::npos);

  CHECK(run_cli("plot --runs " + r1 + " --metric bogus --out " + svg) == 1);
}

TEST_CASE("plot: band half-width equals the stderr of the runs at shared x") {
  epo::PlotSeries a, b, c;
  a.label = b.label = c.label = "g";
  a.x = b.x = c.x = {1.0, 2.0};
  a.y = {1.0, 4.0};
  b.y = {2.0, 5.0};
  c.y = {3.0, 9.0};
  const epo::LabelBand band = epo::aggregate_label({&a, &b, &c});
  CHECK(band.mean[0] == Catch::Approx(2.0));
  CHECK(band.stderr_half[0] == Catch::Approx(epo::stderr_of({1.0, 2.0, 3.0})));
  CHECK(band.mean[1] == Catch::Approx(6.0));
  CHECK(band.stderr_half[1] == Catch::Approx(epo::stderr_of({4.0, 5.0, 9.0})));
}

TEST_CASE("label grouping strips only seed suffixes") {
  CHECK(epo::label_from_run_name("reacher_s0") == "reacher");
  CHECK(epo::label_from_run_name("reacher_s12") == "reacher");
  CHECK(epo::label_from_run_name("reacher_sX") == "reacher_sX");
  CHECK(epo::label_from_run_name("baseline") == "baseline");
  CHECK(epo::label_from_run_name("K=8_s3") == "K=8");
}
