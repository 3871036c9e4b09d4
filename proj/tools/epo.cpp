// Command-line entry points for the EPO training engine: train single runs,
// evaluate checkpoints, sweep an axis over seeds, and plot metrics CSVs.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "epo/config.hpp"
#include "epo/plot.hpp"
#include "epo/sweep.hpp"
#include "epo/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitPartialSweep = 3;

struct CommonTrainArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::vector<std::string> overrides;
};

epo::TrainConfig build_config(const CommonTrainArgs& args) {
  if (!std::filesystem::exists(args.config_path)) {
    throw epo::ConfigError("config", "file not found: " + args.config_path);
  }
  epo::TrainConfig cfg = epo::load_config(args.config_path);
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw epo::ConfigError(kv, "override must look like key=value");
    }
    epo::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed_set) cfg.run_seed = args.seed;
  if (!args.out_dir.empty()) cfg.run_out_dir = args.out_dir;
  cfg.resolve();
  return cfg;
}

void print_eval_summary(const epo::EvalSummary& summary) {
  nlohmann::json j;
  j["task"] = summary.task;
  j["episodes"] = summary.episodes;
  j["mean_return"] = summary.mean_return;
  j["std_return"] = summary.std_return;
  j["success_rate"] = summary.success_rate;
  j["per_gene"] = nlohmann::json::array();
  for (const auto& g : summary.per_gene) {
    j["per_gene"].push_back({{"agent_id", g.agent_id},
                             {"mean_return", g.mean_return},
                             {"std_return", g.std_return},
                             {"success_rate", g.success_rate}});
  }
  std::cout << j.dump(2) << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evolutionary policy optimization training engine"};
  app.require_subcommand(1);

  // --- train ---
  CommonTrainArgs train_args;
  int train_threads = 1;
  std::int64_t checkpoint_every = 500;
  std::int64_t progress_every = 50;
  auto* train = app.add_subcommand("train", "Run one training job");
  train->add_option("--config", train_args.config_path, "Config JSON path")->required();
  train->add_option("--seed", train_args.seed, "Run seed (overrides config)")
      ->each([&](const std::string&) { train_args.seed_set = true; });
  train->add_option("--out", train_args.out_dir, "Run directory")->required();
  train->add_option("--threads", train_threads, "Collection threads")
      ->check(CLI::PositiveNumber);
  train->add_option("--checkpoint-every", checkpoint_every,
                    "Periodic checkpoint cadence in iterations (0 = final only)");
  train->add_option("--progress-every", progress_every,
                    "Progress print cadence in iterations (0 = silent)");
  train->add_option("overrides", train_args.overrides, "KEY=VALUE config overrides");

  // --- eval ---
  std::string eval_checkpoint, eval_task;
  int eval_episodes = 10;
  std::uint64_t eval_seed = 0;
  bool eval_all_genes = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint deterministically");
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint path")->required();
  eval->add_option("--episodes", eval_episodes, "Episodes per gene")->required();
  eval->add_option("--seed", eval_seed, "Evaluation seed");
  eval->add_option("--task", eval_task, "Expected task (must match the checkpoint)");
  eval->add_flag("--all-genes", eval_all_genes, "Evaluate every agent's gene");

  // --- sweep ---
  CommonTrainArgs sweep_args;
  std::string axis_spec;
  int sweep_seeds = 5;
  auto* sweep = app.add_subcommand("sweep", "Run an axis of configs over seeds");
  sweep->add_option("--config", sweep_args.config_path, "Config JSON path")->required();
  sweep->add_option("--axis", axis_spec, "KEY=V1,V2,... axis specification")->required();
  sweep->add_option("--seeds", sweep_seeds, "Seeds per axis value")
      ->check(CLI::PositiveNumber);
  sweep->add_option("--out", sweep_args.out_dir, "Sweep output directory")->required();
  sweep->add_option("--seed", sweep_args.seed, "Base seed (overrides config)")
      ->each([&](const std::string&) { sweep_args.seed_set = true; });
  sweep->add_option("overrides", sweep_args.overrides, "KEY=VALUE config overrides");

  // --- plot ---
  std::vector<std::string> plot_runs;
  std::string plot_metric = "master_mean_return";
  std::string plot_out;
  std::string plot_format = "svg";
  auto* plot = app.add_subcommand("plot", "Plot learning curves from run directories");
  plot->add_option("--runs", plot_runs, "Run directories")->required()->expected(-1);
  plot->add_option("--metric", plot_metric, "Metrics CSV column to plot");
  plot->add_option("--out", plot_out, "Output file (.svg or .csv)")->required();
  plot->add_option("--format", plot_format, "svg or csv")
      ->check(CLI::IsMember({"svg", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (train->parsed()) {
      epo::TrainConfig cfg;
      try {
        cfg = build_config(train_args);
      } catch (const epo::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
      }
      epo::TrainOptions opts;
      opts.collect_threads = train_threads;
      opts.checkpoint_every = checkpoint_every;
      opts.progress_every = progress_every;
      epo::Trainer trainer(cfg, opts);
      trainer.run();
      std::cout << "run complete: " << trainer.iteration() << " iterations, "
                << trainer.env_steps() << " env steps -> " << cfg.run_out_dir << "\n";
      return kExitOk;
    }

    if (eval->parsed()) {
      if (eval_episodes < 1) {
        std::cerr << "usage error: --episodes must be >= 1\n";
        return kExitUsage;
      }
      const epo::EvalSummary summary = epo::Trainer::evaluate_checkpoint(
          eval_checkpoint, eval_task, eval_episodes, eval_seed, eval_all_genes);
      print_eval_summary(summary);
      return kExitOk;
    }

    if (sweep->parsed()) {
      epo::TrainConfig cfg;
      std::string axis_key;
      std::vector<std::string> axis_values;
      try {
        cfg = build_config(sweep_args);
        const auto eq = axis_spec.find('=');
        if (eq == std::string::npos) {
          throw epo::ConfigError("--axis", "expected KEY=V1,V2,...");
        }
        axis_key = axis_spec.substr(0, eq);
        std::string rest = axis_spec.substr(eq + 1);
        std::size_t pos = 0;
        while (pos <= rest.size()) {
          const auto comma = rest.find(',', pos);
          const std::string v = rest.substr(
              pos, comma == std::string::npos ? std::string::npos : comma - pos);
          if (v.empty()) throw epo::ConfigError("--axis", "empty axis value");
          axis_values.push_back(v);
          if (comma == std::string::npos) break;
          pos = comma + 1;
        }
        // validate the axis key and each value against the config schema
        for (const auto& v : axis_values) {
          epo::TrainConfig probe = cfg;
          epo::apply_override(probe, axis_key, v);
          probe.resolve();
        }
      } catch (const epo::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
      }
      const epo::SweepResult result =
          epo::run_sweep(cfg, axis_key, axis_values, sweep_seeds, sweep_args.out_dir);
      std::cout << "sweep complete: " << result.cells.size() << " cells x "
                << sweep_seeds << " seeds -> " << sweep_args.out_dir
                << "/aggregate.csv\n";
      return result.any_failure ? kExitPartialSweep : kExitOk;
    }

    if (plot->parsed()) {
      std::vector<epo::PlotSeries> series;
      for (const auto& dir : plot_runs) {
        series.push_back(epo::load_series(dir, plot_metric));
      }
      if (plot_format == "csv" ||
          (plot_out.size() > 4 && plot_out.substr(plot_out.size() - 4) == ".csv")) {
        epo::write_plot_csv(plot_out, series);
      } else {
        epo::write_plot_svg(plot_out, series, plot_metric);
      }
      std::cout << "wrote " << plot_out << "\n";
      return kExitOk;
    }
  } catch (const epo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
