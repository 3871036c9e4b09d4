#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "epo/config.hpp"
#include "epo/trainer.hpp"

namespace epo {

struct SweepCellResult {
  std::string value;
  int seeds = 0;
  int failures = 0;
  double final_mean = 0.0;
  double final_stderr = 0.0;
  double best_mean = 0.0;
  double best_stderr = 0.0;
  std::vector<double> final_returns;
  std::vector<double> best_returns;
};

struct SweepResult {
  std::string axis_key;
  std::vector<SweepCellResult> cells;
  bool any_failure = false;
};

inline std::string sanitize_for_path(const std::string& s) {
  std::string out;
  for (char c : s) {
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-')
               ? c
               : '_';
  }
  return out;
}

inline double mean_of(const std::vector<double>& xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return xs.empty() ? 0.0 : acc / static_cast<double>(xs.size());
}

/// Standard error of the mean (sample std / sqrt(n)); zero for n < 2.
inline double stderr_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double var = 0.0;
  for (double x : xs) var += (x - m) * (x - m);
  var /= static_cast<double>(xs.size() - 1);
  return std::sqrt(var / static_cast<double>(xs.size()));
}

/// Last non-nan master_mean_return of a finished run.
inline double final_master_return(const MetricsLog& metrics) {
  const auto& rows = metrics.rows();
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (!std::isnan(it->master_mean_return)) return it->master_mean_return;
  }
  return std::nan("");
}

inline double best_master_return(const MetricsLog& metrics) {
  double best = std::nan("");
  for (const auto& row : metrics.rows()) {
    if (std::isnan(row.master_mean_return)) continue;
    if (std::isnan(best) || row.master_mean_return > best) {
      best = row.master_mean_return;
    }
  }
  return best;
}

/// Runs one training job per (axis value, seed) sequentially; seeds are
/// shared across axis values so comparisons are paired. Child failures are
/// recorded and the sweep continues.
inline SweepResult run_sweep(const TrainConfig& base, const std::string& axis_key,
                             const std::vector<std::string>& values, int seeds,
                             const std::string& out_dir,
                             const TrainOptions& child_opts = {}) {
  if (values.empty()) throw std::invalid_argument("run_sweep: no axis values");
  if (seeds < 1) throw std::invalid_argument("run_sweep: seeds must be >= 1");
  std::filesystem::create_directories(out_dir);
  SweepResult result;
  result.axis_key = axis_key;
  for (const auto& value : values) {
    SweepCellResult cell;
    cell.value = value;
    cell.seeds = seeds;
    for (int s = 0; s < seeds; ++s) {
      TrainConfig cfg = base;
      apply_override(cfg, axis_key, value);
      cfg.run_seed = base.run_seed + static_cast<std::uint64_t>(s);
      cfg.run_out_dir =
          out_dir + "/" + sanitize_for_path(value) + "_s" + std::to_string(s);
      try {
        Trainer trainer(cfg, child_opts);
        trainer.run();
        cell.final_returns.push_back(final_master_return(trainer.metrics()));
        cell.best_returns.push_back(best_master_return(trainer.metrics()));
      } catch (const std::exception& e) {
        std::cerr << "sweep child failed (" << axis_key << "=" << value << ", seed "
                  << cfg.run_seed << "): " << e.what() << "\n";
        cell.failures += 1;
        result.any_failure = true;
      }
    }
    cell.final_mean = mean_of(cell.final_returns);
    cell.final_stderr = stderr_of(cell.final_returns);
    cell.best_mean = mean_of(cell.best_returns);
    cell.best_stderr = stderr_of(cell.best_returns);
    result.cells.push_back(std::move(cell));
  }

  std::ofstream agg(out_dir + "/aggregate.csv", std::ios::trunc);
  agg << "axis_key,axis_value,seeds,failures,final_mean,final_stderr,best_mean,"
         "best_stderr\n";
  for (const auto& cell : result.cells) {
    agg << axis_key << ',' << cell.value << ',' << cell.seeds << ',' << cell.failures
        << ',' << format_double(cell.final_mean) << ','
        << format_double(cell.final_stderr) << ',' << format_double(cell.best_mean)
        << ',' << format_double(cell.best_stderr) << '\n';
  }
  return result;
}

}  // namespace epo
