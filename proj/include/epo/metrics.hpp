#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "epo/evolution.hpp"

namespace epo {

/// One metrics row per training iteration. Column set and order are part of
/// the engine's external contract.
struct MetricsRow {
  std::int64_t iteration = 0;
  std::int64_t env_steps = 0;
  double lr = 0.0;
  double approx_kl = 0.0;
  double loss_total = 0.0;
  double loss_actor_on = 0.0;
  double loss_actor_off = 0.0;
  double loss_critic_on = 0.0;
  double loss_critic_off = 0.0;
  double entropy = 0.0;
  double bounds = 0.0;
  double clip_frac_on = 0.0;
  double clip_frac_off = 0.0;
  double master_mean_return = std::nan("");
  double fitness_min = std::nan("");
  double fitness_median = std::nan("");
  double fitness_max = std::nan("");
  int evolved = 0;
  std::int64_t offpolicy_dropped = 0;
};

inline constexpr const char* kMetricsHeader =
    "iteration,env_steps,lr,approx_kl,loss_total,loss_actor_on,loss_actor_off,"
    "loss_critic_on,loss_critic_off,entropy,bounds,clip_frac_on,clip_frac_off,"
    "master_mean_return,fitness_min,fitness_median,fitness_max,evolved,"
    "offpolicy_dropped";

/// Shortest round-trippable decimal form; bitwise-stable for identical runs.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline std::string metrics_row_to_csv(const MetricsRow& r) {
  std::string line;
  line += std::to_string(r.iteration);
  line += ',';
  line += std::to_string(r.env_steps);
  for (double v : {r.lr, r.approx_kl, r.loss_total, r.loss_actor_on, r.loss_actor_off,
                   r.loss_critic_on, r.loss_critic_off, r.entropy, r.bounds,
                   r.clip_frac_on, r.clip_frac_off, r.master_mean_return,
                   r.fitness_min, r.fitness_median, r.fitness_max}) {
    line += ',';
    line += format_double(v);
  }
  line += ',';
  line += std::to_string(r.evolved);
  line += ',';
  line += std::to_string(r.offpolicy_dropped);
  return line;
}

/// Collects rows in memory and mirrors them to a CSV file when a path is set.
class MetricsLog {
 public:
  MetricsLog() = default;

  void open(const std::string& path) {
    file_.open(path, std::ios::trunc);
    if (!file_) throw std::runtime_error("cannot open metrics file: " + path);
    file_ << kMetricsHeader << '\n';
    file_.flush();
  }

  void append(const MetricsRow& row) {
    rows_.push_back(row);
    if (file_.is_open()) {
      file_ << metrics_row_to_csv(row) << '\n';
      file_.flush();
    }
  }

  const std::vector<MetricsRow>& rows() const { return rows_; }

 private:
  std::vector<MetricsRow> rows_;
  std::ofstream file_;
};

inline nlohmann::json evolution_event_to_json(const EvolutionEvent& ev) {
  nlohmann::json j;
  j["iteration"] = ev.iteration;
  j["trigger_lhs"] = ev.trigger_lhs;
  j["trigger_rhs"] = ev.trigger_rhs;
  j["elites"] = ev.elites;
  j["children"] = nlohmann::json::array();
  for (const auto& c : ev.children) {
    j["children"].push_back({{"parents", {c.parent_i, c.parent_j}}, {"slot", c.slot}});
  }
  return j;
}

/// JSON-lines log of evolution events.
class EvolutionLog {
 public:
  EvolutionLog() = default;

  void open(const std::string& path) {
    file_.open(path, std::ios::trunc);
    if (!file_) throw std::runtime_error("cannot open evolution log: " + path);
  }

  void append(const EvolutionEvent& ev) {
    events_.push_back(ev);
    if (file_.is_open()) {
      file_ << evolution_event_to_json(ev).dump() << '\n';
      file_.flush();
    }
  }

  const std::vector<EvolutionEvent>& events() const { return events_; }

 private:
  std::vector<EvolutionEvent> events_;
  std::ofstream file_;
};

}  // namespace epo
