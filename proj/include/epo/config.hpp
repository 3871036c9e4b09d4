#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace epo {

struct ConfigError : std::runtime_error {
  std::string key;
  ConfigError(std::string key_, const std::string& message)
      : std::runtime_error(key_ + ": " + message), key(std::move(key_)) {}
};

/// Every hyperparameter of a run in one validated record. Field defaults are
/// the engine's desk-scale settings; `resolve()` materializes the derived
/// ones (elite count K-2, minibatch 4*num_envs).
struct TrainConfig {
  // env
  std::string env_task = "pendulum";
  std::int64_t env_num_envs = 256;

  // population
  std::int64_t pop_num_agents = 8;          // K
  std::int64_t pop_n_lat = 32;
  std::int64_t pop_x_elites = -1;           // -1 -> K - 2
  double pop_sigma_mut = 0.1;
  double pop_gamma_trigger = 0.5;
  std::string pop_trigger_mode = "fitness_gap";
  std::int64_t pop_cooldown = 10;
  std::string pop_crossover = "average";

  // ppo
  double ppo_gamma = 0.99;
  double ppo_lambda_gae = 0.95;
  double ppo_eps_clip = 0.1;
  std::int64_t ppo_horizon = 16;
  std::int64_t ppo_mini_epochs = 2;
  std::int64_t ppo_minibatch_size = 0;      // 0 -> 4 * num_envs
  double ppo_critic_coef = 4.0;
  double ppo_entropy_coef = 0.0;
  double ppo_bounds_coef = 1e-5;
  double ppo_lambda_off = 1.0;

  // opt
  double opt_lr = 1e-4;
  double opt_kl_threshold = 0.016;
  double opt_max_grad_norm = 1.0;

  // buffer
  std::int64_t buffer_chunks = 2;

  // run
  std::uint64_t run_seed = 1;
  std::int64_t run_total_env_steps = 2'000'000;
  std::string run_out_dir;

  std::int64_t envs_per_agent() const { return env_num_envs / pop_num_agents; }
  std::int64_t on_policy_batch() const { return ppo_horizon * env_num_envs; }

  /// Fills derived defaults and checks every invariant; throws ConfigError
  /// naming the first offending key.
  void resolve() {
    if (env_task != "pendulum" && env_task != "sparse_mountain_car" &&
        env_task != "multigoal_reacher") {
      throw ConfigError("env.task", "unknown task '" + env_task + "'");
    }
    if (env_num_envs < 1) throw ConfigError("env.num_envs", "must be >= 1");
    if (pop_num_agents < 1) throw ConfigError("population.K", "must be >= 1");
    if (env_num_envs % pop_num_agents != 0) {
      throw ConfigError("env.num_envs", "must be divisible by population.K");
    }
    if (pop_n_lat < 1) throw ConfigError("population.N_lat", "must be >= 1");
    if (pop_x_elites < 0) pop_x_elites = std::max<std::int64_t>(pop_num_agents - 2, 0);
    if (pop_num_agents > 3 &&
        (pop_x_elites < 2 || pop_x_elites > pop_num_agents - 2)) {
      throw ConfigError("population.x_elites",
                        "must be in [2, K-2] for K > 3");
    }
    if (pop_num_agents <= 3 && pop_x_elites > std::max<std::int64_t>(pop_num_agents - 2, 0)) {
      throw ConfigError("population.x_elites", "must leave room for one child");
    }
    if (pop_sigma_mut < 0.0) throw ConfigError("population.sigma_mut", "must be >= 0");
    if (pop_gamma_trigger <= 0.0) {
      throw ConfigError("population.gamma_trigger", "must be > 0");
    }
    if (pop_trigger_mode != "fitness_gap" && pop_trigger_mode != "fixed_interval") {
      throw ConfigError("population.trigger_mode",
                        "must be fitness_gap or fixed_interval");
    }
    if (pop_cooldown < 1) throw ConfigError("population.cooldown", "must be >= 1");
    if (pop_crossover != "average" && pop_crossover != "uniform" &&
        pop_crossover != "fitness_weighted") {
      throw ConfigError("population.crossover",
                        "must be average, uniform or fitness_weighted");
    }
    if (!(ppo_gamma > 0.0 && ppo_gamma <= 1.0)) {
      throw ConfigError("ppo.gamma", "must be in (0, 1]");
    }
    if (!(ppo_lambda_gae >= 0.0 && ppo_lambda_gae <= 1.0)) {
      throw ConfigError("ppo.lambda_gae", "must be in [0, 1]");
    }
    if (!(ppo_eps_clip > 0.0 && ppo_eps_clip < 1.0)) {
      throw ConfigError("ppo.eps_clip", "must be in (0, 1)");
    }
    if (ppo_horizon < 1) throw ConfigError("ppo.horizon", "must be >= 1");
    if (ppo_mini_epochs < 1) throw ConfigError("ppo.mini_epochs", "must be >= 1");
    if (ppo_minibatch_size == 0) ppo_minibatch_size = 4 * env_num_envs;
    if (ppo_minibatch_size < 1) throw ConfigError("ppo.minibatch_size", "must be >= 1");
    if (on_policy_batch() % ppo_minibatch_size != 0) {
      throw ConfigError("ppo.minibatch_size",
                        "must divide the on-policy batch (horizon * num_envs)");
    }
    if (ppo_critic_coef < 0.0) throw ConfigError("ppo.critic_coef", "must be >= 0");
    if (ppo_entropy_coef < 0.0) throw ConfigError("ppo.entropy_coef", "must be >= 0");
    if (ppo_bounds_coef < 0.0) throw ConfigError("ppo.bounds_coef", "must be >= 0");
    if (ppo_lambda_off < 0.0) throw ConfigError("ppo.lambda_off", "must be >= 0");
    if (opt_lr <= 0.0) throw ConfigError("opt.lr", "must be > 0");
    if (opt_kl_threshold <= 0.0) throw ConfigError("opt.kl_threshold", "must be > 0");
    if (opt_max_grad_norm < 0.0) throw ConfigError("opt.max_grad_norm", "must be >= 0");
    if (buffer_chunks < 1) throw ConfigError("buffer.chunks", "must be >= 1");
    if (run_total_env_steps < 1) throw ConfigError("run.total_env_steps", "must be >= 1");
  }
};

namespace config_detail {

template <typename T>
struct FieldRef {
  const char* key;
  T TrainConfig::* member;
};

inline constexpr FieldRef<std::string> kStringFields[] = {
    {"env.task", &TrainConfig::env_task},
    {"population.trigger_mode", &TrainConfig::pop_trigger_mode},
    {"population.crossover", &TrainConfig::pop_crossover},
    {"run.out_dir", &TrainConfig::run_out_dir},
};

inline constexpr FieldRef<std::int64_t> kIntFields[] = {
    {"env.num_envs", &TrainConfig::env_num_envs},
    {"population.K", &TrainConfig::pop_num_agents},
    {"population.N_lat", &TrainConfig::pop_n_lat},
    {"population.x_elites", &TrainConfig::pop_x_elites},
    {"population.cooldown", &TrainConfig::pop_cooldown},
    {"ppo.horizon", &TrainConfig::ppo_horizon},
    {"ppo.mini_epochs", &TrainConfig::ppo_mini_epochs},
    {"ppo.minibatch_size", &TrainConfig::ppo_minibatch_size},
    {"buffer.chunks", &TrainConfig::buffer_chunks},
    {"run.total_env_steps", &TrainConfig::run_total_env_steps},
};

inline constexpr FieldRef<double> kDoubleFields[] = {
    {"population.sigma_mut", &TrainConfig::pop_sigma_mut},
    {"population.gamma_trigger", &TrainConfig::pop_gamma_trigger},
    {"ppo.gamma", &TrainConfig::ppo_gamma},
    {"ppo.lambda_gae", &TrainConfig::ppo_lambda_gae},
    {"ppo.eps_clip", &TrainConfig::ppo_eps_clip},
    {"ppo.critic_coef", &TrainConfig::ppo_critic_coef},
    {"ppo.entropy_coef", &TrainConfig::ppo_entropy_coef},
    {"ppo.bounds_coef", &TrainConfig::ppo_bounds_coef},
    {"ppo.lambda_off", &TrainConfig::ppo_lambda_off},
    {"opt.lr", &TrainConfig::opt_lr},
    {"opt.kl_threshold", &TrainConfig::opt_kl_threshold},
    {"opt.max_grad_norm", &TrainConfig::opt_max_grad_norm},
};

}  // namespace config_detail

/// Sets one field from a dotted key and a string value (CLI override form).
inline void apply_override(TrainConfig& cfg, const std::string& key,
                           const std::string& value) {
  using namespace config_detail;
  if (key == "run.seed") {
    try {
      cfg.run_seed = std::stoull(value);
    } catch (const std::exception&) {
      throw ConfigError(key, "expected unsigned integer, got '" + value + "'");
    }
    return;
  }
  for (const auto& f : kStringFields) {
    if (key == f.key) {
      cfg.*(f.member) = value;
      return;
    }
  }
  for (const auto& f : kIntFields) {
    if (key == f.key) {
      try {
        std::size_t pos = 0;
        const std::int64_t v = std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        cfg.*(f.member) = v;
      } catch (const std::exception&) {
        throw ConfigError(key, "expected integer, got '" + value + "'");
      }
      return;
    }
  }
  for (const auto& f : kDoubleFields) {
    if (key == f.key) {
      try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        cfg.*(f.member) = v;
      } catch (const std::exception&) {
        throw ConfigError(key, "expected number, got '" + value + "'");
      }
      return;
    }
  }
  throw ConfigError(key, "unknown config key");
}

inline nlohmann::json config_to_json(const TrainConfig& cfg) {
  using namespace config_detail;
  nlohmann::json j;
  for (const auto& f : kStringFields) {
    auto dot = std::string(f.key);
    const auto split = dot.find('.');
    j[dot.substr(0, split)][dot.substr(split + 1)] = cfg.*(f.member);
  }
  for (const auto& f : kIntFields) {
    auto dot = std::string(f.key);
    const auto split = dot.find('.');
    j[dot.substr(0, split)][dot.substr(split + 1)] = cfg.*(f.member);
  }
  for (const auto& f : kDoubleFields) {
    auto dot = std::string(f.key);
    const auto split = dot.find('.');
    j[dot.substr(0, split)][dot.substr(split + 1)] = cfg.*(f.member);
  }
  j["run"]["seed"] = cfg.run_seed;
  return j;
}

/// Parses a nested JSON object into a config. Unknown keys are rejected so a
/// typo cannot silently fall back to a default.
inline TrainConfig config_from_json(const nlohmann::json& j) {
  using namespace config_detail;
  TrainConfig cfg;
  for (const auto& [section, body] : j.items()) {
    if (!body.is_object()) {
      throw ConfigError(section, "expected an object of settings");
    }
    for (const auto& [name, value] : body.items()) {
      const std::string key = section + "." + name;
      if (key == "run.seed") {
        if (!value.is_number_unsigned() && !value.is_number_integer()) {
          throw ConfigError(key, "expected unsigned integer");
        }
        cfg.run_seed = value.get<std::uint64_t>();
        continue;
      }
      bool matched = false;
      for (const auto& f : kStringFields) {
        if (key == f.key) {
          if (!value.is_string()) throw ConfigError(key, "expected string");
          cfg.*(f.member) = value.get<std::string>();
          matched = true;
          break;
        }
      }
      if (matched) continue;
      for (const auto& f : kIntFields) {
        if (key == f.key) {
          if (!value.is_number_integer() && !value.is_number_unsigned()) {
            throw ConfigError(key, "expected integer");
          }
          cfg.*(f.member) = value.get<std::int64_t>();
          matched = true;
          break;
        }
      }
      if (matched) continue;
      for (const auto& f : kDoubleFields) {
        if (key == f.key) {
          if (!value.is_number()) throw ConfigError(key, "expected number");
          cfg.*(f.member) = value.get<double>();
          matched = true;
          break;
        }
      }
      if (!matched) throw ConfigError(key, "unknown config key");
    }
  }
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config parse error in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace epo
