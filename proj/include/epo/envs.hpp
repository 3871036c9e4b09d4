#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "epo/mat.hpp"
#include "epo/rng.hpp"

namespace epo {

enum class Task { pendulum, sparse_mountain_car, multigoal_reacher };

inline Task task_from_string(const std::string& s) {
  if (s == "pendulum") return Task::pendulum;
  if (s == "sparse_mountain_car") return Task::sparse_mountain_car;
  if (s == "multigoal_reacher") return Task::multigoal_reacher;
  throw std::invalid_argument("unknown task: " + s);
}

inline std::string task_to_string(Task t) {
  switch (t) {
    case Task::pendulum: return "pendulum";
    case Task::sparse_mountain_car: return "sparse_mountain_car";
    case Task::multigoal_reacher: return "multigoal_reacher";
  }
  return "?";
}

inline std::size_t task_state_dim(Task t) {
  return t == Task::multigoal_reacher ? 4 : 2;
}
inline std::size_t task_obs_dim(Task t) {
  switch (t) {
    case Task::pendulum: return 3;
    case Task::sparse_mountain_car: return 2;
    case Task::multigoal_reacher: return 4;
  }
  return 0;
}
inline std::size_t task_action_dim(Task t) {
  return t == Task::multigoal_reacher ? 2 : 1;
}
inline int task_episode_limit(Task t) {
  switch (t) {
    case Task::pendulum: return 200;
    case Task::sparse_mountain_car: return 400;
    case Task::multigoal_reacher: return 100;
  }
  return 0;
}

struct CompletedEpisode {
  std::size_t env_index = 0;
  double episode_return = 0.0;
  bool goal_reached = false;
  int length = 0;
};

struct StepResult {
  Mat next_obs;                            // post auto-reset
  std::vector<double> rewards;
  std::vector<std::uint8_t> dones;
  std::vector<CompletedEpisode> completed;  // episodes that ended this step
};

namespace env_detail {

inline double wrap_angle(double theta) {
  // into (-pi, pi]
  constexpr double kPi = 3.14159265358979323846;
  constexpr double kTwoPi = 2.0 * kPi;
  theta = std::fmod(theta + kPi, kTwoPi);
  if (theta <= 0.0) theta += kTwoPi;
  return theta - kPi;
}

}  // namespace env_detail

/// A batch of independent environment instances sharing one task. Each
/// instance owns its reset stream, so stepping any subset of rows never
/// disturbs another row's randomness. Episodes auto-reset: a done row's
/// next_obs is the freshly reset observation and its undiscounted return is
/// surfaced in `completed`.
class EnvBatch {
 public:
  EnvBatch(Task task, std::size_t num_envs, std::uint64_t seed,
           std::uint64_t stream_base = 0)
      : task_(task),
        states_(num_envs, task_state_dim(task)),
        step_counts_(num_envs, 0),
        episode_returns_(num_envs, 0.0) {
    rngs_.reserve(num_envs);
    for (std::size_t i = 0; i < num_envs; ++i) {
      rngs_.emplace_back(seed, stream_base + i);
    }
    for (std::size_t i = 0; i < num_envs; ++i) reset_env(i);
  }

  Task task() const { return task_; }
  std::size_t num_envs() const { return states_.rows; }
  std::size_t obs_dim() const { return task_obs_dim(task_); }
  std::size_t action_dim() const { return task_action_dim(task_); }
  const Mat& states() const { return states_; }
  std::span<const int> step_counts() const { return step_counts_; }

  /// Observations for rows [begin, end).
  Mat observe(std::size_t begin, std::size_t end) const {
    Mat obs(end - begin, obs_dim());
    for (std::size_t i = begin; i < end; ++i) {
      write_obs(i, obs.row(i - begin));
    }
    return obs;
  }

  Mat observe_all() const { return observe(0, num_envs()); }

  /// Steps rows [begin, end) with one action row each. Actions are clamped
  /// per-dimension to [-1, 1] before the dynamics.
  StepResult step(std::size_t begin, std::size_t end, const Mat& actions) {
    if (actions.rows != end - begin || actions.cols != action_dim()) {
      throw std::invalid_argument("EnvBatch::step: action shape mismatch, want " +
                                  std::to_string(end - begin) + "x" +
                                  std::to_string(action_dim()));
    }
    StepResult result;
    result.next_obs = Mat(end - begin, obs_dim());
    result.rewards.resize(end - begin);
    result.dones.assign(end - begin, 0);
    const int limit = task_episode_limit(task_);
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t r = i - begin;
      double a[2] = {0.0, 0.0};
      for (std::size_t d = 0; d < action_dim(); ++d) {
        a[d] = clamp(actions.at(r, d), -1.0, 1.0);
      }
      double reward = 0.0;
      bool goal = false;
      step_env(i, a, reward, goal);
      step_counts_[i] += 1;
      episode_returns_[i] += reward;
      const bool done = goal || step_counts_[i] >= limit;
      result.rewards[r] = reward;
      result.dones[r] = done ? 1 : 0;
      if (done) {
        result.completed.push_back(
            {i, episode_returns_[i], goal, step_counts_[i]});
        reset_env(i);
      }
      write_obs(i, result.next_obs.row(r));
    }
    return result;
  }

  StepResult step_all(const Mat& actions) { return step(0, num_envs(), actions); }

  RngStream& env_rng(std::size_t i) { return rngs_[i]; }
  const RngStream& env_rng(std::size_t i) const { return rngs_[i]; }
  std::span<const double> episode_returns() const { return episode_returns_; }

  // checkpoint access
  Mat& mutable_states() { return states_; }
  std::vector<int>& mutable_step_counts() { return step_counts_; }
  std::vector<double>& mutable_episode_returns() { return episode_returns_; }

 private:
  void write_obs(std::size_t i, std::span<double> out) const {
    switch (task_) {
      case Task::pendulum: {
        const double theta = states_.at(i, 0);
        out[0] = std::cos(theta);
        out[1] = std::sin(theta);
        out[2] = states_.at(i, 1);
        break;
      }
      case Task::sparse_mountain_car:
      case Task::multigoal_reacher:
        for (std::size_t d = 0; d < task_state_dim(task_); ++d) {
          out[d] = states_.at(i, d);
        }
        break;
    }
  }

  void reset_env(std::size_t i) {
    auto& rng = rngs_[i];
    switch (task_) {
      case Task::pendulum:
        states_.at(i, 0) = rng.uniform(-3.14159265358979323846, 3.14159265358979323846);
        states_.at(i, 1) = rng.uniform(-1.0, 1.0);
        break;
      case Task::sparse_mountain_car:
        states_.at(i, 0) = rng.uniform(-0.6, -0.4);
        states_.at(i, 1) = 0.0;
        break;
      case Task::multigoal_reacher:
        states_.at(i, 0) = rng.uniform(-0.05, 0.05);
        states_.at(i, 1) = rng.uniform(-0.05, 0.05);
        states_.at(i, 2) = 0.0;
        states_.at(i, 3) = 0.0;
        break;
    }
    step_counts_[i] = 0;
    episode_returns_[i] = 0.0;
  }

  void step_env(std::size_t i, const double* a, double& reward, bool& goal) {
    switch (task_) {
      case Task::pendulum: {
        constexpr double g = 10.0, m = 1.0, l = 1.0, dt = 0.05;
        const double u = 2.0 * a[0];
        double theta = states_.at(i, 0);
        double theta_dot = states_.at(i, 1);
        const double theta_acc =
            3.0 * g / (2.0 * l) * std::sin(theta) + 3.0 / (m * l * l) * u;
        theta_dot = clamp(theta_dot + theta_acc * dt, -8.0, 8.0);
        theta = env_detail::wrap_angle(theta + theta_dot * dt);
        states_.at(i, 0) = theta;
        states_.at(i, 1) = theta_dot;
        reward = -(theta * theta + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
        goal = false;  // no early termination
        break;
      }
      case Task::sparse_mountain_car: {
        double x = states_.at(i, 0);
        double v = states_.at(i, 1);
        v = clamp(v + 0.0015 * a[0] - 0.0025 * std::cos(3.0 * x), -0.07, 0.07);
        x = clamp(x + v, -1.2, 0.6);
        if (x <= -1.2) v = 0.0;
        states_.at(i, 0) = x;
        states_.at(i, 1) = v;
        reward = -0.1 * a[0] * a[0];
        goal = x >= 0.45;
        if (goal) reward += 100.0;
        break;
      }
      case Task::multigoal_reacher: {
        constexpr double goal1[2] = {0.3, 0.3}, goal2[2] = {-0.8, -0.8};
        constexpr double kRadius = 0.1;
        double p[2] = {states_.at(i, 0), states_.at(i, 1)};
        double v[2] = {states_.at(i, 2), states_.at(i, 3)};
        for (int d = 0; d < 2; ++d) {
          v[d] = clamp(0.98 * v[d] + 0.1 * a[d], -0.5, 0.5);
          p[d] = clamp(p[d] + 0.05 * v[d], -1.0, 1.0);
        }
        states_.at(i, 0) = p[0];
        states_.at(i, 1) = p[1];
        states_.at(i, 2) = v[0];
        states_.at(i, 3) = v[1];
        const double d1 = std::hypot(p[0] - goal1[0], p[1] - goal1[1]);
        const double d2 = std::hypot(p[0] - goal2[0], p[1] - goal2[1]);
        if (d1 <= kRadius) {
          reward = 1.0;
          goal = true;
        } else if (d2 <= kRadius) {
          reward = 10.0;
          goal = true;
        } else {
          reward = -0.01 * (a[0] * a[0] + a[1] * a[1]);
          goal = false;
        }
        break;
      }
    }
  }

  Task task_;
  Mat states_;
  std::vector<int> step_counts_;
  std::vector<double> episode_returns_;
  std::vector<RngStream> rngs_;
};

struct EnvSlice {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

/// Contiguous equal partition of N environments over K agents; slice k
/// (0-based) is [k*N/K, (k+1)*N/K).
inline std::vector<EnvSlice> partition_envs(std::size_t num_envs, std::size_t num_agents) {
  if (num_agents == 0) throw std::invalid_argument("partition_envs: K must be >= 1");
  if (num_envs % num_agents != 0) {
    throw std::invalid_argument("partition_envs: num_envs (" + std::to_string(num_envs) +
                                ") not divisible by K (" + std::to_string(num_agents) + ")");
  }
  const std::size_t per = num_envs / num_agents;
  std::vector<EnvSlice> slices(num_agents);
  for (std::size_t k = 0; k < num_agents; ++k) {
    slices[k] = {k * per, (k + 1) * per};
  }
  return slices;
}

}  // namespace epo
