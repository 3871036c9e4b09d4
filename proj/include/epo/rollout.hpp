#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "epo/envs.hpp"
#include "epo/mat.hpp"
#include "epo/normalizer.hpp"
#include "epo/policy.hpp"
#include "epo/rng.hpp"

namespace epo {

/// One environment step as stored in a replay buffer. `obs` / `next_obs` are
/// the normalized inputs the behavior policy actually consumed, so the stored
/// log-density stays exactly recomputable; `raw_obs` keeps the
/// pre-normalization observation for the running-statistics update.
struct TransitionRecord {
  int agent_id = 0;  // 1-based
  std::vector<double> raw_obs;
  std::vector<double> obs;
  std::vector<double> action;
  std::vector<double> next_obs;
  double behavior_log_prob = 0.0;
  double behavior_value = 0.0;
  double reward = 0.0;
  bool done = false;
  std::int64_t iteration_collected = 0;
};

/// Bounded cyclic transition store; oldest records are overwritten first.
class ReplayBuffer {
 public:
  ReplayBuffer(int agent_id, std::size_t capacity)
      : agent_id_(agent_id), capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("ReplayBuffer: zero capacity");
  }

  int agent_id() const { return agent_id_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return storage_.size(); }
  std::size_t write_cursor() const { return write_cursor_; }

  /// Returns the slot the record was written to.
  std::size_t push(TransitionRecord rec) {
    std::size_t slot;
    if (storage_.size() < capacity_) {
      slot = storage_.size();
      storage_.push_back(std::move(rec));
    } else {
      slot = write_cursor_;
      storage_[slot] = std::move(rec);
    }
    write_cursor_ = (slot + 1) % capacity_;
    return slot;
  }

  const TransitionRecord& slot(std::size_t i) const { return storage_[i]; }
  TransitionRecord& mutable_slot(std::size_t i) { return storage_[i]; }

  void clear() {
    storage_.clear();
    write_cursor_ = 0;
  }

  void set_write_cursor(std::size_t c) { write_cursor_ = c; }

 private:
  int agent_id_;
  std::size_t capacity_;
  std::vector<TransitionRecord> storage_;
  std::size_t write_cursor_ = 0;
};

/// Output of one agent's collection phase: the freshly written buffer slots
/// (time-major: t * envs + e), horizon bootstrap values, and the episodes
/// that completed along the way.
struct CollectResult {
  std::size_t horizon = 0;
  std::size_t envs = 0;
  std::vector<std::size_t> slots;
  std::vector<double> bootstrap_values;  // V of the final next_obs per env
  std::vector<CompletedEpisode> completed;
};

/// Runs `horizon` steps of the agent's environment slice, pushing one record
/// per (step, env) into the agent's buffer. The normalizer is read-only here;
/// the trainer folds the raw observations in afterwards so that collection
/// order across agents cannot matter.
inline CollectResult collect(const PolicyModel& model, std::size_t agent_idx,
                             EnvBatch& envs, const EnvSlice& slice,
                             std::size_t horizon, const RunningNormalizer& normalizer,
                             const ValueTransform& value_transform,
                             RngStream& policy_rng, ReplayBuffer& buffer,
                             std::int64_t iteration) {
  CollectResult result;
  result.horizon = horizon;
  result.envs = slice.size();
  result.slots.reserve(horizon * slice.size());

  Mat raw_obs = envs.observe(slice.begin, slice.end);
  Mat obs = normalizer.normalize(raw_obs);
  for (std::size_t t = 0; t < horizon; ++t) {
    ActBatch batch = act(model, agent_idx, obs, policy_rng);
    const std::vector<double> values = value(model, agent_idx, obs);
    StepResult step = envs.step(slice.begin, slice.end, batch.sample);
    Mat raw_next = std::move(step.next_obs);
    Mat next_obs = normalizer.normalize(raw_next);
    for (std::size_t e = 0; e < slice.size(); ++e) {
      TransitionRecord rec;
      rec.agent_id = static_cast<int>(agent_idx) + 1;
      auto raw_row = raw_obs.row(e);
      auto obs_row = obs.row(e);
      auto act_row = batch.sample.row(e);
      auto next_row = next_obs.row(e);
      rec.raw_obs.assign(raw_row.begin(), raw_row.end());
      rec.obs.assign(obs_row.begin(), obs_row.end());
      rec.action.assign(act_row.begin(), act_row.end());
      rec.next_obs.assign(next_row.begin(), next_row.end());
      rec.behavior_log_prob = batch.log_prob[e];
      rec.behavior_value = value_transform.to_raw(values[e]);
      rec.reward = step.rewards[e];
      rec.done = step.dones[e] != 0;
      rec.iteration_collected = iteration;
      result.slots.push_back(buffer.push(std::move(rec)));
    }
    for (const auto& ep : step.completed) result.completed.push_back(ep);
    raw_obs = std::move(raw_next);
    obs = std::move(next_obs);
  }
  result.bootstrap_values = value(model, agent_idx, obs);
  for (double& v : result.bootstrap_values) v = value_transform.to_raw(v);
  return result;
}

enum class AdvantageKind { on_policy_gae, off_policy_one_step };

struct AdvantageBatch {
  std::vector<double> advantages;
  std::vector<double> value_targets;
  AdvantageKind kind = AdvantageKind::on_policy_gae;
};

/// GAE over a (horizon x envs) grid, time-major. `values[t*E+e]` is the
/// behavior value of s_t; `bootstrap[e]` the value of the state after the
/// last step. Episode ends cut the recursion. Advantages are returned raw;
/// the caller normalizes per update batch.
inline AdvantageBatch gae_advantages(std::span<const double> rewards,
                                     std::span<const std::uint8_t> dones,
                                     std::span<const double> values,
                                     std::span<const double> bootstrap,
                                     double gamma, double lambda_gae) {
  const std::size_t envs = bootstrap.size();
  if (envs == 0 || rewards.size() % envs != 0 || rewards.size() != dones.size() ||
      rewards.size() != values.size()) {
    throw std::invalid_argument("gae_advantages: length mismatch");
  }
  const std::size_t horizon = rewards.size() / envs;
  AdvantageBatch out;
  out.kind = AdvantageKind::on_policy_gae;
  out.advantages.assign(rewards.size(), 0.0);
  out.value_targets.assign(rewards.size(), 0.0);
  for (std::size_t e = 0; e < envs; ++e) {
    double next_adv = 0.0;
    for (std::size_t t = horizon; t-- > 0;) {
      const std::size_t i = t * envs + e;
      const double not_done = dones[i] ? 0.0 : 1.0;
      const double next_value = (t + 1 < horizon) ? values[(t + 1) * envs + e]
                                                  : bootstrap[e];
      const double delta = rewards[i] + gamma * next_value * not_done - values[i];
      next_adv = delta + gamma * lambda_gae * not_done * next_adv;
      out.advantages[i] = next_adv;
      out.value_targets[i] = next_adv + values[i];
    }
  }
  return out;
}

/// n-step returns (Eq-6 style): sum of up to n discounted rewards plus a
/// discounted bootstrap from the stored values. A done inside the window
/// truncates the sum and drops the bootstrap; windows that hit the horizon
/// boundary bootstrap from `bootstrap` with correspondingly fewer steps.
inline std::vector<double> n_step_targets(std::span<const double> rewards,
                                          std::span<const std::uint8_t> dones,
                                          std::span<const double> values,
                                          std::span<const double> bootstrap,
                                          double gamma, std::size_t n = 3) {
  const std::size_t envs = bootstrap.size();
  if (envs == 0 || rewards.size() % envs != 0 || rewards.size() != dones.size() ||
      rewards.size() != values.size() || n == 0) {
    throw std::invalid_argument("n_step_targets: length mismatch");
  }
  const std::size_t horizon = rewards.size() / envs;
  std::vector<double> targets(rewards.size(), 0.0);
  for (std::size_t e = 0; e < envs; ++e) {
    for (std::size_t t = 0; t < horizon; ++t) {
      double acc = 0.0;
      double discount = 1.0;
      bool terminated = false;
      std::size_t steps = 0;
      for (std::size_t j = 0; j < n && t + j < horizon; ++j) {
        const std::size_t i = (t + j) * envs + e;
        acc += discount * rewards[i];
        discount *= gamma;
        ++steps;
        if (dones[i]) {
          terminated = true;
          break;
        }
      }
      if (!terminated) {
        const std::size_t bt = t + steps;
        acc += discount * (bt < horizon ? values[bt * envs + e] : bootstrap[e]);
      }
      targets[t * envs + e] = acc;
    }
  }
  return targets;
}

/// 1-step targets for off-policy data: r + gamma * V(s') * (1 - done).
inline std::vector<double> one_step_targets(std::span<const double> rewards,
                                            std::span<const std::uint8_t> dones,
                                            std::span<const double> v_next,
                                            double gamma) {
  if (rewards.size() != dones.size() || rewards.size() != v_next.size()) {
    throw std::invalid_argument("one_step_targets: length mismatch");
  }
  std::vector<double> targets(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    targets[i] = rewards[i] + (dones[i] ? 0.0 : gamma * v_next[i]);
  }
  return targets;
}

/// Reference to a transition inside one of the follower buffers.
struct SampleRef {
  std::size_t buffer_index = 0;  // index into the follower-buffer list
  std::size_t slot = 0;
};

struct OffPolicySample {
  std::vector<SampleRef> refs;
  bool with_replacement = false;
};

/// Uniformly samples `count` transitions from the union of the follower
/// buffers: without replacement when the union is large enough, with
/// replacement (flagged) otherwise. An empty union yields an empty batch.
inline OffPolicySample sample_off_policy(std::span<const ReplayBuffer* const> followers,
                                         std::size_t count, RngStream& rng) {
  OffPolicySample out;
  std::vector<SampleRef> univ;
  for (std::size_t b = 0; b < followers.size(); ++b) {
    for (std::size_t s = 0; s < followers[b]->size(); ++s) univ.push_back({b, s});
  }
  if (univ.empty() || count == 0) return out;
  if (count <= univ.size()) {
    // partial Fisher-Yates
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.range(univ.size() - i));
      std::swap(univ[i], univ[j]);
    }
    out.refs.assign(univ.begin(), univ.begin() + static_cast<std::ptrdiff_t>(count));
  } else {
    out.with_replacement = true;
    out.refs.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      out.refs.push_back(univ[static_cast<std::size_t>(rng.range(univ.size()))]);
    }
  }
  return out;
}

/// In-place normalization to mean 0, std 1 (std floored at 1e-8).
inline void normalize_advantages(std::span<double> adv) {
  if (adv.empty()) return;
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= static_cast<double>(adv.size());
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  var /= static_cast<double>(adv.size());
  const double std_floor = std::max(std::sqrt(var), 1e-8);
  for (double& a : adv) a = (a - mean) / std_floor;
}

}  // namespace epo
