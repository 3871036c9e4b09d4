#pragma once

#include <algorithm>
#include <chrono>
#include <ctime>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "epo/checkpoint.hpp"
#include "epo/config.hpp"
#include "epo/envs.hpp"
#include "epo/evolution.hpp"
#include "epo/metrics.hpp"
#include "epo/normalizer.hpp"
#include "epo/params.hpp"
#include "epo/policy.hpp"
#include "epo/rollout.hpp"
#include "epo/update.hpp"

namespace epo {

inline constexpr const char* kEngineVersion = "v0.1.0";

/// KL-adaptive learning-rate rule: shrink by 1.5x above twice the threshold,
/// grow by 1.5x below half of it, clamp to [1e-6, 1e-2].
inline double adaptive_lr(double current_lr, double measured_kl, double kl_threshold) {
  if (measured_kl > 2.0 * kl_threshold) return std::max(current_lr / 1.5, 1e-6);
  if (measured_kl < 0.5 * kl_threshold) return std::min(current_lr * 1.5, 1e-2);
  return current_lr;
}

/// Snapshot of the last minibatch of an iteration, captured for tests via
/// TrainOptions::observer. `params_before` is the parameter state the
/// reported breakdown was computed against.
struct IterationTrace {
  std::int64_t iteration = 0;
  MiniBatch last_minibatch;
  ParamVector params_before;
  std::vector<LossBreakdown> minibatch_breakdowns;
  std::size_t off_batch_size = 0;
};

struct TrainOptions {
  int collect_threads = 1;
  std::int64_t checkpoint_every = 0;  // iterations between periodic checkpoints
  std::int64_t progress_every = 0;    // stderr progress cadence, 0 = silent
  std::function<void(const IterationTrace&)> observer;
};

struct GeneEval {
  int agent_id = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double success_rate = 0.0;
};

struct EvalSummary {
  std::string task;
  int episodes = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double success_rate = 0.0;
  std::vector<GeneEval> per_gene;  // entry 0 is the master when requested
};

namespace stream_ids {
inline constexpr std::uint64_t kInit = 0;
inline constexpr std::uint64_t kEnvBase = 1'000'000;
inline constexpr std::uint64_t kPolicyBase = 2'000'000;
inline constexpr std::uint64_t kEvolution = 3'000'000;
inline constexpr std::uint64_t kSampling = 3'000'001;
inline constexpr std::uint64_t kShuffle = 3'000'002;
inline constexpr std::uint64_t kEvalBase = 4'000'000;
}  // namespace stream_ids

inline constexpr std::size_t kDefaultHidden[] = {64, 64};

/// Deterministic mean-action rollouts of one gene. Episode e always uses the
/// env stream (seed, kEvalBase + e), so different genes see identical resets.
inline GeneEval evaluate_gene(const PolicyModel& model,
                              const RunningNormalizer& normalizer, Task task,
                              std::size_t gene_idx, int episodes, std::uint64_t seed) {
  GeneEval out;
  out.agent_id = static_cast<int>(gene_idx) + 1;
  if (episodes < 1) throw std::invalid_argument("evaluate_gene: episodes must be >= 1");
  RngStream unused_rng(seed, 999);
  std::vector<double> returns;
  int successes = 0;
  for (int ep = 0; ep < episodes; ++ep) {
    EnvBatch env(task, 1, seed, stream_ids::kEvalBase + static_cast<std::uint64_t>(ep));
    double episode_return = 0.0;
    bool running = true;
    while (running) {
      const Mat raw = env.observe_all();
      const Mat obs = normalizer.normalize(raw);
      const ActBatch batch = act(model, gene_idx, obs, unused_rng, /*deterministic=*/true);
      const StepResult step = env.step_all(batch.sample);
      episode_return += step.rewards[0];
      if (step.dones[0]) {
        running = false;
        if (step.completed.at(0).goal_reached) ++successes;
      }
    }
    returns.push_back(episode_return);
  }
  double mean = 0.0;
  for (double r : returns) mean += r;
  mean /= static_cast<double>(returns.size());
  double var = 0.0;
  for (double r : returns) var += (r - mean) * (r - mean);
  var /= static_cast<double>(returns.size());
  out.mean_return = mean;
  out.std_return = std::sqrt(var);
  out.success_rate = static_cast<double>(successes) / static_cast<double>(episodes);
  return out;
}

/// Orchestrates one training run: per-iteration fitness evaluation,
/// conditional evolution of the follower genes, parallel per-agent
/// collection, off-policy sampling for the master, and the joint minibatch
/// update of trunk weights, log-std and every latent gene.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg, TrainOptions opt = {})
      : cfg_(std::move(cfg)), opt_(std::move(opt)) {
    cfg_.resolve();
    task_ = task_from_string(cfg_.env_task);
    const PolicySizes sizes{task_obs_dim(task_), task_action_dim(task_),
                            static_cast<std::size_t>(cfg_.pop_n_lat),
                            static_cast<std::size_t>(cfg_.pop_num_agents)};
    RngStream init_rng(cfg_.run_seed, stream_ids::kInit);
    model_.emplace(sizes,
                   std::vector<std::size_t>(std::begin(kDefaultHidden),
                                            std::end(kDefaultHidden)),
                   Activation::elu, init_rng);
    envs_.emplace(task_, static_cast<std::size_t>(cfg_.env_num_envs), cfg_.run_seed,
                  stream_ids::kEnvBase);
    slices_ = partition_envs(static_cast<std::size_t>(cfg_.env_num_envs),
                             static_cast<std::size_t>(cfg_.pop_num_agents));
    const std::size_t capacity = static_cast<std::size_t>(
        cfg_.buffer_chunks * cfg_.ppo_horizon * cfg_.envs_per_agent());
    for (std::int64_t k = 0; k < cfg_.pop_num_agents; ++k) {
      buffers_.emplace_back(static_cast<int>(k) + 1, capacity);
      policy_rngs_.emplace_back(cfg_.run_seed,
                                stream_ids::kPolicyBase + static_cast<std::uint64_t>(k));
    }
    normalizer_.emplace(sizes.obs_dim);
    adam_ = AdamState(model_->params.size());
    evolution_rng_ = RngStream(cfg_.run_seed, stream_ids::kEvolution);
    sampling_rng_ = RngStream(cfg_.run_seed, stream_ids::kSampling);
    shuffle_rng_ = RngStream(cfg_.run_seed, stream_ids::kShuffle);
    tracker_.emplace(sizes.num_agents);
    pop_.num_agents = sizes.num_agents;
    pop_.genes.resize(sizes.num_agents);
    lr_ = cfg_.opt_lr;
  }

  const TrainConfig& config() const { return cfg_; }
  std::int64_t iteration() const { return iteration_; }
  std::int64_t env_steps() const { return env_steps_; }
  double learning_rate() const { return lr_; }
  const MetricsLog& metrics() const { return metrics_; }
  const EvolutionLog& evolution_log() const { return evo_log_; }
  PolicyModel& model() { return *model_; }
  const PolicyModel& model() const { return *model_; }
  const RunningNormalizer& normalizer() const { return *normalizer_; }
  const FitnessTracker& fitness() const { return *tracker_; }
  ReplayBuffer& buffer(std::size_t k) { return buffers_[k]; }
  const PopulationState& population() const { return pop_; }

  bool budget_remaining() const { return env_steps_ < cfg_.run_total_env_steps; }
  std::int64_t offpolicy_with_replacement() const { return with_replacement_count_; }

  /// One full pass of the training loop. Returns false once the step budget
  /// is exhausted (in which case nothing ran).
  bool run_iteration() {
    if (!budget_remaining()) return false;
    const std::int64_t it = iteration_ + 1;
    MetricsRow row;
    row.iteration = it;

    // (a) fitness scores for the followers
    const std::size_t num_agents = pop_.num_agents;
    std::vector<std::optional<double>> follower_scores;
    for (std::size_t k = 1; k < num_agents; ++k) {
      follower_scores.push_back(tracker_->score(k));
    }
    fill_fitness_stats(follower_scores, row);

    // (b) evolution, gated by the trigger rule and the cooldown
    if (num_agents >= 3 && cfg_.pop_x_elites >= 1 &&
        should_evolve(follower_scores, cfg_.pop_gamma_trigger,
                      trigger_mode_from_string(cfg_.pop_trigger_mode),
                      it - pop_.last_evolution_iteration, cfg_.pop_cooldown)) {
      run_evolution(it, follower_scores);
      row.evolved = 1;
    }

    // (c) collection across all agents, then deterministic merges
    std::vector<CollectResult> collected(num_agents);
    collect_all(collected, it);
    for (std::size_t k = 0; k < num_agents; ++k) {
      Mat raw(collected[k].slots.size(), task_obs_dim(task_));
      for (std::size_t i = 0; i < collected[k].slots.size(); ++i) {
        const auto& rec = buffers_[k].slot(collected[k].slots[i]);
        std::copy(rec.raw_obs.begin(), rec.raw_obs.end(), raw.row(i).begin());
      }
      normalizer_->update(raw);
      for (const auto& ep : collected[k].completed) {
        tracker_->add_episode(k, ep.episode_return);
      }
    }
    env_steps_ += cfg_.ppo_horizon * cfg_.env_num_envs;

    // (d) on-policy batch: GAE advantages + n-step critic targets
    OnPolicyBatch on = assemble_on_policy(collected);

    // (e) off-policy batch for the master, quantities under pre-update params
    OffPolicyBatch off = assemble_off_policy();

    // (f) critic targets are learned in normalized space; stats track the
    // raw on-policy targets of each iteration
    value_norm_.update(on.targets);
    for (double& t : on.targets) t = value_norm_.normalize(t);
    for (double& t : off.targets) t = value_norm_.normalize(t);

    // (g) minibatch passes with one joint Adam step each; the KL-adaptive
    // learning rate updates after every minibatch
    const UpdateStats stats = run_update(on, off, it);
    row.approx_kl = stats.last.approx_kl;
    row.loss_total = stats.last.total;
    row.loss_actor_on = stats.last.on_policy_actor;
    row.loss_actor_off = stats.last.off_policy_actor;
    row.loss_critic_on = stats.last.critic_on;
    row.loss_critic_off = stats.last.critic_off;
    row.entropy = stats.last.entropy;
    row.bounds = stats.last.bounds;
    row.clip_frac_on = stats.last.clip_fraction_on;
    row.clip_frac_off = stats.last.clip_fraction_off;
    row.offpolicy_dropped = static_cast<std::int64_t>(stats.dropped);

    lr_ = adaptive_lr(lr_, stats.last.approx_kl, cfg_.opt_kl_threshold);
    row.lr = lr_;
    row.env_steps = env_steps_;
    if (const auto master = tracker_->score(0)) row.master_mean_return = *master;
    metrics_.append(row);
    iteration_ = it;

    if (opt_.progress_every > 0 && it % opt_.progress_every == 0) {
      std::cerr << "iter " << it << " steps " << env_steps_ << " return "
                << format_double(row.master_mean_return) << " kl "
                << format_double(row.approx_kl) << " lr " << format_double(lr_)
                << "\n";
    }
    if (!run_dir_.empty() && opt_.checkpoint_every > 0 &&
        it % opt_.checkpoint_every == 0) {
      save_checkpoint(run_dir_ + "/ckpt_" + std::to_string(it) + ".ckpt");
    }
    return budget_remaining();
  }

  /// Runs to the step budget. With an out_dir configured this also writes the
  /// run manifest, metrics CSV, evolution log and final checkpoint.
  void run() {
    if (!cfg_.run_out_dir.empty() && run_dir_.empty()) open_run_dir();
    try {
      while (run_iteration()) {
      }
    } catch (const std::exception& e) {
      if (!run_dir_.empty()) {
        save_checkpoint(run_dir_ + "/ckpt_diagnostic.ckpt");
        finalize_run_dir("failed: " + std::string(e.what()));
      }
      throw;
    }
    if (!run_dir_.empty()) {
      save_checkpoint(run_dir_ + "/ckpt_final.ckpt");
      finalize_run_dir("complete");
    }
  }

  void open_run_dir() {
    run_dir_ = cfg_.run_out_dir;
    std::filesystem::create_directories(run_dir_);
    metrics_.open(run_dir_ + "/metrics.csv");
    evo_log_.open(run_dir_ + "/evolution.jsonl");
    nlohmann::json manifest;
    manifest["version"] = kEngineVersion;
    manifest["seed"] = cfg_.run_seed;
    manifest["config"] = config_to_json(cfg_);
    manifest["started_at"] = now_string();
    manifest["status"] = "running";
    manifest["paths"] = {{"metrics", "metrics.csv"},
                         {"evolution_log", "evolution.jsonl"},
                         {"final_checkpoint", "ckpt_final.ckpt"}};
    write_manifest(manifest);
  }

  void finalize_run_dir(const std::string& status) {
    std::ifstream in(run_dir_ + "/manifest.json");
    nlohmann::json manifest;
    in >> manifest;
    in.close();
    manifest["status"] = status;
    manifest["finished_at"] = now_string();
    manifest["iterations"] = iteration_;
    manifest["env_steps"] = env_steps_;
    write_manifest(manifest);
  }

  void save_checkpoint(const std::string& path) const {
    CheckpointWriter w;
    auto& meta = w.meta();
    meta["version"] = kEngineVersion;
    meta["config"] = config_to_json(cfg_);
    meta["task"] = cfg_.env_task;
    meta["iteration"] = iteration_;
    meta["env_steps"] = env_steps_;
    meta["lr"] = lr_;
    meta["generation"] = pop_.generation;
    meta["last_evolution_iteration"] = pop_.last_evolution_iteration;
    meta["elite_count"] = pop_.elite_count;
    meta["adam_step_count"] = adam_.step_count;

    for (const auto& blk : model_->params.blocks()) {
      w.add_block("param." + blk.name, model_->params.block(blk.name), blk.rows,
                  blk.cols);
    }
    w.add_block("adam.m", adam_.m, 1, adam_.m.size());
    w.add_block("adam.v", adam_.v, 1, adam_.v.size());
    w.add_block("norm.mean", normalizer_->mean(), 1, normalizer_->dim());
    w.add_block("norm.m2", normalizer_->m2(), 1, normalizer_->dim());
    const double norm_count[] = {normalizer_->count()};
    w.add_block("norm.count", norm_count, 1, 1);
    const double vnorm[] = {value_norm_.mean(), value_norm_.m2(), value_norm_.count()};
    w.add_block("norm.value", vnorm, 1, 3);

    // environment state
    const auto& envs = *envs_;
    w.add_block("env.states", envs.states().data, envs.states().rows,
                envs.states().cols);
    std::vector<double> counters;
    for (int c : envs.step_counts()) counters.push_back(static_cast<double>(c));
    w.add_block("env.step_counts", counters, 1, counters.size());
    w.add_block("env.episode_returns", envs.episode_returns(), 1, envs.num_envs());
    std::vector<std::uint64_t> env_rng;
    for (std::size_t i = 0; i < envs.num_envs(); ++i) {
      const auto st = envs.env_rng(i).state();
      env_rng.insert(env_rng.end(), st.begin(), st.end());
    }
    w.add_u64_block("rng.env", env_rng);

    std::vector<std::uint64_t> pol_rng;
    for (const auto& r : policy_rngs_) {
      const auto st = r.state();
      pol_rng.insert(pol_rng.end(), st.begin(), st.end());
    }
    w.add_u64_block("rng.policy", pol_rng);
    const auto add_stream = [&](const char* name, const RngStream& s) {
      const auto st = s.state();
      w.add_u64_block(name, std::span<const std::uint64_t>(st.data(), st.size()));
    };
    add_stream("rng.evolution", evolution_rng_);
    add_stream("rng.sampling", sampling_rng_);
    add_stream("rng.shuffle", shuffle_rng_);

    // fitness windows
    for (std::size_t k = 0; k < pop_.num_agents; ++k) {
      const auto& window = tracker_->window_values(k);
      std::vector<double> vals(window.begin(), window.end());
      w.add_block("fitness." + std::to_string(k + 1), vals, 1, vals.size());
    }
    std::vector<double> seen;
    for (std::size_t k = 0; k < pop_.num_agents; ++k) {
      seen.push_back(static_cast<double>(tracker_->episodes_seen(k)));
    }
    w.add_block("fitness.episodes_seen", seen, 1, seen.size());

    // replay buffers
    for (std::size_t k = 0; k < pop_.num_agents; ++k) {
      const auto& buf = buffers_[k];
      const std::size_t width = record_width();
      std::vector<double> data;
      data.reserve(buf.size() * width);
      for (std::size_t s = 0; s < buf.size(); ++s) {
        serialize_record(buf.slot(s), data);
      }
      w.add_block("buffer." + std::to_string(k + 1) + ".data", data, buf.size(), width);
      const double bmeta[] = {static_cast<double>(buf.capacity()),
                              static_cast<double>(buf.write_cursor()),
                              static_cast<double>(buf.size())};
      w.add_block("buffer." + std::to_string(k + 1) + ".meta", bmeta, 1, 3);
    }
    w.write(path);
  }

  static Trainer load_checkpoint(const std::string& path, TrainOptions opt = {}) {
    CheckpointReader r(path);
    TrainConfig cfg = config_from_json(r.meta().at("config"));
    Trainer t(cfg, std::move(opt));
    t.restore_from(r);
    return t;
  }

  /// Deterministic evaluation of the checkpointed policy. An explicit task
  /// must match the checkpoint's.
  static EvalSummary evaluate_checkpoint(const std::string& path,
                                         const std::string& task_override,
                                         int episodes, std::uint64_t seed,
                                         bool all_genes) {
    CheckpointReader r(path);
    const std::string ckpt_task = r.meta().at("task").get<std::string>();
    if (!task_override.empty() && task_override != ckpt_task) {
      throw std::runtime_error("task mismatch: checkpoint trained on " + ckpt_task +
                               ", requested " + task_override);
    }
    TrainConfig cfg = config_from_json(r.meta().at("config"));
    Trainer t(cfg, TrainOptions{});
    t.restore_from(r);
    EvalSummary summary;
    summary.task = ckpt_task;
    summary.episodes = episodes;
    const Task task = task_from_string(ckpt_task);
    const std::size_t genes = all_genes ? t.pop_.num_agents : 1;
    for (std::size_t k = 0; k < genes; ++k) {
      summary.per_gene.push_back(
          evaluate_gene(*t.model_, *t.normalizer_, task, k, episodes, seed));
    }
    summary.mean_return = summary.per_gene[0].mean_return;
    summary.std_return = summary.per_gene[0].std_return;
    summary.success_rate = summary.per_gene[0].success_rate;
    return summary;
  }

 private:
  struct OnPolicyBatch {
    Mat obs;
    std::vector<int> agents;
    Mat actions;
    std::vector<double> behavior_lp;
    std::vector<double> advantages;
    std::vector<double> targets;
  };

  struct OffPolicyBatch {
    Mat obs;
    Mat actions;
    std::vector<double> behavior_lp;
    std::vector<double> master_old_lp;
    std::vector<double> advantages;
    std::vector<double> targets;
  };

  struct UpdateStats {
    LossBreakdown last;
    std::size_t dropped = 0;
  };

  void fill_fitness_stats(const std::vector<std::optional<double>>& scores,
                          MetricsRow& row) const {
    std::vector<double> defined;
    for (const auto& s : scores) {
      if (s) defined.push_back(*s);
    }
    if (defined.empty()) return;
    row.fitness_min = *std::min_element(defined.begin(), defined.end());
    row.fitness_max = *std::max_element(defined.begin(), defined.end());
    row.fitness_median = median_of(defined);
  }

  void run_evolution(std::int64_t it,
                     const std::vector<std::optional<double>>& follower_scores) {
    for (std::size_t k = 0; k < pop_.num_agents; ++k) {
      pop_.genes[k] = model_->gene(k);
    }
    EvolveConfig ec;
    ec.elite_count = static_cast<std::size_t>(cfg_.pop_x_elites);
    ec.sigma_mut = cfg_.pop_sigma_mut;
    ec.crossover = crossover_from_string(cfg_.pop_crossover);
    EvolutionEvent event = evolve(pop_, follower_scores, ec, evolution_rng_);
    for (std::size_t k = 1; k < pop_.num_agents; ++k) {
      model_->set_gene(k, pop_.genes[k].phi);
    }
    for (const auto& child : event.children) {
      tracker_->clear_window(static_cast<std::size_t>(child.slot) - 1);
    }
    event.iteration = it;
    std::vector<double> scores;
    for (const auto& s : follower_scores) scores.push_back(*s);
    const TriggerValues tv = trigger_values(scores, cfg_.pop_gamma_trigger);
    event.trigger_lhs = tv.lhs;
    event.trigger_rhs = tv.rhs;
    evo_log_.append(event);
    pop_.last_evolution_iteration = it;
  }

  void collect_all(std::vector<CollectResult>& out, std::int64_t it) {
    const std::size_t num_agents = pop_.num_agents;
    const ValueTransform vt = ValueTransform::from(value_norm_);
    auto work = [&](std::size_t k) {
      out[k] = collect(*model_, k, *envs_, slices_[k],
                       static_cast<std::size_t>(cfg_.ppo_horizon), *normalizer_, vt,
                       policy_rngs_[k], buffers_[k], it);
    };
    const int threads = std::max(1, opt_.collect_threads);
    if (threads == 1 || num_agents == 1) {
      for (std::size_t k = 0; k < num_agents; ++k) work(k);
      return;
    }
    std::vector<std::thread> pool;
    const int used = static_cast<int>(
        std::min(static_cast<std::size_t>(threads), num_agents));
    for (int tidx = 0; tidx < used; ++tidx) {
      pool.emplace_back([&, tidx]() {
        for (std::size_t k = static_cast<std::size_t>(tidx); k < num_agents;
             k += static_cast<std::size_t>(used)) {
          work(k);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  OnPolicyBatch assemble_on_policy(const std::vector<CollectResult>& collected) {
    const std::size_t horizon = static_cast<std::size_t>(cfg_.ppo_horizon);
    const std::size_t per_agent = horizon * static_cast<std::size_t>(cfg_.envs_per_agent());
    const std::size_t total = per_agent * pop_.num_agents;
    OnPolicyBatch batch;
    batch.obs = Mat(total, task_obs_dim(task_));
    batch.actions = Mat(total, task_action_dim(task_));
    batch.agents.resize(total);
    batch.behavior_lp.resize(total);
    batch.advantages.resize(total);
    batch.targets.resize(total);
    std::size_t base = 0;
    for (std::size_t k = 0; k < pop_.num_agents; ++k) {
      const auto& col = collected[k];
      const std::size_t n = col.slots.size();
      std::vector<double> rewards(n), values(n);
      std::vector<std::uint8_t> dones(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& rec = buffers_[k].slot(col.slots[i]);
        rewards[i] = rec.reward;
        values[i] = rec.behavior_value;
        dones[i] = rec.done ? 1 : 0;
      }
      const AdvantageBatch adv =
          gae_advantages(rewards, dones, values, col.bootstrap_values, cfg_.ppo_gamma,
                         cfg_.ppo_lambda_gae);
      const std::vector<double> targets =
          n_step_targets(rewards, dones, values, col.bootstrap_values, cfg_.ppo_gamma);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& rec = buffers_[k].slot(col.slots[i]);
        std::copy(rec.obs.begin(), rec.obs.end(), batch.obs.row(base + i).begin());
        std::copy(rec.action.begin(), rec.action.end(),
                  batch.actions.row(base + i).begin());
        batch.agents[base + i] = static_cast<int>(k);
        batch.behavior_lp[base + i] = rec.behavior_log_prob;
        batch.advantages[base + i] = adv.advantages[i];
        batch.targets[base + i] = targets[i];
      }
      base += n;
    }
    normalize_advantages(batch.advantages);
    return batch;
  }

  OffPolicyBatch assemble_off_policy() {
    OffPolicyBatch batch;
    const std::size_t count = buffers_[0].size();  // |S_1|
    if (pop_.num_agents < 2 || count == 0) return batch;
    std::vector<const ReplayBuffer*> followers;
    for (std::size_t k = 1; k < pop_.num_agents; ++k) followers.push_back(&buffers_[k]);
    const OffPolicySample sample = sample_off_policy(followers, count, sampling_rng_);
    if (sample.with_replacement) with_replacement_count_ += 1;
    const std::size_t n = sample.refs.size();
    if (n == 0) return batch;
    batch.obs = Mat(n, task_obs_dim(task_));
    batch.actions = Mat(n, task_action_dim(task_));
    batch.behavior_lp.resize(n);
    Mat next_obs(n, task_obs_dim(task_));
    std::vector<double> rewards(n);
    std::vector<std::uint8_t> dones(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& ref = sample.refs[i];
      const auto& rec = followers[ref.buffer_index]->slot(ref.slot);
      std::copy(rec.obs.begin(), rec.obs.end(), batch.obs.row(i).begin());
      std::copy(rec.action.begin(), rec.action.end(), batch.actions.row(i).begin());
      std::copy(rec.next_obs.begin(), rec.next_obs.end(), next_obs.row(i).begin());
      batch.behavior_lp[i] = rec.behavior_log_prob;
      rewards[i] = rec.reward;
      dones[i] = rec.done ? 1 : 0;
    }
    // master-old quantities with the master gene, pre-update parameters
    std::vector<int> master_ids(n, 0);
    batch.master_old_lp =
        log_prob_and_entropy(*model_, master_ids, batch.obs, batch.actions).log_probs;
    const ValueTransform vt = ValueTransform::from(value_norm_);
    std::vector<double> v_s = value(*model_, std::size_t{0}, batch.obs);
    std::vector<double> v_next = value(*model_, std::size_t{0}, next_obs);
    for (double& v : v_s) v = vt.to_raw(v);
    for (double& v : v_next) v = vt.to_raw(v);
    batch.targets = one_step_targets(rewards, dones, v_next, cfg_.ppo_gamma);
    batch.advantages.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      batch.advantages[i] = batch.targets[i] - v_s[i];
    }
    normalize_advantages(batch.advantages);
    return batch;
  }

  UpdateStats run_update(const OnPolicyBatch& on, const OffPolicyBatch& off,
                         std::int64_t it) {
    const std::size_t n_on = on.obs.rows;
    const std::size_t n_off = off.obs.rows;
    const std::size_t mb_size = static_cast<std::size_t>(cfg_.ppo_minibatch_size);
    const std::size_t num_mb = n_on / mb_size;
    LossCoefs coefs;
    coefs.eps_clip = cfg_.ppo_eps_clip;
    coefs.lambda_off = cfg_.ppo_lambda_off;
    coefs.critic_coef = cfg_.ppo_critic_coef;
    coefs.entropy_coef = cfg_.ppo_entropy_coef;
    coefs.bounds_coef = cfg_.ppo_bounds_coef;

    std::vector<std::size_t> on_idx(n_on), off_idx(n_off);
    for (std::size_t i = 0; i < n_on; ++i) on_idx[i] = i;
    for (std::size_t i = 0; i < n_off; ++i) off_idx[i] = i;

    UpdateStats stats;
    std::vector<double> grad(model_->params.size());
    IterationTrace trace;
    const bool tracing = static_cast<bool>(opt_.observer);
    if (tracing) trace.iteration = it;

    for (std::int64_t epoch = 0; epoch < cfg_.ppo_mini_epochs; ++epoch) {
      shuffle_indices(on_idx);
      shuffle_indices(off_idx);
      std::size_t off_pos = 0;
      for (std::size_t mb = 0; mb < num_mb; ++mb) {
        const std::size_t off_take =
            n_off / num_mb + (mb < n_off % num_mb ? 1 : 0);
        MiniBatch view = gather_minibatch(on, off, on_idx, off_idx, mb * mb_size,
                                          mb_size, off_pos, off_take);
        off_pos += off_take;
        const bool last_mb =
            epoch == cfg_.ppo_mini_epochs - 1 && mb == num_mb - 1;
        if (tracing && last_mb) {
          trace.params_before = model_->params;
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        std::size_t dropped = 0;
        const LossBreakdown bd =
            compute_losses_and_grad(*model_, view, coefs, grad, &dropped);
        stats.dropped += dropped;
        adam_step(model_->params, grad, adam_, lr_, cfg_.opt_max_grad_norm);
        model_->clamp_log_std();
        stats.last = bd;
        if (tracing) {
          trace.minibatch_breakdowns.push_back(bd);
          if (last_mb) trace.last_minibatch = std::move(view);
        }
      }
    }
    if (tracing) {
      trace.off_batch_size = n_off;
      opt_.observer(trace);
    }
    return stats;
  }

  MiniBatch gather_minibatch(const OnPolicyBatch& on, const OffPolicyBatch& off,
                             const std::vector<std::size_t>& on_idx,
                             const std::vector<std::size_t>& off_idx,
                             std::size_t on_begin, std::size_t on_count,
                             std::size_t off_begin, std::size_t off_count) const {
    MiniBatch mb;
    mb.on_obs = Mat(on_count, on.obs.cols);
    mb.on_actions = Mat(on_count, on.actions.cols);
    mb.on_agents.resize(on_count);
    mb.on_behavior_lp.resize(on_count);
    mb.on_adv.resize(on_count);
    mb.on_targets.resize(on_count);
    for (std::size_t i = 0; i < on_count; ++i) {
      const std::size_t src = on_idx[on_begin + i];
      std::copy(on.obs.row(src).begin(), on.obs.row(src).end(),
                mb.on_obs.row(i).begin());
      std::copy(on.actions.row(src).begin(), on.actions.row(src).end(),
                mb.on_actions.row(i).begin());
      mb.on_agents[i] = on.agents[src];
      mb.on_behavior_lp[i] = on.behavior_lp[src];
      mb.on_adv[i] = on.advantages[src];
      mb.on_targets[i] = on.targets[src];
    }
    mb.off_obs = Mat(off_count, on.obs.cols);
    mb.off_actions = Mat(off_count, on.actions.cols);
    mb.off_behavior_lp.resize(off_count);
    mb.off_master_old_lp.resize(off_count);
    mb.off_adv.resize(off_count);
    mb.off_targets.resize(off_count);
    for (std::size_t i = 0; i < off_count; ++i) {
      const std::size_t src = off_idx[off_begin + i];
      std::copy(off.obs.row(src).begin(), off.obs.row(src).end(),
                mb.off_obs.row(i).begin());
      std::copy(off.actions.row(src).begin(), off.actions.row(src).end(),
                mb.off_actions.row(i).begin());
      mb.off_behavior_lp[i] = off.behavior_lp[src];
      mb.off_master_old_lp[i] = off.master_old_lp[src];
      mb.off_adv[i] = off.advantages[src];
      mb.off_targets[i] = off.targets[src];
    }
    return mb;
  }

  void shuffle_indices(std::vector<std::size_t>& idx) {
    for (std::size_t i = idx.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng_.range(i));
      std::swap(idx[i - 1], idx[j]);
    }
  }

  std::size_t record_width() const {
    const std::size_t obs = task_obs_dim(task_);
    const std::size_t act = task_action_dim(task_);
    return 3 * obs + act + 5;
  }

  void serialize_record(const TransitionRecord& rec, std::vector<double>& out) const {
    out.insert(out.end(), rec.raw_obs.begin(), rec.raw_obs.end());
    out.insert(out.end(), rec.obs.begin(), rec.obs.end());
    out.insert(out.end(), rec.next_obs.begin(), rec.next_obs.end());
    out.insert(out.end(), rec.action.begin(), rec.action.end());
    out.push_back(rec.behavior_log_prob);
    out.push_back(rec.behavior_value);
    out.push_back(rec.reward);
    out.push_back(rec.done ? 1.0 : 0.0);
    out.push_back(static_cast<double>(rec.iteration_collected));
  }

  TransitionRecord deserialize_record(std::span<const double> data, int agent_id) const {
    const std::size_t obs = task_obs_dim(task_);
    const std::size_t act = task_action_dim(task_);
    TransitionRecord rec;
    rec.agent_id = agent_id;
    std::size_t pos = 0;
    rec.raw_obs.assign(data.begin() + pos, data.begin() + pos + obs);
    pos += obs;
    rec.obs.assign(data.begin() + pos, data.begin() + pos + obs);
    pos += obs;
    rec.next_obs.assign(data.begin() + pos, data.begin() + pos + obs);
    pos += obs;
    rec.action.assign(data.begin() + pos, data.begin() + pos + act);
    pos += act;
    rec.behavior_log_prob = data[pos++];
    rec.behavior_value = data[pos++];
    rec.reward = data[pos++];
    rec.done = data[pos++] != 0.0;
    rec.iteration_collected = static_cast<std::int64_t>(data[pos++]);
    return rec;
  }

  void restore_from(const CheckpointReader& r) {
    const auto& meta = r.meta();
    iteration_ = meta.at("iteration").get<std::int64_t>();
    env_steps_ = meta.at("env_steps").get<std::int64_t>();
    lr_ = meta.at("lr").get<double>();
    pop_.generation = meta.at("generation").get<std::int64_t>();
    pop_.last_evolution_iteration =
        meta.at("last_evolution_iteration").get<std::int64_t>();
    pop_.elite_count = meta.at("elite_count").get<std::size_t>();
    adam_.step_count = meta.at("adam_step_count").get<std::int64_t>();

    for (const auto& blk : model_->params.blocks()) {
      const auto src = r.block("param." + blk.name);
      auto dst = model_->params.block(blk.name);
      std::copy(src.begin(), src.end(), dst.begin());
    }
    {
      const auto m = r.block("adam.m");
      const auto v = r.block("adam.v");
      adam_.m.assign(m.begin(), m.end());
      adam_.v.assign(v.begin(), v.end());
    }
    {
      const auto mean = r.block("norm.mean");
      const auto m2 = r.block("norm.m2");
      normalizer_->mutable_mean().assign(mean.begin(), mean.end());
      normalizer_->mutable_m2().assign(m2.begin(), m2.end());
      normalizer_->set_count(r.block("norm.count")[0]);
      const auto vnorm = r.block("norm.value");
      value_norm_.restore(vnorm[0], vnorm[1], vnorm[2]);
    }
    {
      const auto states = r.block("env.states");
      std::copy(states.begin(), states.end(), envs_->mutable_states().data.begin());
      const auto counts = r.block("env.step_counts");
      for (std::size_t i = 0; i < counts.size(); ++i) {
        envs_->mutable_step_counts()[i] = static_cast<int>(counts[i]);
      }
      const auto rets = r.block("env.episode_returns");
      std::copy(rets.begin(), rets.end(), envs_->mutable_episode_returns().begin());
      const auto words = r.u64_block("rng.env");
      for (std::size_t i = 0; i < envs_->num_envs(); ++i) {
        envs_->env_rng(i).set_state(
            {words[4 * i], words[4 * i + 1], words[4 * i + 2], words[4 * i + 3]});
      }
    }
    {
      const auto words = r.u64_block("rng.policy");
      for (std::size_t k = 0; k < policy_rngs_.size(); ++k) {
        policy_rngs_[k].set_state(
            {words[4 * k], words[4 * k + 1], words[4 * k + 2], words[4 * k + 3]});
      }
      const auto restore_stream = [&](const char* name, RngStream& s) {
        const auto ws = r.u64_block(name);
        s.set_state({ws[0], ws[1], ws[2], ws[3]});
      };
      restore_stream("rng.evolution", evolution_rng_);
      restore_stream("rng.sampling", sampling_rng_);
      restore_stream("rng.shuffle", shuffle_rng_);
    }
    {
      const auto seen = r.block("fitness.episodes_seen");
      for (std::size_t k = 0; k < pop_.num_agents; ++k) {
        const auto window = r.block("fitness." + std::to_string(k + 1));
        tracker_->restore_window(k, window, static_cast<std::int64_t>(seen[k]));
      }
    }
    for (std::size_t k = 0; k < pop_.num_agents; ++k) {
      const auto data = r.block("buffer." + std::to_string(k + 1) + ".data");
      const auto bmeta = r.block("buffer." + std::to_string(k + 1) + ".meta");
      const std::size_t width = record_width();
      const std::size_t count = static_cast<std::size_t>(bmeta[2]);
      buffers_[k].clear();
      for (std::size_t s = 0; s < count; ++s) {
        buffers_[k].push(deserialize_record(data.subspan(s * width, width),
                                            static_cast<int>(k) + 1));
      }
      buffers_[k].set_write_cursor(static_cast<std::size_t>(bmeta[1]));
    }
    for (std::size_t k = 0; k < pop_.num_agents; ++k) {
      pop_.genes[k] = model_->gene(k);
    }
  }

  void write_manifest(const nlohmann::json& manifest) const {
    std::ofstream out(run_dir_ + "/manifest.json", std::ios::trunc);
    out << manifest.dump(2) << '\n';
  }

  static std::string now_string() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
  }

  TrainConfig cfg_;
  TrainOptions opt_;
  Task task_ = Task::pendulum;
  std::optional<PolicyModel> model_;
  std::optional<EnvBatch> envs_;
  std::vector<EnvSlice> slices_;
  std::vector<ReplayBuffer> buffers_;
  std::optional<RunningNormalizer> normalizer_;
  ScalarRunningStats value_norm_;
  AdamState adam_;
  std::vector<RngStream> policy_rngs_;
  RngStream evolution_rng_;
  RngStream sampling_rng_;
  RngStream shuffle_rng_;
  std::optional<FitnessTracker> tracker_;
  PopulationState pop_;
  double lr_ = 1e-4;
  std::int64_t with_replacement_count_ = 0;
  std::int64_t iteration_ = 0;
  std::int64_t env_steps_ = 0;
  MetricsLog metrics_;
  EvolutionLog evo_log_;
  std::string run_dir_;
};

}  // namespace epo
