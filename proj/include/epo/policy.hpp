#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "epo/mat.hpp"
#include "epo/mlp.hpp"
#include "epo/params.hpp"
#include "epo/rng.hpp"

namespace epo {

/// Per-agent latent embedding. Agent ids are 1-based; id 1 is the master.
struct LatentGene {
  int agent_id = 0;
  std::vector<double> phi;
};

struct PolicySizes {
  std::size_t obs_dim = 0;
  std::size_t action_dim = 0;
  std::size_t n_lat = 0;
  std::size_t num_agents = 0;
};

inline std::string phi_block_name(std::size_t agent_idx) {
  return "phi." + std::to_string(agent_idx + 1);
}

/// The shared actor-critic. All K agents use the same trunk weights; behavior
/// differences live entirely in the latent gene concatenated to the
/// observation. Every trainable block (actor, critic, log_std, each gene)
/// sits in one flat ParamVector so the optimizer, the gradient buffer and the
/// checkpoint address the same layout.
class PolicyModel {
 public:
  static constexpr double kLogStdMin = -5.0;
  static constexpr double kLogStdMax = 2.0;
  static constexpr double kLogStdInit = 0.0;

  PolicyModel(PolicySizes sizes, std::vector<std::size_t> hidden_dims,
              Activation activation, RngStream& rng)
      : sizes_(sizes) {
    if (sizes_.obs_dim == 0 || sizes_.action_dim == 0 || sizes_.num_agents == 0) {
      throw std::invalid_argument("PolicyModel: zero dimension");
    }
    const std::size_t in = sizes_.obs_dim + sizes_.n_lat;
    actor_spec_ = {in, hidden_dims, sizes_.action_dim, activation};
    critic_spec_ = {in, hidden_dims, 1, activation};
    add_mlp_blocks(params, actor_spec_, "actor.");
    add_mlp_blocks(params, critic_spec_, "critic.");
    params.add("log_std", 1, sizes_.action_dim);
    for (std::size_t k = 0; k < sizes_.num_agents; ++k) {
      params.add(phi_block_name(k), 1, sizes_.n_lat);
    }
    mlp_init(params, actor_spec_, "actor.", rng, 0.01);
    mlp_init(params, critic_spec_, "critic.", rng);
    for (double& x : params.block("log_std")) x = kLogStdInit;
    for (std::size_t k = 0; k < sizes_.num_agents; ++k) {
      for (double& x : params.block(phi_block_name(k))) x = rng.normal();
    }
  }

  const PolicySizes& sizes() const { return sizes_; }
  const MlpSpec& actor_spec() const { return actor_spec_; }
  const MlpSpec& critic_spec() const { return critic_spec_; }

  std::span<double> log_std() { return params.block("log_std"); }
  std::span<const double> log_std() const { return params.block("log_std"); }
  std::span<double> phi(std::size_t agent_idx) { return params.block(phi_block_name(agent_idx)); }
  std::span<const double> phi(std::size_t agent_idx) const {
    return params.block(phi_block_name(agent_idx));
  }

  LatentGene gene(std::size_t agent_idx) const {
    auto p = phi(agent_idx);
    return {static_cast<int>(agent_idx) + 1, {p.begin(), p.end()}};
  }
  void set_gene(std::size_t agent_idx, std::span<const double> g) {
    auto p = phi(agent_idx);
    if (g.size() != p.size()) throw std::invalid_argument("set_gene: length mismatch");
    std::copy(g.begin(), g.end(), p.begin());
  }

  void clamp_log_std() {
    for (double& x : log_std()) x = clamp(x, kLogStdMin, kLogStdMax);
  }

  ParamVector params;

 private:
  PolicySizes sizes_;
  MlpSpec actor_spec_;
  MlpSpec critic_spec_;
};

/// [obs || phi] rows for a single agent.
inline Mat build_policy_input(const PolicyModel& model, std::size_t agent_idx,
                              const Mat& obs) {
  const auto& s = model.sizes();
  if (obs.cols != s.obs_dim) {
    throw std::invalid_argument("build_policy_input: obs has " +
                                std::to_string(obs.cols) + " cols, expected " +
                                std::to_string(s.obs_dim));
  }
  auto phi = model.phi(agent_idx);
  Mat input(obs.rows, s.obs_dim + s.n_lat);
  for (std::size_t r = 0; r < obs.rows; ++r) {
    auto in = input.row(r);
    auto o = obs.row(r);
    std::copy(o.begin(), o.end(), in.begin());
    std::copy(phi.begin(), phi.end(), in.begin() + s.obs_dim);
  }
  return input;
}

/// [obs || phi] rows where each row belongs to its own agent.
inline Mat build_policy_input(const PolicyModel& model,
                              std::span<const int> agent_idx, const Mat& obs) {
  const auto& s = model.sizes();
  if (obs.cols != s.obs_dim) {
    throw std::invalid_argument("build_policy_input: obs width mismatch");
  }
  if (agent_idx.size() != obs.rows) {
    throw std::invalid_argument("build_policy_input: one agent index per row required");
  }
  Mat input(obs.rows, s.obs_dim + s.n_lat);
  for (std::size_t r = 0; r < obs.rows; ++r) {
    auto in = input.row(r);
    auto o = obs.row(r);
    std::copy(o.begin(), o.end(), in.begin());
    auto phi = model.phi(static_cast<std::size_t>(agent_idx[r]));
    std::copy(phi.begin(), phi.end(), in.begin() + s.obs_dim);
  }
  return input;
}

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

/// Diagonal-Gaussian log-density of `action` under (mean, log_std).
inline double gaussian_log_prob(std::span<const double> mean,
                                std::span<const double> log_std,
                                std::span<const double> action) {
  double lp = -0.5 * kLogTwoPi * static_cast<double>(mean.size());
  for (std::size_t d = 0; d < mean.size(); ++d) {
    const double z = (action[d] - mean[d]) * std::exp(-log_std[d]);
    lp -= 0.5 * z * z + log_std[d];
  }
  return lp;
}

/// Batch-mean differential entropy of the diagonal Gaussian; depends only on
/// log_std, so it is the same for every row.
inline double gaussian_entropy(std::span<const double> log_std) {
  double h = 0.0;
  for (double ls : log_std) h += ls + 0.5 * (1.0 + kLogTwoPi);
  return h;
}

struct ActBatch {
  Mat mean;
  Mat sample;
  std::vector<double> log_prob;
};

/// Samples one action per observation row for the given agent. Draw order is
/// row-major (row, then action dim), so results are reproducible for a given
/// stream state. With `deterministic` the mean is returned as the sample.
inline ActBatch act(const PolicyModel& model, std::size_t agent_idx, const Mat& obs,
                    RngStream& rng, bool deterministic = false) {
  if (!all_finite(obs)) throw std::invalid_argument("act: non-finite observation");
  const Mat input = build_policy_input(model, agent_idx, obs);
  const auto layers = mlp_layers(model.params, model.actor_spec(), "actor.");
  ActBatch out;
  out.mean = mlp_forward(model.actor_spec(), layers, input);
  out.sample = out.mean;
  const auto log_std = model.log_std();
  if (!deterministic) {
    for (std::size_t r = 0; r < out.sample.rows; ++r) {
      auto row = out.sample.row(r);
      for (std::size_t d = 0; d < row.size(); ++d) {
        row[d] += std::exp(log_std[d]) * rng.normal();
      }
    }
  }
  out.log_prob.resize(obs.rows);
  for (std::size_t r = 0; r < obs.rows; ++r) {
    out.log_prob[r] = gaussian_log_prob(out.mean.row(r), log_std, out.sample.row(r));
  }
  return out;
}

struct LogProbEntropy {
  std::vector<double> log_probs;
  double entropy = 0.0;
};

/// Current-policy log-densities of stored actions plus the batch entropy.
inline LogProbEntropy log_prob_and_entropy(const PolicyModel& model,
                                           std::span<const int> agent_idx,
                                           const Mat& obs, const Mat& actions) {
  if (actions.rows != obs.rows) {
    throw std::invalid_argument("log_prob_and_entropy: row count mismatch");
  }
  if (actions.cols != model.sizes().action_dim) {
    throw std::invalid_argument("log_prob_and_entropy: action width mismatch");
  }
  const Mat input = build_policy_input(model, agent_idx, obs);
  const auto layers = mlp_layers(model.params, model.actor_spec(), "actor.");
  const Mat means = mlp_forward(model.actor_spec(), layers, input);
  LogProbEntropy out;
  out.log_probs.resize(obs.rows);
  const auto log_std = model.log_std();
  for (std::size_t r = 0; r < obs.rows; ++r) {
    out.log_probs[r] = gaussian_log_prob(means.row(r), log_std, actions.row(r));
  }
  out.entropy = gaussian_entropy(log_std);
  return out;
}

/// Critic values, one per row, conditioned on the rows' genes.
inline std::vector<double> value(const PolicyModel& model,
                                 std::span<const int> agent_idx, const Mat& obs) {
  const Mat input = build_policy_input(model, agent_idx, obs);
  const auto layers = mlp_layers(model.params, model.critic_spec(), "critic.");
  const Mat v = mlp_forward(model.critic_spec(), layers, input);
  std::vector<double> out(v.rows);
  for (std::size_t r = 0; r < v.rows; ++r) out[r] = v.at(r, 0);
  return out;
}

inline std::vector<double> value(const PolicyModel& model, std::size_t agent_idx,
                                 const Mat& obs) {
  std::vector<int> ids(obs.rows, static_cast<int>(agent_idx));
  return value(model, std::span<const int>(ids), obs);
}

/// Penalty discouraging action means from saturating past `limit`:
/// coef * mean over batch and dims of max(|mean| - limit, 0)^2.
inline double bounds_loss(const Mat& action_means, double limit, double coef) {
  if (limit <= 0.0) throw std::invalid_argument("bounds_loss: limit must be positive");
  if (action_means.size() == 0) return 0.0;
  double acc = 0.0;
  for (double m : action_means.data) {
    const double over = std::abs(m) - limit;
    if (over > 0.0) acc += over * over;
  }
  return coef * acc / static_cast<double>(action_means.size());
}

/// Accumulates scale * d(bounds_loss)/d(mean) into `dmeans`.
inline void bounds_loss_grad(const Mat& action_means, double limit, double coef,
                             double scale, Mat& dmeans) {
  if (dmeans.rows != action_means.rows || dmeans.cols != action_means.cols) {
    throw std::invalid_argument("bounds_loss_grad: shape mismatch");
  }
  if (action_means.size() == 0) return;
  const double factor = scale * coef * 2.0 / static_cast<double>(action_means.size());
  for (std::size_t i = 0; i < action_means.data.size(); ++i) {
    const double m = action_means.data[i];
    const double over = std::abs(m) - limit;
    if (over > 0.0) dmeans.data[i] += factor * over * (m > 0.0 ? 1.0 : -1.0);
  }
}

}  // namespace epo
