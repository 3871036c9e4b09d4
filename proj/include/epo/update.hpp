#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "epo/losses.hpp"
#include "epo/mat.hpp"
#include "epo/mlp.hpp"
#include "epo/policy.hpp"

namespace epo {

struct LossCoefs {
  double eps_clip = 0.1;
  double lambda_off = 1.0;
  double critic_coef = 4.0;
  double entropy_coef = 0.0;
  double bounds_coef = 1e-5;
  double bounds_limit = 1.1;
};

/// One minibatch of update data. On-policy rows may mix agents (one agent
/// index per row); off-policy rows always belong to the master and may be
/// absent.
struct MiniBatch {
  Mat on_obs;
  std::vector<int> on_agents;
  Mat on_actions;
  std::vector<double> on_behavior_lp;
  std::vector<double> on_adv;
  std::vector<double> on_targets;

  Mat off_obs;
  Mat off_actions;
  std::vector<double> off_behavior_lp;
  std::vector<double> off_master_old_lp;
  std::vector<double> off_adv;
  std::vector<double> off_targets;
};

/// Evaluates the full hybrid objective on one minibatch and, when `grad` is
/// non-empty, accumulates d(total)/d(params) into it (layout of
/// model.params). The off-policy terms use the master gene; gradient flows
/// into the shared trunks, log_std and each row's latent gene.
inline LossBreakdown compute_losses_and_grad(const PolicyModel& model,
                                             const MiniBatch& mb,
                                             const LossCoefs& co,
                                             std::span<double> grad = {},
                                             std::size_t* off_dropped = nullptr) {
  if (!grad.empty() && grad.size() != model.params.size()) {
    throw std::invalid_argument("compute_losses_and_grad: grad buffer size");
  }
  const auto& sizes = model.sizes();
  const std::size_t n_on = mb.on_obs.rows;
  const std::size_t n_off = mb.off_obs.rows;
  const bool want_grad = !grad.empty();
  const auto log_std = model.log_std();
  const std::size_t action_dim = sizes.action_dim;

  const auto actor_layers = mlp_layers(model.params, model.actor_spec(), "actor.");
  const auto critic_layers = mlp_layers(model.params, model.critic_spec(), "critic.");

  // --- forward, on-policy rows ---
  const Mat on_in = build_policy_input(model, mb.on_agents, mb.on_obs);
  MlpCache on_actor_cache, on_critic_cache;
  const Mat on_means = mlp_forward(model.actor_spec(), actor_layers, on_in,
                                   want_grad ? &on_actor_cache : nullptr);
  std::vector<double> on_new_lp(n_on);
  for (std::size_t i = 0; i < n_on; ++i) {
    on_new_lp[i] = gaussian_log_prob(on_means.row(i), log_std, mb.on_actions.row(i));
  }
  std::vector<double> on_dfac(want_grad ? n_on : 0);
  const SurrogateResult on_res =
      on_policy_surrogate(on_new_lp, mb.on_behavior_lp, mb.on_adv, co.eps_clip,
                          want_grad ? std::span<double>(on_dfac) : std::span<double>{});

  const Mat v_on_mat = mlp_forward(model.critic_spec(), critic_layers, on_in,
                                   want_grad ? &on_critic_cache : nullptr);
  std::vector<double> v_on(n_on);
  for (std::size_t i = 0; i < n_on; ++i) v_on[i] = v_on_mat.at(i, 0);
  std::vector<double> dv_on(want_grad ? n_on : 0);
  const double c_on =
      critic_loss_on(v_on, mb.on_targets,
                     want_grad ? std::span<double>(dv_on) : std::span<double>{});

  const double entropy = gaussian_entropy(log_std);
  const double bounds = bounds_loss(on_means, co.bounds_limit, co.bounds_coef);

  // --- forward, off-policy rows (master gene) ---
  std::vector<int> off_agents(n_off, 0);
  Mat off_in, off_means, v_off_mat;
  MlpCache off_actor_cache, off_critic_cache;
  std::vector<double> off_new_lp(n_off), v_off(n_off);
  std::vector<double> off_dfac(want_grad ? n_off : 0), dv_off(want_grad ? n_off : 0);
  SurrogateResult off_res;
  double c_off = 0.0;
  if (n_off > 0) {
    off_in = build_policy_input(model, off_agents, mb.off_obs);
    off_means = mlp_forward(model.actor_spec(), actor_layers, off_in,
                            want_grad ? &off_actor_cache : nullptr);
    for (std::size_t i = 0; i < n_off; ++i) {
      off_new_lp[i] =
          gaussian_log_prob(off_means.row(i), log_std, mb.off_actions.row(i));
    }
    off_res = off_policy_surrogate(
        off_new_lp, mb.off_master_old_lp, mb.off_behavior_lp, mb.off_adv, co.eps_clip,
        want_grad ? std::span<double>(off_dfac) : std::span<double>{});
    v_off_mat = mlp_forward(model.critic_spec(), critic_layers, off_in,
                            want_grad ? &off_critic_cache : nullptr);
    for (std::size_t i = 0; i < n_off; ++i) v_off[i] = v_off_mat.at(i, 0);
    c_off = critic_loss_off(v_off, mb.off_targets,
                            want_grad ? std::span<double>(dv_off) : std::span<double>{});
  }
  if (off_dropped) *off_dropped = off_res.dropped;

  LossParts parts;
  parts.on_policy_actor = on_res.objective;
  parts.off_policy_actor = off_res.objective;
  parts.critic_on = c_on;
  parts.critic_off = c_off;
  parts.entropy = entropy;
  parts.bounds = bounds;
  parts.clip_fraction_on = on_res.clip_fraction;
  parts.clip_fraction_off = off_res.clip_fraction;
  parts.approx_kl = on_res.approx_kl;
  const LossBreakdown breakdown =
      combine(parts, co.lambda_off, co.critic_coef, co.entropy_coef);
  if (!want_grad) return breakdown;

  // --- backward ---
  const std::size_t obs_dim = sizes.obs_dim;
  const std::size_t n_lat = sizes.n_lat;
  std::vector<double> d_log_std(action_dim, 0.0);

  auto add_phi_grads = [&](const Mat& d_input, std::span<const int> agents) {
    for (std::size_t r = 0; r < d_input.rows; ++r) {
      auto row = d_input.row(r);
      const auto& blk = model.params.info(phi_block_name(
          static_cast<std::size_t>(agents[r])));
      double* g = grad.data() + blk.offset;
      for (std::size_t d = 0; d < n_lat; ++d) g[d] += row[obs_dim + d];
    }
  };

  auto actor_grads = mlp_layer_grads(model.params, model.actor_spec(), "actor.", grad);
  auto critic_grads =
      mlp_layer_grads(model.params, model.critic_spec(), "critic.", grad);

  // Actor, on-policy: total carries -(on objective); dfactor already holds
  // d(objective)/d(new_lp) with the batch mean folded in.
  {
    Mat d_means(n_on, action_dim, 0.0);
    for (std::size_t i = 0; i < n_on; ++i) {
      const double f = -on_dfac[i];
      auto mean = on_means.row(i);
      auto action = mb.on_actions.row(i);
      auto drow = d_means.row(i);
      for (std::size_t d = 0; d < action_dim; ++d) {
        const double inv_sigma = std::exp(-log_std[d]);
        const double z = (action[d] - mean[d]) * inv_sigma;
        drow[d] += f * z * inv_sigma;          // dlp/dmean = (a-m)/sigma^2
        d_log_std[d] += f * (z * z - 1.0);     // dlp/dlog_std = z^2 - 1
      }
    }
    bounds_loss_grad(on_means, co.bounds_limit, co.bounds_coef, 1.0, d_means);
    const Mat d_in =
        mlp_backward(model.actor_spec(), actor_layers, on_actor_cache, d_means,
                     actor_grads);
    add_phi_grads(d_in, mb.on_agents);
  }

  // Critic, on-policy: total carries +critic_coef * critic_on.
  {
    Mat d_v(n_on, 1, 0.0);
    for (std::size_t i = 0; i < n_on; ++i) d_v.at(i, 0) = co.critic_coef * dv_on[i];
    const Mat d_in = mlp_backward(model.critic_spec(), critic_layers, on_critic_cache,
                                  d_v, critic_grads);
    add_phi_grads(d_in, mb.on_agents);
  }

  if (n_off > 0) {
    // Actor, off-policy: total carries -(lambda * off objective).
    Mat d_means(n_off, action_dim, 0.0);
    for (std::size_t i = 0; i < n_off; ++i) {
      const double f = -co.lambda_off * off_dfac[i];
      auto mean = off_means.row(i);
      auto action = mb.off_actions.row(i);
      auto drow = d_means.row(i);
      for (std::size_t d = 0; d < action_dim; ++d) {
        const double inv_sigma = std::exp(-log_std[d]);
        const double z = (action[d] - mean[d]) * inv_sigma;
        drow[d] += f * z * inv_sigma;
        d_log_std[d] += f * (z * z - 1.0);
      }
    }
    const Mat d_in = mlp_backward(model.actor_spec(), actor_layers, off_actor_cache,
                                  d_means, actor_grads);
    add_phi_grads(d_in, off_agents);

    Mat d_v(n_off, 1, 0.0);
    for (std::size_t i = 0; i < n_off; ++i) {
      d_v.at(i, 0) = co.critic_coef * co.lambda_off * dv_off[i];
    }
    const Mat d_in_c = mlp_backward(model.critic_spec(), critic_layers,
                                    off_critic_cache, d_v, critic_grads);
    add_phi_grads(d_in_c, off_agents);
  }

  // Entropy bonus: total carries -entropy_coef * entropy, d(entropy)/dls = 1.
  {
    const auto& blk = model.params.info("log_std");
    double* g = grad.data() + blk.offset;
    for (std::size_t d = 0; d < action_dim; ++d) {
      g[d] += d_log_std[d] - co.entropy_coef;
    }
  }
  return breakdown;
}

}  // namespace epo
