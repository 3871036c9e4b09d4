#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "epo/mat.hpp"

namespace epo {

struct SurrogateResult {
  double objective = 0.0;      // to be maximized
  double clip_fraction = 0.0;  // fraction of ratios outside the clip interval
  double approx_kl = 0.0;      // mean(behavior - new)
  std::size_t dropped = 0;     // off-policy records discarded as non-finite
};

/// The pessimistic branch of the clipped surrogate is unbounded: a record
/// with negative advantage whose ratio explodes mid-epoch contributes r*A
/// with arbitrarily large r, which can snowball a whole update. The standard
/// dual-clip bound floors that branch at kDualClip * A.
inline constexpr double kDualClip = 3.0;

/// Clipped on-policy surrogate: mean of min(r*A, clip(r, 1-eps, 1+eps)*A),
/// floored at kDualClip*A for negative advantages, with
/// r = exp(new - behavior). When `dfactor` is non-empty it receives
/// d(objective)/d(new_log_prob) per record, mean factor included.
inline SurrogateResult on_policy_surrogate(std::span<const double> new_log_probs,
                                           std::span<const double> behavior_log_probs,
                                           std::span<const double> advantages,
                                           double eps_clip,
                                           std::span<double> dfactor = {}) {
  const std::size_t n = new_log_probs.size();
  if (behavior_log_probs.size() != n || advantages.size() != n) {
    throw std::invalid_argument("on_policy_surrogate: length mismatch");
  }
  if (!(eps_clip > 0.0 && eps_clip < 1.0)) {
    throw std::invalid_argument("on_policy_surrogate: eps_clip must be in (0, 1)");
  }
  if (!dfactor.empty() && dfactor.size() != n) {
    throw std::invalid_argument("on_policy_surrogate: dfactor length mismatch");
  }
  SurrogateResult res;
  if (n == 0) return res;
  const double lo = 1.0 - eps_clip;
  const double hi = 1.0 + eps_clip;
  const double inv_n = 1.0 / static_cast<double>(n);
  double acc = 0.0, kl = 0.0;
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = std::exp(new_log_probs[i] - behavior_log_probs[i]);
    if (!std::isfinite(r)) {
      throw std::runtime_error("on_policy_surrogate: non-finite ratio at index " +
                               std::to_string(i));
    }
    const double surr1 = r * advantages[i];
    const double surr2 = clamp(r, lo, hi) * advantages[i];
    double obj = surr1 <= surr2 ? surr1 : surr2;
    double grad_factor = (surr1 <= surr2) ? surr1 : 0.0;  // clipped branch is flat
    if (advantages[i] < 0.0 && obj < kDualClip * advantages[i]) {
      obj = kDualClip * advantages[i];
      grad_factor = 0.0;
    }
    acc += obj;
    kl += behavior_log_probs[i] - new_log_probs[i];
    if (r < lo || r > hi) ++clipped;
    if (!dfactor.empty()) dfactor[i] = grad_factor * inv_n;
  }
  res.objective = acc * inv_n;
  res.approx_kl = kl * inv_n;
  res.clip_fraction = static_cast<double>(clipped) * inv_n;
  return res;
}

/// A follower transition stops being usable for the master once the master
/// assigns it far more density than the collector did: the record's gradient
/// weight r*A dwarfs everything else in the minibatch. Such records are
/// dropped rather than clamped (clamping would silently bias the estimator).
inline constexpr double kMaxPlausibleRatio = 10.0;

/// Importance-corrected off-policy surrogate for the master policy:
/// mean of min(r*A, clip(r, mu(1-eps), mu(1+eps))*A) with
/// r = master/behavior and mu = master_old/behavior. Records with a
/// non-finite or implausibly large r or mu are dropped (counted), not
/// clamped.
inline SurrogateResult off_policy_surrogate(std::span<const double> master_log_probs,
                                            std::span<const double> master_old_log_probs,
                                            std::span<const double> behavior_log_probs,
                                            std::span<const double> advantages,
                                            double eps_clip,
                                            std::span<double> dfactor = {}) {
  const std::size_t n = master_log_probs.size();
  if (master_old_log_probs.size() != n || behavior_log_probs.size() != n ||
      advantages.size() != n) {
    throw std::invalid_argument("off_policy_surrogate: length mismatch");
  }
  if (!(eps_clip > 0.0 && eps_clip < 1.0)) {
    throw std::invalid_argument("off_policy_surrogate: eps_clip must be in (0, 1)");
  }
  if (!dfactor.empty() && dfactor.size() != n) {
    throw std::invalid_argument("off_policy_surrogate: dfactor length mismatch");
  }
  SurrogateResult res;
  if (n == 0) return res;
  double acc = 0.0;
  std::size_t clipped = 0, valid = 0;
  std::vector<double> obj_grad;
  if (!dfactor.empty()) obj_grad.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = std::exp(master_log_probs[i] - behavior_log_probs[i]);
    const double mu = std::exp(master_old_log_probs[i] - behavior_log_probs[i]);
    if (!std::isfinite(r) || !std::isfinite(mu) || r > kMaxPlausibleRatio ||
        mu > kMaxPlausibleRatio) {
      ++res.dropped;
      continue;
    }
    const double lo = mu * (1.0 - eps_clip);
    const double hi = mu * (1.0 + eps_clip);
    const double surr1 = r * advantages[i];
    const double surr2 = clamp(r, lo, hi) * advantages[i];
    acc += surr1 <= surr2 ? surr1 : surr2;
    if (r < lo || r > hi) ++clipped;
    ++valid;
    if (!dfactor.empty()) obj_grad[i] = (surr1 <= surr2) ? surr1 : 0.0;
  }
  if (valid == 0) return res;
  const double inv_valid = 1.0 / static_cast<double>(valid);
  res.objective = acc * inv_valid;
  res.clip_fraction = static_cast<double>(clipped) * inv_valid;
  if (!dfactor.empty()) {
    for (std::size_t i = 0; i < n; ++i) dfactor[i] = obj_grad[i] * inv_valid;
  }
  return res;
}

/// Mean squared error against fixed targets. When `dvalues` is non-empty it
/// receives d(loss)/d(value) per record.
inline double critic_loss(std::span<const double> values,
                          std::span<const double> targets,
                          std::span<double> dvalues = {}) {
  const std::size_t n = values.size();
  if (targets.size() != n) throw std::invalid_argument("critic_loss: length mismatch");
  if (!dvalues.empty() && dvalues.size() != n) {
    throw std::invalid_argument("critic_loss: dvalues length mismatch");
  }
  if (n == 0) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = values[i] - targets[i];
    acc += diff * diff;
    if (!dvalues.empty()) dvalues[i] = 2.0 * diff * inv_n;
  }
  return acc * inv_n;
}

inline double critic_loss_on(std::span<const double> values,
                             std::span<const double> targets,
                             std::span<double> dvalues = {}) {
  return critic_loss(values, targets, dvalues);
}

inline double critic_loss_off(std::span<const double> values,
                              std::span<const double> targets,
                              std::span<double> dvalues = {}) {
  return critic_loss(values, targets, dvalues);
}

/// All objective terms of one update, plus the scalar actually minimized:
/// total = -(on + lambda*off) + c_critic*(critic_on + lambda*critic_off)
///         - c_entropy*entropy + bounds.
struct LossBreakdown {
  double on_policy_actor = 0.0;
  double off_policy_actor = 0.0;
  double critic_on = 0.0;
  double critic_off = 0.0;
  double entropy = 0.0;
  double bounds = 0.0;
  double total = 0.0;
  double clip_fraction_on = 0.0;
  double clip_fraction_off = 0.0;
  double approx_kl = 0.0;
};

struct LossParts {
  double on_policy_actor = 0.0;
  double off_policy_actor = 0.0;
  double critic_on = 0.0;
  double critic_off = 0.0;
  double entropy = 0.0;
  double bounds = 0.0;
  double clip_fraction_on = 0.0;
  double clip_fraction_off = 0.0;
  double approx_kl = 0.0;
};

inline LossBreakdown combine(const LossParts& parts, double lambda_off,
                             double critic_coef, double entropy_coef) {
  for (double p : {parts.on_policy_actor, parts.off_policy_actor, parts.critic_on,
                   parts.critic_off, parts.entropy, parts.bounds}) {
    if (!std::isfinite(p)) throw std::runtime_error("combine: non-finite loss part");
  }
  LossBreakdown b;
  b.on_policy_actor = parts.on_policy_actor;
  b.off_policy_actor = parts.off_policy_actor;
  b.critic_on = parts.critic_on;
  b.critic_off = parts.critic_off;
  b.entropy = parts.entropy;
  b.bounds = parts.bounds;
  b.clip_fraction_on = parts.clip_fraction_on;
  b.clip_fraction_off = parts.clip_fraction_off;
  b.approx_kl = parts.approx_kl;
  b.total = -(parts.on_policy_actor + lambda_off * parts.off_policy_actor) +
            critic_coef * (parts.critic_on + lambda_off * parts.critic_off) -
            entropy_coef * parts.entropy + parts.bounds;
  return b;
}

}  // namespace epo
