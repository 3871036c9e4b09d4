#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "epo/policy.hpp"
#include "epo/rng.hpp"

namespace epo {

/// Sliding-window episode-return statistics per agent. A score exists only
/// once an agent has completed at least `window_min` episodes; undefined
/// scores block the evolution trigger.
class FitnessTracker {
 public:
  static constexpr std::size_t kDefaultWindow = 10;
  static constexpr std::size_t kDefaultWindowMin = 5;

  FitnessTracker(std::size_t num_agents, std::size_t window = kDefaultWindow,
                 std::size_t window_min = kDefaultWindowMin)
      : window_(window), window_min_(window_min), windows_(num_agents),
        episodes_seen_(num_agents, 0) {}

  void add_episode(std::size_t agent_idx, double episode_return) {
    auto& w = windows_[agent_idx];
    w.push_back(episode_return);
    if (w.size() > window_) w.pop_front();
    episodes_seen_[agent_idx] += 1;
  }

  /// Mean return over the agent's last `window` completed episodes; absent
  /// until `window_min` episodes have completed.
  std::optional<double> score(std::size_t agent_idx) const {
    const auto& w = windows_[agent_idx];
    if (w.size() < window_min_) return std::nullopt;
    double acc = 0.0;
    for (double r : w) acc += r;
    return acc / static_cast<double>(w.size());
  }

  void clear_window(std::size_t agent_idx) { windows_[agent_idx].clear(); }

  std::int64_t episodes_seen(std::size_t agent_idx) const {
    return episodes_seen_[agent_idx];
  }
  std::size_t window() const { return window_; }
  std::size_t window_min() const { return window_min_; }
  const std::deque<double>& window_values(std::size_t agent_idx) const {
    return windows_[agent_idx];
  }
  void restore_window(std::size_t agent_idx, std::span<const double> values,
                      std::int64_t seen) {
    windows_[agent_idx].assign(values.begin(), values.end());
    episodes_seen_[agent_idx] = seen;
  }

 private:
  std::size_t window_;
  std::size_t window_min_;
  std::vector<std::deque<double>> windows_;
  std::vector<std::int64_t> episodes_seen_;
};

enum class TriggerMode { fitness_gap, fixed_interval };

inline TriggerMode trigger_mode_from_string(const std::string& s) {
  if (s == "fitness_gap") return TriggerMode::fitness_gap;
  if (s == "fixed_interval") return TriggerMode::fixed_interval;
  throw std::invalid_argument("unknown trigger_mode: " + s);
}

enum class CrossoverStrategy { average, uniform, fitness_weighted };

inline CrossoverStrategy crossover_from_string(const std::string& s) {
  if (s == "average") return CrossoverStrategy::average;
  if (s == "uniform") return CrossoverStrategy::uniform;
  if (s == "fitness_weighted") return CrossoverStrategy::fitness_weighted;
  throw std::invalid_argument("unknown crossover: " + s);
}

struct TriggerValues {
  double lhs = 0.0;  // max - min fitness gap
  double rhs = 0.0;  // gamma_trigger * |median| (or the degenerate-median guard)
};

/// Even counts use the mean of the two middle values.
inline double median_of(std::vector<double> xs) {
  if (xs.empty()) throw std::invalid_argument("median_of: empty");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

inline TriggerValues trigger_values(std::span<const double> scores,
                                    double gamma_trigger) {
  if (scores.empty()) return {};
  double lo = scores[0], hi = scores[0];
  for (double s : scores) {
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  const double med = median_of({scores.begin(), scores.end()});
  TriggerValues tv;
  tv.lhs = hi - lo;
  // Degenerate-median guard: near-zero medians make the paper's inequality
  // trivially true; fall back to the max magnitude as the scale.
  if (std::abs(med) < 1e-6) {
    tv.rhs = gamma_trigger * (std::abs(hi) + 1e-6);
  } else {
    tv.rhs = gamma_trigger * std::abs(med);
  }
  return tv;
}

/// Evolution trigger. All follower scores must be defined; fitness_gap mode
/// additionally requires the fitness spread to exceed the guarded median
/// fraction. Both modes honor the iteration cooldown.
inline bool should_evolve(std::span<const std::optional<double>> follower_scores,
                          double gamma_trigger, TriggerMode mode,
                          std::int64_t iterations_since_last, std::int64_t cooldown) {
  if (follower_scores.empty()) return false;
  std::vector<double> scores;
  scores.reserve(follower_scores.size());
  for (const auto& s : follower_scores) {
    if (!s.has_value()) return false;
    scores.push_back(*s);
  }
  if (iterations_since_last < cooldown) return false;
  if (mode == TriggerMode::fixed_interval) return true;
  const TriggerValues tv = trigger_values(scores, gamma_trigger);
  return tv.lhs > tv.rhs;
}

/// Crossover of two parent genes. `average` is the elementwise mean, `uniform`
/// copies each coordinate from a uniformly chosen parent, `fitness_weighted`
/// blends with shifted-positive fitness weights.
inline std::vector<double> crossover(std::span<const double> phi_i,
                                     std::span<const double> phi_j,
                                     CrossoverStrategy strategy, double fitness_i,
                                     double fitness_j, RngStream& rng) {
  if (phi_i.size() != phi_j.size()) {
    throw std::invalid_argument("crossover: gene length mismatch");
  }
  std::vector<double> child(phi_i.size());
  switch (strategy) {
    case CrossoverStrategy::average:
      for (std::size_t d = 0; d < child.size(); ++d) {
        child[d] = 0.5 * (phi_i[d] + phi_j[d]);
      }
      break;
    case CrossoverStrategy::uniform:
      for (std::size_t d = 0; d < child.size(); ++d) {
        child[d] = rng.uniform() < 0.5 ? phi_i[d] : phi_j[d];
      }
      break;
    case CrossoverStrategy::fitness_weighted: {
      const double base = std::min(fitness_i, fitness_j);
      const double wi = fitness_i - base + 1e-6;
      const double wj = fitness_j - base + 1e-6;
      for (std::size_t d = 0; d < child.size(); ++d) {
        child[d] = (wi * phi_i[d] + wj * phi_j[d]) / (wi + wj);
      }
      break;
    }
  }
  return child;
}

/// Gaussian mutation; sigma 0 is the exact identity (no draws consumed).
inline std::vector<double> mutate(std::span<const double> phi, double sigma_mut,
                                  RngStream& rng) {
  if (sigma_mut < 0.0) throw std::invalid_argument("mutate: sigma must be >= 0");
  std::vector<double> out(phi.begin(), phi.end());
  if (sigma_mut == 0.0) return out;
  for (double& x : out) x += sigma_mut * rng.normal();
  return out;
}

/// Population bookkeeping: genes plus evolution counters. The master (index
/// 0) is never touched by evolution.
struct PopulationState {
  std::size_t num_agents = 0;
  std::vector<LatentGene> genes;
  std::size_t elite_count = 0;
  std::int64_t generation = 0;
  std::int64_t last_evolution_iteration = 0;
};

struct ChildRecord {
  int parent_i = 0;  // 1-based agent ids at selection time
  int parent_j = 0;
  int slot = 0;  // 1-based agent id whose gene was replaced
};

struct EvolutionEvent {
  std::int64_t iteration = 0;
  double trigger_lhs = 0.0;
  double trigger_rhs = 0.0;
  std::vector<int> elites;  // 1-based agent ids, rank order
  std::vector<ChildRecord> children;
};

struct EvolveConfig {
  std::size_t elite_count = 0;
  double sigma_mut = 0.1;
  CrossoverStrategy crossover = CrossoverStrategy::average;
};

/// One evolution step over the non-master genes: rank followers by fitness
/// (ties to the lower agent id), keep the top-x genes bit-identically, fill
/// the remaining follower slots with mutated crossover children of two
/// distinct elites (the single elite self-pairs when x == 1). Returns the new
/// population; the caller clears replaced agents' fitness windows.
inline EvolutionEvent evolve(PopulationState& pop,
                             std::span<const std::optional<double>> follower_scores,
                             const EvolveConfig& cfg, RngStream& rng) {
  const std::size_t k = pop.num_agents;
  if (k < 2) throw std::invalid_argument("evolve: population too small");
  if (follower_scores.size() != k - 1) {
    throw std::invalid_argument("evolve: need one score per follower");
  }
  for (const auto& s : follower_scores) {
    if (!s.has_value()) throw std::invalid_argument("evolve: undefined fitness score");
  }
  const std::size_t x = cfg.elite_count;
  if (x > k - 2 && !(k == 2 && x == 0)) {
    throw std::invalid_argument("evolve: elite count leaves no room for children");
  }
  if (x == 0 && k > 2) throw std::invalid_argument("evolve: elite count must be >= 1");

  // rank follower indices (0-based agent index, 1..k-1) by score desc, id asc
  std::vector<std::size_t> order;
  for (std::size_t f = 1; f < k; ++f) order.push_back(f);
  std::sort(order.begin(), order.end(), [&](std::size_t lhs, std::size_t rhs) {
    const double sl = *follower_scores[lhs - 1];
    const double sr = *follower_scores[rhs - 1];
    if (sl != sr) return sl > sr;
    return lhs < rhs;
  });

  EvolutionEvent event;
  std::vector<std::vector<double>> elite_genes;
  std::vector<double> elite_fitness;
  for (std::size_t e = 0; e < x; ++e) {
    const std::size_t idx = order[e];
    event.elites.push_back(static_cast<int>(idx) + 1);
    const auto& g = pop.genes[idx].phi;
    elite_genes.emplace_back(g.begin(), g.end());
    elite_fitness.push_back(*follower_scores[idx - 1]);
  }

  // children fill the non-elite follower slots in ascending id order
  std::vector<std::size_t> child_slots(order.begin() + static_cast<std::ptrdiff_t>(x),
                                       order.end());
  std::sort(child_slots.begin(), child_slots.end());
  for (const std::size_t slot : child_slots) {
    std::size_t pi = 0, pj = 0;
    if (elite_genes.size() > 1) {
      pi = static_cast<std::size_t>(rng.range(elite_genes.size()));
      pj = static_cast<std::size_t>(rng.range(elite_genes.size() - 1));
      if (pj >= pi) ++pj;
    }
    if (elite_genes.empty()) {
      throw std::invalid_argument("evolve: no elites to breed from");
    }
    std::vector<double> child =
        crossover(elite_genes[pi], elite_genes[pj], cfg.crossover, elite_fitness[pi],
                  elite_fitness[pj], rng);
    child = mutate(child, cfg.sigma_mut, rng);
    pop.genes[slot].phi = std::move(child);
    event.children.push_back({event.elites[pi], event.elites[pj],
                              static_cast<int>(slot) + 1});
  }
  pop.elite_count = x;
  pop.generation += 1;
  return event;
}

}  // namespace epo
