#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <optional>
#include <vector>

#include "epo/evolution.hpp"

using namespace epo;

namespace {

PopulationState make_population(std::size_t k, std::size_t n_lat, RngStream& rng) {
  PopulationState pop;
  pop.num_agents = k;
  pop.genes.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    pop.genes[i].agent_id = static_cast<int>(i) + 1;
    pop.genes[i].phi.resize(n_lat);
    for (double& x : pop.genes[i].phi) x = rng.normal();
  }
  return pop;
}

std::vector<std::optional<double>> scores_of(std::initializer_list<double> xs) {
  std::vector<std::optional<double>> s;
  for (double x : xs) s.emplace_back(x);
  return s;
}

}  // namespace

TEST_CASE("fitness tracker: sliding window mean and minimum episode gate") {
  FitnessTracker tracker(2, 3, 3);
  CHECK_FALSE(tracker.score(0).has_value());
  tracker.add_episode(0, 1.0);
  tracker.add_episode(0, 2.0);
  CHECK_FALSE(tracker.score(0).has_value());
  tracker.add_episode(0, 3.0);
  REQUIRE(tracker.score(0).has_value());
  CHECK(*tracker.score(0) == Catch::Approx(2.0));
  // window slides: only the last W episodes count
  for (int i = 0; i < 5; ++i) tracker.add_episode(0, 10.0);
  CHECK(*tracker.score(0) == Catch::Approx(10.0));
  CHECK(tracker.episodes_seen(0) == 8);
}

TEST_CASE("trigger rule: direct evaluation and degenerate-median guard", "[oracle]") {
  // f = [1, 2, 10], gamma 0.3: gap 9 > 0.3*2
  CHECK(should_evolve(scores_of({1, 2, 10}), 0.3, TriggerMode::fitness_gap, 100, 10));
  // all equal: gap 0 never exceeds a positive threshold
  CHECK_FALSE(should_evolve(scores_of({3, 3, 3}), 0.3, TriggerMode::fitness_gap, 100, 10));
  // median 0 -> guard compares against gamma * (|max| + 1e-6)
  CHECK(should_evolve(scores_of({-1, 0, 1}), 0.3, TriggerMode::fitness_gap, 100, 10));
  const TriggerValues tv = trigger_values(std::vector<double>{-1, 0, 1}, 0.3);
  CHECK(tv.lhs == Catch::Approx(2.0));
  CHECK(tv.rhs == Catch::Approx(0.3 * (1.0 + 1e-6)).margin(1e-12));
}

TEST_CASE("trigger: absent scores or cooldown block evolution") {
  std::vector<std::optional<double>> scores{1.0, std::nullopt, 10.0};
  CHECK_FALSE(should_evolve(scores, 0.3, TriggerMode::fitness_gap, 100, 10));
  CHECK_FALSE(should_evolve(scores_of({1, 2, 10}), 0.3, TriggerMode::fitness_gap, 5, 10));
  CHECK(should_evolve(scores_of({1, 2, 10}), 0.3, TriggerMode::fixed_interval, 10, 10));
  CHECK_FALSE(should_evolve(scores_of({1, 2, 10}), 0.3, TriggerMode::fixed_interval, 9, 10));
}

TEST_CASE("trigger is scale invariant for positive scores") {
  RngStream rng(4, 0);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<std::optional<double>> scores;
    std::vector<std::optional<double>> scaled;
    const double c = rng.uniform(0.1, 9.0);
    for (int i = 0; i < 5; ++i) {
      const double f = rng.uniform(0.5, 10.0);
      scores.emplace_back(f);
      scaled.emplace_back(c * f);
    }
    const bool a = should_evolve(scores, 0.5, TriggerMode::fitness_gap, 100, 1);
    const bool b = should_evolve(scaled, 0.5, TriggerMode::fitness_gap, 100, 1);
    REQUIRE(a == b);
  }
}

TEST_CASE("median: even count uses the middle-two mean") {
  CHECK(median_of({1.0, 2.0, 3.0, 10.0}) == Catch::Approx(2.5));
  CHECK(median_of({5.0}) == Catch::Approx(5.0));
}

TEST_CASE("crossover: identical parents reproduce themselves; averaging oracle") {
  RngStream rng(8, 0);
  std::vector<double> a{0.0, 2.0}, b{2.0, 4.0};
  for (auto strategy : {CrossoverStrategy::average, CrossoverStrategy::uniform,
                        CrossoverStrategy::fitness_weighted}) {
    const auto child = crossover(a, a, strategy, 1.0, 2.0, rng);
    CHECK(child == a);
  }
  const auto avg = crossover(a, b, CrossoverStrategy::average, 0.0, 0.0, rng);
  CHECK(avg == std::vector<double>{1.0, 3.0});
}

TEST_CASE("uniform crossover copies coordinates from one of the parents") {
  RngStream rng(9, 0);
  std::vector<double> a{1.0, 2.0, 3.0, 4.0}, b{-1.0, -2.0, -3.0, -4.0};
  bool saw_a = false, saw_b = false;
  for (int trial = 0; trial < 50; ++trial) {
    const auto child = crossover(a, b, CrossoverStrategy::uniform, 0.0, 0.0, rng);
    for (std::size_t d = 0; d < child.size(); ++d) {
      const bool from_a = child[d] == a[d];
      const bool from_b = child[d] == b[d];
      REQUIRE((from_a || from_b));
      saw_a |= from_a;
      saw_b |= from_b;
    }
  }
  CHECK(saw_a);
  CHECK(saw_b);
}

TEST_CASE("fitness-weighted crossover leans toward the fitter parent") {
  RngStream rng(10, 0);
  std::vector<double> a{0.0}, b{1.0};
  const auto child = crossover(a, b, CrossoverStrategy::fitness_weighted, 1.0, 3.0, rng);
  // weights: (1-1+1e-6, 3-1+1e-6) -> child ~ 2/2 = 1 up to the epsilon shift
  CHECK(child[0] == Catch::Approx(2.0 / 2.0).margin(1e-5));
  CHECK(child[0] > 0.99);
}

TEST_CASE("mutation: sigma zero is the exact identity; moments match sigma") {
  RngStream rng(11, 0);
  std::vector<double> phi{0.25, -0.5, 1.0};
  const auto same = mutate(phi, 0.0, rng);
  CHECK(same == phi);

  const int n = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto m = mutate(std::vector<double>{0.0}, 0.1, rng);
    sum += m[0];
    sumsq += m[0] * m[0];
  }
  CHECK(std::abs(sum / n) < 0.002);
  CHECK(std::abs(std::sqrt(sumsq / n) - 0.1) < 0.003);
}

TEST_CASE("evolve: hand-traced K=4 selection", "[oracle]") {
  RngStream grng(12, 0);
  PopulationState pop = make_population(4, 6, grng);
  const auto master_before = pop.genes[0].phi;
  const auto g2 = pop.genes[1].phi;
  const auto g4 = pop.genes[3].phi;
  EvolveConfig cfg;
  cfg.elite_count = 2;
  cfg.sigma_mut = 0.1;
  RngStream rng(13, 0);
  // scores (f2, f3, f4) = (5, 1, 3): elites = {2, 4}, agent 3 replaced
  const EvolutionEvent ev = evolve(pop, scores_of({5, 1, 3}), cfg, rng);
  CHECK(ev.elites == std::vector<int>{2, 4});
  REQUIRE(ev.children.size() == 1);
  CHECK(ev.children[0].slot == 3);
  CHECK((ev.children[0].parent_i == 2 || ev.children[0].parent_i == 4));
  CHECK(pop.genes[0].phi == master_before);
  CHECK(pop.genes[1].phi == g2);  // elites bit-identical
  CHECK(pop.genes[3].phi == g4);
  CHECK(pop.generation == 1);
}

TEST_CASE("evolve is deterministic given the same rng state") {
  RngStream grng(14, 0);
  PopulationState pop1 = make_population(6, 8, grng);
  PopulationState pop2 = pop1;
  EvolveConfig cfg;
  cfg.elite_count = 3;
  RngStream rng1(15, 0), rng2(15, 0);
  const auto scores = scores_of({4, 1, 3, 2, 5});
  evolve(pop1, scores, cfg, rng1);
  evolve(pop2, scores, cfg, rng2);
  for (std::size_t k = 0; k < 6; ++k) {
    REQUIRE(pop1.genes[k].phi == pop2.genes[k].phi);
  }
}

TEST_CASE("evolve: single-elite population self-pairs (K=3, x=1)") {
  RngStream grng(16, 0);
  PopulationState pop = make_population(3, 4, grng);
  EvolveConfig cfg;
  cfg.elite_count = 1;
  cfg.sigma_mut = 0.0;  // identity mutation: child equals the elite
  RngStream rng(17, 0);
  const EvolutionEvent ev = evolve(pop, scores_of({2, 7}), cfg, rng);
  CHECK(ev.elites == std::vector<int>{3});
  REQUIRE(ev.children.size() == 1);
  CHECK(ev.children[0].slot == 2);
  CHECK(pop.genes[1].phi == pop.genes[2].phi);
}

TEST_CASE("evolve rejects bad elite counts and undefined scores") {
  RngStream grng(18, 0);
  PopulationState pop = make_population(5, 4, grng);
  RngStream rng(19, 0);
  EvolveConfig cfg;
  cfg.elite_count = 4;  // > K-2
  CHECK_THROWS_AS(evolve(pop, scores_of({1, 2, 3, 4}), cfg, rng), std::invalid_argument);
  cfg.elite_count = 2;
  std::vector<std::optional<double>> missing{1.0, std::nullopt, 2.0, 3.0};
  CHECK_THROWS_AS(evolve(pop, missing, cfg, rng), std::invalid_argument);
}

TEST_CASE("evolve: ties break toward the lower agent id") {
  RngStream grng(20, 0);
  PopulationState pop = make_population(4, 4, grng);
  EvolveConfig cfg;
  cfg.elite_count = 2;
  RngStream rng(21, 0);
  const EvolutionEvent ev = evolve(pop, scores_of({5, 5, 5}), cfg, rng);
  CHECK(ev.elites == std::vector<int>{2, 3});
  CHECK(ev.children[0].slot == 4);
}
