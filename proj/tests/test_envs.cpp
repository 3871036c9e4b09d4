#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "epo/envs.hpp"

using namespace epo;

TEST_CASE("pendulum equilibrium stays put with zero reward") {
  EnvBatch env(Task::pendulum, 1, 3);
  env.mutable_states().at(0, 0) = 0.0;
  env.mutable_states().at(0, 1) = 0.0;
  Mat actions(1, 1, 0.0);
  const StepResult r = env.step_all(actions);
  CHECK(env.states().at(0, 0) == 0.0);
  CHECK(env.states().at(0, 1) == 0.0);
  CHECK(r.rewards[0] == 0.0);
  CHECK(r.dones[0] == 0);
}

TEST_CASE("pendulum observation lies on the unit circle") {
  EnvBatch env(Task::pendulum, 16, 99);
  const Mat obs = env.observe_all();
  for (std::size_t r = 0; r < obs.rows; ++r) {
    const double c = obs.at(r, 0), s = obs.at(r, 1);
    CHECK(c * c + s * s == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("mountain car dynamics match the scalar oracle") {
  EnvBatch env(Task::sparse_mountain_car, 1, 5);
  env.mutable_states().at(0, 0) = -0.5;
  env.mutable_states().at(0, 1) = 0.0;
  Mat actions(1, 1);
  actions.at(0, 0) = 1.0;
  const StepResult r = env.step_all(actions);
  const double v_expect = 0.0015 - 0.0025 * std::cos(-1.5);
  CHECK(env.states().at(0, 1) == Catch::Approx(v_expect).margin(1e-12));
  CHECK(env.states().at(0, 0) == Catch::Approx(-0.5 + v_expect).margin(1e-12));
  CHECK(env.states().at(0, 0) == Catch::Approx(-0.49867684).margin(1e-7));
  CHECK(r.rewards[0] == Catch::Approx(-0.1).margin(1e-12));
}

TEST_CASE("mountain car reset ranges and goal bonus") {
  EnvBatch env(Task::sparse_mountain_car, 32, 11);
  for (std::size_t i = 0; i < 32; ++i) {
    CHECK(env.states().at(i, 0) >= -0.6);
    CHECK(env.states().at(i, 0) <= -0.4);
    CHECK(env.states().at(i, 1) == 0.0);
  }
  // place one car just under the goal with high speed
  env.mutable_states().at(0, 0) = 0.44;
  env.mutable_states().at(0, 1) = 0.07;
  Mat actions(32, 1, 1.0);
  const StepResult r = env.step_all(actions);
  CHECK(r.dones[0] == 1);
  CHECK(r.rewards[0] == Catch::Approx(100.0 - 0.1).margin(1e-12));
  REQUIRE(!r.completed.empty());
  CHECK(r.completed[0].env_index == 0);
  CHECK(r.completed[0].goal_reached);
  // auto-reset happened
  CHECK(env.states().at(0, 0) >= -0.6);
  CHECK(env.states().at(0, 0) <= -0.4);
}

TEST_CASE("reacher near goal terminates with the goal value") {
  EnvBatch env(Task::multigoal_reacher, 1, 2);
  env.mutable_states().at(0, 0) = 0.25;
  env.mutable_states().at(0, 1) = 0.25;
  env.mutable_states().at(0, 2) = 0.0;
  env.mutable_states().at(0, 3) = 0.0;
  Mat actions(1, 2, 0.0);
  // p stays at (0.25, 0.25); distance to (0.3, 0.3) = 0.0707 < 0.1
  const StepResult r = env.step_all(actions);
  CHECK(r.rewards[0] == 1.0);
  CHECK(r.dones[0] == 1);
  CHECK(r.completed[0].goal_reached);
}

TEST_CASE("reacher far goal pays ten") {
  EnvBatch env(Task::multigoal_reacher, 1, 2);
  env.mutable_states().at(0, 0) = -0.78;
  env.mutable_states().at(0, 1) = -0.78;
  env.mutable_states().at(0, 2) = 0.0;
  env.mutable_states().at(0, 3) = 0.0;
  Mat actions(1, 2, 0.0);
  const StepResult r = env.step_all(actions);
  CHECK(r.rewards[0] == 10.0);
  CHECK(r.dones[0] == 1);
}

TEST_CASE("identical seeds give identical resets and trajectories") {
  for (Task task : {Task::pendulum, Task::sparse_mountain_car, Task::multigoal_reacher}) {
    EnvBatch a(task, 8, 42), b(task, 8, 42);
    RngStream rng(1, 1);
    for (int t = 0; t < 50; ++t) {
      Mat actions(8, task_action_dim(task));
      for (double& x : actions.data) x = rng.uniform(-1.5, 1.5);
      const StepResult ra = a.step_all(actions);
      const StepResult rb = b.step_all(actions);
      for (std::size_t i = 0; i < ra.next_obs.data.size(); ++i) {
        REQUIRE(ra.next_obs.data[i] == rb.next_obs.data[i]);
      }
      for (std::size_t i = 0; i < 8; ++i) {
        REQUIRE(ra.rewards[i] == rb.rewards[i]);
        REQUIRE(ra.dones[i] == rb.dones[i]);
      }
    }
  }
}

TEST_CASE("state bounds hold under random actions", "[slow]") {
  RngStream rng(7, 0);
  const int steps = 2000;  // x 8 envs x 3 tasks
  for (Task task : {Task::pendulum, Task::sparse_mountain_car, Task::multigoal_reacher}) {
    EnvBatch env(task, 8, 1234);
    for (int t = 0; t < steps; ++t) {
      Mat actions(8, task_action_dim(task));
      for (double& x : actions.data) x = rng.uniform(-2.0, 2.0);
      const StepResult r = env.step_all(actions);
      for (std::size_t i = 0; i < 8; ++i) {
        switch (task) {
          case Task::pendulum:
            REQUIRE(env.states().at(i, 0) <= 3.14159265358979323846);
            REQUIRE(env.states().at(i, 0) > -3.14159265358979323846);
            REQUIRE(std::abs(env.states().at(i, 1)) <= 8.0);
            REQUIRE(r.rewards[i] <= 0.0);
            REQUIRE(r.rewards[i] >= -(3.14159265358979323846 * 3.14159265358979323846 +
                                      0.1 * 64.0 + 0.001 * 4.0));
            break;
          case Task::sparse_mountain_car:
            REQUIRE(env.states().at(i, 0) >= -1.2);
            REQUIRE(env.states().at(i, 0) <= 0.6);
            REQUIRE(std::abs(env.states().at(i, 1)) <= 0.07);
            REQUIRE(r.rewards[i] >= -0.1);
            REQUIRE(r.rewards[i] <= 100.0);
            break;
          case Task::multigoal_reacher:
            REQUIRE(std::abs(env.states().at(i, 0)) <= 1.0);
            REQUIRE(std::abs(env.states().at(i, 1)) <= 1.0);
            REQUIRE(std::abs(env.states().at(i, 2)) <= 0.5);
            REQUIRE(std::abs(env.states().at(i, 3)) <= 0.5);
            break;
        }
      }
    }
  }
}

TEST_CASE("episode limit forces done and auto-reset") {
  EnvBatch env(Task::pendulum, 2, 8);
  Mat actions(2, 1, 0.0);
  int dones_seen = 0;
  for (int t = 0; t < 200; ++t) {
    const StepResult r = env.step_all(actions);
    if (t < 199) {
      CHECK(r.dones[0] == 0);
    } else {
      CHECK(r.dones[0] == 1);
      CHECK(r.completed.size() == 2);
      CHECK_FALSE(r.completed[0].goal_reached);
      CHECK(r.completed[0].length == 200);
    }
    dones_seen += r.dones[0];
  }
  CHECK(dones_seen == 1);
  CHECK(env.step_counts()[0] == 0);  // reset after the limit
}

TEST_CASE("partition_envs produces contiguous equal slices") {
  const auto slices = partition_envs(8, 4);
  REQUIRE(slices.size() == 4);
  CHECK(slices[0].begin == 0);
  CHECK(slices[0].end == 2);
  CHECK(slices[1].begin == 2);
  CHECK(slices[1].end == 4);
  CHECK(slices[3].end == 8);

  // paper-scale check: 24576 envs over 64 agents -> 384 per agent
  const auto big = partition_envs(24576, 64);
  for (const auto& s : big) CHECK(s.size() == 384);

  // K=1 covers everything (plain-PPO configuration)
  const auto single = partition_envs(16, 1);
  REQUIRE(single.size() == 1);
  CHECK(single[0].begin == 0);
  CHECK(single[0].end == 16);

  CHECK_THROWS_AS(partition_envs(10, 3), std::invalid_argument);
}

TEST_CASE("step rejects wrong action shapes") {
  EnvBatch env(Task::multigoal_reacher, 4, 1);
  Mat bad(4, 1, 0.0);
  CHECK_THROWS_AS(env.step_all(bad), std::invalid_argument);
  Mat bad_rows(2, 2, 0.0);
  CHECK_THROWS_AS(env.step_all(bad_rows), std::invalid_argument);
}

TEST_CASE("actions are clamped before dynamics") {
  EnvBatch env(Task::sparse_mountain_car, 2, 5);
  env.mutable_states().at(0, 0) = -0.5;
  env.mutable_states().at(0, 1) = 0.0;
  env.mutable_states().at(1, 0) = -0.5;
  env.mutable_states().at(1, 1) = 0.0;
  Mat actions(2, 1);
  actions.at(0, 0) = 1.0;
  actions.at(1, 0) = 50.0;  // same effect after clamping
  env.step_all(actions);
  CHECK(env.states().at(0, 1) == env.states().at(1, 1));
}
