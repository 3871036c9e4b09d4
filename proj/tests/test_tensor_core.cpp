#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "epo/gradcheck.hpp"
#include "epo/mat.hpp"
#include "epo/mlp.hpp"
#include "epo/params.hpp"
#include "epo/rng.hpp"
#include "oracles.hpp"

using namespace epo;

namespace {

ParamVector make_mlp_params(const MlpSpec& spec, RngStream& rng) {
  ParamVector pv;
  add_mlp_blocks(pv, spec, "");
  mlp_init(pv, spec, "", rng);
  return pv;
}

}  // namespace

TEST_CASE("matmul small known product") {
  Mat a(2, 3);
  a.data = {1, 2, 3, 4, 5, 6};
  Mat b(3, 2);
  b.data = {7, 8, 9, 10, 11, 12};
  Mat c = matmul(a, b);
  CHECK(c.at(0, 0) == 58.0);
  CHECK(c.at(0, 1) == 64.0);
  CHECK(c.at(1, 0) == 139.0);
  CHECK(c.at(1, 1) == 154.0);
  CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
}

TEST_CASE("zero-parameter network maps anything to zero") {
  MlpSpec spec{1, {1}, 1, Activation::tanh};
  ParamVector pv;
  add_mlp_blocks(pv, spec, "");
  Mat input(1, 1);
  input.at(0, 0) = 0.7;
  Mat out = mlp_forward(spec, mlp_layers(pv, spec, ""), input);
  CHECK(out.at(0, 0) == 0.0);
}

TEST_CASE("elu forward matches scalar layer-by-layer oracle") {
  MlpSpec spec{2, {2}, 1, Activation::elu};
  ParamVector pv;
  add_mlp_blocks(pv, spec, "");
  // identity-embedded first layer, summing head
  auto w0 = pv.block("W0");
  w0[0] = 1.0;  // W0[0][0]
  w0[3] = 1.0;  // W0[1][1]
  auto w1 = pv.block("W1");
  w1[0] = 1.0;
  w1[1] = 1.0;
  Mat input(1, 2);
  input.at(0, 0) = 1.0;
  input.at(0, 1) = -1.0;
  Mat out = mlp_forward(spec, mlp_layers(pv, spec, ""), input);
  // by hand: h = (elu(1), elu(-1)) = (1, e^-1 - 1); y = 1 + e^-1 - 1
  const double expected = std::exp(-1.0);
  CHECK(out.at(0, 0) == Catch::Approx(expected).epsilon(1e-12));
  const auto oracle_out = oracle::scalar_mlp_eval(spec, pv, "", input.row(0));
  CHECK(out.at(0, 0) == oracle_out[0]);
}

TEST_CASE("forward matches scalar oracle on random nets", "[oracle]") {
  RngStream rng(2024, 0);
  for (int trial = 0; trial < 20; ++trial) {
    MlpSpec spec{1 + static_cast<std::size_t>(rng.range(4)),
                 {1 + static_cast<std::size_t>(rng.range(4)),
                  1 + static_cast<std::size_t>(rng.range(3))},
                 1 + static_cast<std::size_t>(rng.range(3)),
                 trial % 2 == 0 ? Activation::elu : Activation::tanh};
    ParamVector pv = make_mlp_params(spec, rng);
    Mat input(3, spec.input_dim);
    for (double& x : input.data) x = rng.uniform(-1.0, 1.0);
    Mat out = mlp_forward(spec, mlp_layers(pv, spec, ""), input);
    for (std::size_t r = 0; r < input.rows; ++r) {
      const auto expect = oracle::scalar_mlp_eval(spec, pv, "", input.row(r));
      for (std::size_t c = 0; c < out.cols; ++c) {
        CHECK(out.at(r, c) == Catch::Approx(expect[c]).margin(1e-13));
      }
    }
  }
}

TEST_CASE("batched forward equals stacked single-row forwards bitwise") {
  RngStream rng(7, 0);
  MlpSpec spec{3, {4, 4}, 2, Activation::elu};
  ParamVector pv = make_mlp_params(spec, rng);
  const auto layers = mlp_layers(pv, spec, "");
  Mat batch(3, 3);
  for (double& x : batch.data) x = rng.uniform(-1.0, 1.0);
  Mat full = mlp_forward(spec, layers, batch);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    Mat single(1, 3);
    std::copy(batch.row(r).begin(), batch.row(r).end(), single.data.begin());
    Mat one = mlp_forward(spec, layers, single);
    for (std::size_t c = 0; c < full.cols; ++c) {
      CHECK(full.at(r, c) == one.at(0, c));  // bitwise
    }
  }
}

TEST_CASE("backward: zero output grad yields zero param grad") {
  RngStream rng(11, 0);
  MlpSpec spec{2, {3}, 2, Activation::tanh};
  ParamVector pv = make_mlp_params(spec, rng);
  const auto layers = mlp_layers(pv, spec, "");
  Mat input(2, 2);
  for (double& x : input.data) x = rng.uniform(-1.0, 1.0);
  MlpCache cache;
  mlp_forward(spec, layers, input, &cache);
  std::vector<double> grad(pv.size(), 0.0);
  auto grefs = mlp_layer_grads(pv, spec, "", grad);
  Mat dout(2, 2, 0.0);
  Mat din = mlp_backward(spec, layers, cache, dout, grefs);
  for (double g : grad) CHECK(g == 0.0);
  for (double g : din.data) CHECK(g == 0.0);
}

TEST_CASE("backward: tanh unit at zero pre-activation passes gradient through") {
  MlpSpec spec{1, {1}, 1, Activation::tanh};
  ParamVector pv;
  add_mlp_blocks(pv, spec, "");
  pv.block("W0")[0] = 1.0;   // pre-activation = input
  pv.block("W1")[0] = 1.0;
  const auto layers = mlp_layers(pv, spec, "");
  Mat input(1, 1, 0.0);  // pre-activation 0, tanh'(0) = 1
  MlpCache cache;
  mlp_forward(spec, layers, input, &cache);
  std::vector<double> grad(pv.size(), 0.0);
  auto grefs = mlp_layer_grads(pv, spec, "", grad);
  Mat dout(1, 1);
  dout.at(0, 0) = 3.5;
  Mat din = mlp_backward(spec, layers, cache, dout, grefs);
  CHECK(din.at(0, 0) == Catch::Approx(3.5).epsilon(1e-14));
}

TEST_CASE("backward matches central finite differences", "[oracle]") {
  RngStream rng(99, 0);
  for (int trial = 0; trial < 10; ++trial) {
    MlpSpec spec{2 + static_cast<std::size_t>(rng.range(3)),
                 {2 + static_cast<std::size_t>(rng.range(3))},
                 1 + static_cast<std::size_t>(rng.range(2)),
                 trial % 2 == 0 ? Activation::elu : Activation::tanh};
    ParamVector pv = make_mlp_params(spec, rng);
    Mat input(4, spec.input_dim);
    for (double& x : input.data) x = rng.uniform(-1.0, 1.0);
    Mat weights(4, spec.output_dim);
    for (double& x : weights.data) x = rng.uniform(-1.0, 1.0);
    // loss = sum_ij weights_ij * output_ij
    auto loss = [&](const ParamVector& p, std::span<double> grad) {
      const auto layers = mlp_layers(p, spec, "");
      if (grad.empty()) {
        Mat out = mlp_forward(spec, layers, input);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.data.size(); ++i) {
          acc += weights.data[i] * out.data[i];
        }
        return acc;
      }
      MlpCache cache;
      Mat out = mlp_forward(spec, layers, input, &cache);
      double acc = 0.0;
      for (std::size_t i = 0; i < out.data.size(); ++i) {
        acc += weights.data[i] * out.data[i];
      }
      auto grefs = mlp_layer_grads(p, spec, "", grad);
      mlp_backward(spec, layers, cache, weights, grefs);
      return acc;
    };
    const auto report = gradient_check(pv, loss);
    INFO("trial " << trial << " worst idx " << report.worst_index << " analytic "
                  << report.worst_analytic << " numeric " << report.worst_numeric);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("backward rejects mismatched cache") {
  RngStream rng(5, 0);
  MlpSpec spec{2, {2}, 1, Activation::elu};
  ParamVector pv = make_mlp_params(spec, rng);
  const auto layers = mlp_layers(pv, spec, "");
  Mat input(2, 2);
  MlpCache cache;
  mlp_forward(spec, layers, input, &cache);
  std::vector<double> grad(pv.size(), 0.0);
  auto grefs = mlp_layer_grads(pv, spec, "", grad);
  Mat bad(3, 1, 0.0);  // wrong batch
  CHECK_THROWS_AS(mlp_backward(spec, layers, cache, bad, grefs), std::invalid_argument);
}

TEST_CASE("adam: zero gradient is the identity for any number of steps") {
  ParamVector pv;
  pv.add("w", 1, 3);
  auto w = pv.block("w");
  w[0] = 0.5;
  w[1] = -2.0;
  w[2] = 7.0;
  AdamState st(pv.size());
  std::vector<double> zeros(pv.size(), 0.0);
  for (int i = 0; i < 5; ++i) adam_step(pv, zeros, st, 0.1, 1.0);
  CHECK(pv.block("w")[0] == 0.5);
  CHECK(pv.block("w")[1] == -2.0);
  CHECK(pv.block("w")[2] == 7.0);
  CHECK(st.step_count == 5);
}

TEST_CASE("adam: closed-form single step", "[oracle]") {
  // scalar param 0, grad 1, lr=0.1: bias-corrected mhat=1, vhat=1
  // -> param = -0.1 / (1 + eps) approx -0.1
  ParamVector pv;
  pv.add("w", 1, 1);
  AdamState st(1);
  std::vector<double> g{1.0};
  adam_step(pv, g, st, 0.1, 0.0);
  CHECK(pv.block("w")[0] == Catch::Approx(-0.1).epsilon(1e-7));
  CHECK(st.step_count == 1);
}

TEST_CASE("gradient clipping rescales to max norm") {
  ParamVector pv;
  pv.add("w", 1, 2);
  AdamState st(2);
  std::vector<double> g{3.0, 4.0};  // norm 5
  adam_step(pv, g, st, 1e-9, 1.0);
  // effective grads 0.6, 0.8: check via m
  CHECK(st.m[0] == Catch::Approx(0.1 * 0.6).epsilon(1e-12));
  CHECK(st.m[1] == Catch::Approx(0.1 * 0.8).epsilon(1e-12));
}

TEST_CASE("clipping is identity when norm is small and never raises the norm") {
  RngStream rng(3, 9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.range(6));
    std::vector<double> g(n);
    for (double& x : g) x = rng.uniform(-2.0, 2.0);
    const double norm = global_norm(g);
    const double max_norm = rng.uniform(0.1, 3.0);
    const double scale = norm > max_norm ? max_norm / norm : 1.0;
    CHECK(scale <= 1.0);
    CHECK(norm * scale <= std::max(norm, max_norm) + 1e-12);
  }
}

TEST_CASE("adam rejects non-finite gradients") {
  ParamVector pv;
  pv.add("w", 1, 2);
  AdamState st(2);
  std::vector<double> g{1.0, std::nan("")};
  CHECK_THROWS_AS(adam_step(pv, g, st, 0.1, 1.0), std::runtime_error);
}

TEST_CASE("gradient_check: quadratic loss has near-zero error") {
  ParamVector pv;
  pv.add("w", 1, 4);
  RngStream rng(17, 0);
  for (double& x : pv.block("w")) x = rng.uniform(-1.0, 1.0);
  auto loss = [](const ParamVector& p, std::span<double> grad) {
    double acc = 0.0;
    const auto v = p.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      acc += 0.5 * v[i] * v[i];
      if (!grad.empty()) grad[i] = v[i];
    }
    return acc;
  };
  const auto report = gradient_check(pv, loss);
  CHECK(report.max_rel_error < 1e-8);
}

TEST_CASE("param vector layout is contiguous and unique") {
  ParamVector pv;
  pv.add("a", 2, 3);
  pv.add("b", 1, 4);
  CHECK(pv.size() == 10);
  CHECK(pv.info("a").offset == 0);
  CHECK(pv.info("b").offset == 6);
  CHECK_THROWS_AS(pv.add("a", 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(pv.block("missing"), std::invalid_argument);
}

TEST_CASE("mlp param count follows sum (fan_in+1)*fan_out") {
  MlpSpec spec{3, {5, 4}, 2, Activation::elu};
  CHECK(spec.param_count() == (3 + 1) * 5 + (5 + 1) * 4 + (4 + 1) * 2);
  ParamVector pv;
  add_mlp_blocks(pv, spec, "x.");
  CHECK(pv.size() == spec.param_count());
}

TEST_CASE("rng streams are reproducible and serializable") {
  RngStream a(42, 7);
  RngStream b(42, 7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  const auto snap = a.state();
  const double x = a.normal();
  RngStream c;
  c.set_state(snap);
  CHECK(c.normal() == x);
  RngStream d(42, 8);
  CHECK(d.next_u64() != b.next_u64());
}

TEST_CASE("rng uniform and normal have sane moments") {
  RngStream rng(123, 0);
  double sum = 0.0, sumsq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sumsq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(std::abs(sumsq / n - 1.0) < 0.02);
}
