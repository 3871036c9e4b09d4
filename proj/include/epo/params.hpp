#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace epo {

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
};

/// Flat parameter storage with a named, contiguous block layout. The whole
/// trainable state (actor, critic, log-std, every latent gene) lives in one
/// ParamVector so a single optimizer step and a single gradient buffer can
/// address all of it.
class ParamVector {
 public:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols) {
    if (has(name)) throw std::invalid_argument("ParamVector: duplicate block " + name);
    ParamBlock blk{std::move(name), values_.size(), rows, cols};
    values_.resize(values_.size() + blk.size(), 0.0);
    layout_.push_back(std::move(blk));
    return layout_.size() - 1;
  }

  bool has(std::string_view name) const {
    for (const auto& b : layout_) {
      if (b.name == name) return true;
    }
    return false;
  }

  const ParamBlock& info(std::string_view name) const {
    for (const auto& b : layout_) {
      if (b.name == name) return b;
    }
    throw std::invalid_argument("ParamVector: no block named " + std::string(name));
  }

  std::span<double> block(std::string_view name) {
    const auto& b = info(name);
    return {values_.data() + b.offset, b.size()};
  }
  std::span<const double> block(std::string_view name) const {
    const auto& b = info(name);
    return {values_.data() + b.offset, b.size()};
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  const std::vector<ParamBlock>& blocks() const { return layout_; }

 private:
  std::vector<ParamBlock> layout_;
  std::vector<double> values_;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

inline double global_norm(std::span<const double> g) {
  double sq = 0.0;
  for (double x : g) sq += x * x;
  return std::sqrt(sq);
}

/// Global-norm gradient clip followed by a bias-corrected Adam update.
/// Non-finite gradient entries abort the update (training must halt rather
/// than write garbage into the parameters).
inline void adam_step(ParamVector& params, std::span<const double> grads,
                      AdamState& state, double lr, double max_grad_norm) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: size mismatch");
  }
  if (lr <= 0.0) throw std::invalid_argument("adam_step: lr must be positive");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw std::runtime_error("adam_step: non-finite gradient at index " +
                               std::to_string(i));
    }
  }
  double scale = 1.0;
  if (max_grad_norm > 0.0) {
    const double norm = global_norm(grads);
    if (norm > max_grad_norm) scale = max_grad_norm / norm;
  }
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  auto values = params.values();
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const double g = grads[i] * scale;
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    values[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

}  // namespace epo
