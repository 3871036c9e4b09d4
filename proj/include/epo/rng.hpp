#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace epo {

/// Deterministic random stream (xoshiro256** seeded via splitmix64).
///
/// Hand-rolled so that draws are bit-reproducible across platforms and the
/// full state fits in four words, which the checkpoint format stores
/// verbatim. Every stochastic component of the engine owns its own stream,
/// keyed by (seed, stream id), so parallel collection cannot perturb the
/// draw order of any other component.
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}

  RngStream(std::uint64_t seed, std::uint64_t stream_id) {
    std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (stream_id + 1));
    for (auto& word : state_) word = splitmix64(x);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; consumes exactly two uniforms per call.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Integer in [0, n) via multiply-shift; n must be > 0.
  std::uint64_t range(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  std::array<std::uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

 private:
  static constexpr double kTwoPi = 6.283185307179586476925286766559;

  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t rotl(std::uint64_t v, int k) {
    return (v << k) | (v >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_;
};

}  // namespace epo
