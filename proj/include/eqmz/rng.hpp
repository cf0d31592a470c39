#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "eqmz/group.hpp"

namespace eqmz {

/// splitmix64 finalizer; used to derive independent sub-seeds.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seeded random stream with an attached frame rotation.
///
/// Draws whose outcome is an action (tie breaks, categorical samples, per
/// action noise) are made in the canonical frame and then mapped through the
/// frame rotation. Two streams with the same seed, one raw and one transported
/// by g, therefore make corresponding choices in a run and its g-rotated twin.
/// All other draws are unaffected by the frame.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : engine_(seed) {}

  Rotation frame() const { return frame_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n) by rejection; n must be positive.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("RngStream::uniform_index: empty range");
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t x = engine_();
      if (x >= threshold) return x % n;
    }
  }

  /// Uniform choice among candidate actions.
  ActionId choose_action(std::span<const ActionId> candidates) {
    if (candidates.empty()) throw std::invalid_argument("RngStream::choose_action: no candidates");
    const Rotation back = inverse(frame_);
    std::vector<ActionId> canonical;
    canonical.reserve(candidates.size());
    for (ActionId a : candidates) canonical.push_back(act_on_action(back, a));
    std::sort(canonical.begin(), canonical.end());
    return act_on_action(frame_, canonical[uniform_index(canonical.size())]);
  }

  /// Sample an action id with probability proportional to weights[id].
  ActionId sample_action(std::span<const double> weights) {
    const std::vector<double> canonical = to_canonical(weights);
    double total = 0.0;
    for (double w : canonical) {
      if (!(w >= 0.0)) throw std::invalid_argument("RngStream::sample_action: negative or NaN weight");
      total += w;
    }
    if (!(total > 0.0)) throw std::invalid_argument("RngStream::sample_action: weights sum to zero");
    const double u = uniform01() * total;
    double acc = 0.0;
    int chosen = -1;
    for (std::size_t i = 0; i < canonical.size(); ++i) {
      if (canonical[i] <= 0.0) continue;
      chosen = static_cast<int>(i);
      acc += canonical[i];
      if (u < acc) break;
    }
    return act_on_action(frame_, ActionId{chosen});
  }

  /// Symmetric Dirichlet(alpha) sample over n actions.
  std::vector<double> dirichlet(int n, double alpha) {
    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<double> canonical(static_cast<std::size_t>(n));
    double total = 0.0;
    for (double& x : canonical) {
      x = gamma(engine_);
      total += x;
    }
    if (total > 0.0)
      for (double& x : canonical) x /= total;
    std::vector<double> out(canonical.size());
    for (int a = 0; a < n; ++a) out[act_on_action(frame_, ActionId{a}).id] = canonical[a];
    return out;
  }

  friend RngStream rng_transport(Rotation g, const RngStream& rng) {
    RngStream out = rng;
    out.frame_ = compose(g, rng.frame_);
    return out;
  }

 private:
  // canonical[a] = values[frame . a]
  std::vector<double> to_canonical(std::span<const double> values) const {
    std::vector<double> out(values.size());
    for (std::size_t a = 0; a < values.size(); ++a)
      out[a] = values[act_on_action(frame_, ActionId{static_cast<int>(a)}).id];
    return out;
  }

  std::mt19937_64 engine_;
  Rotation frame_{};
};

}  // namespace eqmz
