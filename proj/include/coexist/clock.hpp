#pragma once

// Free-running node clocks: constant offset, constant rate error, and a
// Brownian phase wander sampled on a fixed grid and linearly interpolated.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "coexist/rng.hpp"
#include "coexist/scenario.hpp"
#include "coexist/tags.hpp"

namespace coexist {

class ClockRealization {
 public:
  static constexpr double kWalkStepPs = 1e9;  // 1 ms

  ClockRealization() = default;

  ClockRealization(const ClockSpec& spec, double horizon_ps, std::uint64_t seed) : spec_(spec) {
    if (spec.random_walk_ps_per_sqrt_s > 0.0 && horizon_ps > 0.0) {
      const auto steps = static_cast<std::size_t>(std::ceil(horizon_ps / kWalkStepPs)) + 2;
      const double step_sigma = spec.random_walk_ps_per_sqrt_s * std::sqrt(kWalkStepPs * 1e-12);
      Rng rng(seed);
      walk_.resize(steps);
      walk_[0] = 0.0;
      for (std::size_t i = 1; i < steps; ++i) walk_[i] = walk_[i - 1] + step_sigma * rng.normal();
    }
  }

  const ClockSpec& spec() const { return spec_; }

  double walk_ps(double true_ps) const {
    if (walk_.empty() || true_ps <= 0.0) return 0.0;
    const double x = true_ps / kWalkStepPs;
    const auto i = static_cast<std::size_t>(x);
    if (i + 1 >= walk_.size()) return walk_.back();
    const double f = x - static_cast<double>(i);
    return walk_[i] + f * (walk_[i + 1] - walk_[i]);
  }

  // Local reading at true time t.
  double local_ps(double true_ps) const {
    return true_ps * (1.0 + spec_.drift_ppm * 1e-6) + spec_.initial_offset_ps + walk_ps(true_ps);
  }

  double offset_ps(double true_ps) const { return local_ps(true_ps) - true_ps; }

 private:
  ClockSpec spec_{};
  std::vector<double> walk_;
};

// Maps a true-time stream into the node's local time base. Tags that land
// before local zero were never recorded and are dropped.
inline TagStream apply_clock(const TagStream& stream, const ClockRealization& clock) {
  TagStream out;
  out.duration_ps = stream.duration_ps;
  out.tags.reserve(stream.tags.size());
  for (const auto& t : stream.tags) {
    const double local = std::round(clock.local_ps(static_cast<double>(t.time_ps)));
    if (local < 0.0) continue;
    out.tags.push_back({static_cast<std::uint64_t>(local), t.node, t.channel});
  }
  out.sort();
  return out;
}

inline TagStream apply_clock(const TagStream& stream, const ClockSpec& clock, std::uint64_t seed) {
  return apply_clock(stream, ClockRealization(clock, static_cast<double>(stream.duration_ps), seed));
}

}  // namespace coexist
