#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "coexist/scenario.hpp"

namespace testing_support {

inline std::string source_path(const std::string& rel) { return std::string(COEXIST_SOURCE_DIR) + "/" + rel; }

// Lossless, noiseless, jitter-free link with ideal clocks.
inline coexist::LinkScenario ideal_scenario(double pair_rate_cps = 1e4) {
  using namespace coexist;
  LinkScenario s;
  s.name = "ideal";
  s.source.pair_rate_cps = pair_rate_cps;
  s.source.coupling_efficiency = 1.0;
  s.source.visibility = 1.0;
  for (FiberSpec* f : {&s.fiber_alice, &s.fiber_bob}) {
    f->attenuation.c_band_db_per_km = 0.0;
    f->attenuation.o_band_db_per_km = 0.0;
    f->attenuation.excess_loss_db = 0.0;
    f->dispersion_spread_ps_per_km = 0.0;
  }
  s.fiber_alice.length_km = 1.0;
  s.fiber_bob.length_km = 3.0;
  s.raman.amplitude_cps = 0.0;
  for (DetectorSpec* d : {&s.detector_alice, &s.detector_bob}) {
    d->efficiency = 1.0;
    d->dark_rate_cps = 0.0;
    d->jitter_sigma_ps = 0.0;
    d->dead_time_ps = 0.0;
  }
  s.analyzer_alice = AnalyzerSetting::H();
  s.analyzer_bob = AnalyzerSetting::V();
  return s;
}

// Two independent noise streams at the given per-node dark rate.
inline coexist::LinkScenario noise_only_scenario(double rate_cps) {
  coexist::LinkScenario s = ideal_scenario(0.0);
  s.detector_alice.dark_rate_cps = rate_cps;
  s.detector_bob.dark_rate_cps = rate_cps;
  return s;
}

// Reference coincidence counter: each Alice tag in time order takes the
// earliest unused Bob tag with |tB - tA - d| <= w/2.
inline std::uint64_t brute_force_coincidences(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b,
                                              std::int64_t width, std::int64_t delay) {
  std::vector<bool> used(b.size(), false);
  std::uint64_t n = 0;
  for (std::uint64_t ta : a) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (used[j]) continue;
      const std::int64_t d = static_cast<std::int64_t>(b[j]) - static_cast<std::int64_t>(ta) - delay;
      if (2 * std::llabs(d) <= width) {
        used[j] = true;
        ++n;
        break;
      }
    }
  }
  return n;
}

inline double poisson_z(double observed, double expected) {
  return (observed - expected) / std::sqrt(std::max(expected, 1.0));
}

}  // namespace testing_support
