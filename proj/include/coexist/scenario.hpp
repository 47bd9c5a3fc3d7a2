#pragma once

// Complete physical description of one link configuration.

#include <cmath>
#include <string>

#include "coexist/channel_model.hpp"
#include "coexist/errors.hpp"
#include "coexist/quantum_state.hpp"
#include "coexist/tags.hpp"

namespace coexist {

struct SourceSpec {
  double pair_rate_cps = 1e6;
  // Per-arm probability upstream of the fiber (collection, DWDM, analyzer optics).
  double coupling_efficiency = 0.1;
  BellTarget target{};
  // Werner visibility of the emitted state.
  double visibility = 1.0;

  TwoQubitState state() const { return werner_mix(target, visibility); }

  void validate() const {
    if (!(pair_rate_cps >= 0.0)) throw ConfigError("pair rate must be >= 0");
    if (!(coupling_efficiency >= 0.0 && coupling_efficiency <= 1.0)) throw ConfigError("coupling efficiency outside [0, 1]");
    if (!(visibility >= 0.0 && visibility <= 1.0)) throw ConfigError("source visibility outside [0, 1]");
  }
};

struct DetectorSpec {
  double efficiency = 0.85;
  double dark_rate_cps = 500.0;
  double jitter_sigma_ps = 50.0;
  double dead_time_ps = 50000.0;

  void validate() const {
    if (!(efficiency >= 0.0 && efficiency <= 1.0)) throw ConfigError("detector efficiency outside [0, 1]");
    if (!(dark_rate_cps >= 0.0) || !(jitter_sigma_ps >= 0.0) || !(dead_time_ps >= 0.0)) {
      throw ConfigError("detector rates and times must be >= 0");
    }
  }
};

struct ClockSpec {
  double initial_offset_ps = 0.0;
  double drift_ppm = 0.0;
  double random_walk_ps_per_sqrt_s = 0.0;

  bool is_ideal() const { return initial_offset_ps == 0.0 && drift_ppm == 0.0 && random_walk_ps_per_sqrt_s == 0.0; }

  void validate() const {
    if (!std::isfinite(initial_offset_ps) || !std::isfinite(drift_ppm) || !std::isfinite(random_walk_ps_per_sqrt_s) ||
        random_walk_ps_per_sqrt_s < 0.0) {
      throw ConfigError("clock parameters must be finite (random walk >= 0)");
    }
  }
};

struct SyncSpec {
  double exchange_interval_s = 1.0;
  double timestamp_jitter_ps = 10.0;
  double proportional_gain = 0.3;
  double integral_gain = 0.05;
  // Group-delay difference between the two classical wavelengths.
  double asymmetry_ps_per_km = 0.3;
  // Fraction of the asymmetry removed by link calibration (1 = fully calibrated).
  double asymmetry_correction = 1.0;
  double residual_target_ps = 10.0;
  // Follower turnaround between receive and reply.
  double turnaround_ps = 1e6;

  void validate() const {
    if (!(exchange_interval_s > 0.0)) throw ConfigError("sync exchange interval must be > 0");
    if (!(timestamp_jitter_ps >= 0.0)) throw ConfigError("sync timestamp jitter must be >= 0");
    if (!(proportional_gain > 0.0) || !(integral_gain > 0.0)) throw ConfigError("servo gains must be > 0");
    if (!(turnaround_ps >= 0.0)) throw ConfigError("turnaround must be >= 0");
  }
};

enum class Topology { EntanglementDistribution, NoiseCharacterization };

inline std::string to_string(Topology t) {
  return t == Topology::EntanglementDistribution ? "entanglement_distribution" : "noise_characterization";
}

inline Topology topology_from_string(const std::string& s) {
  if (s == "entanglement_distribution") return Topology::EntanglementDistribution;
  if (s == "noise_characterization") return Topology::NoiseCharacterization;
  throw ConfigError("unknown topology '" + s + "'");
}

struct LinkScenario {
  std::string name = "scenario";
  Topology topology = Topology::EntanglementDistribution;
  SourceSpec source{};
  FiberSpec fiber_alice{};
  FiberSpec fiber_bob{};
  ClassicalLinkSpec classical{};
  RamanNoiseModel raman{};
  DetectorSpec detector_alice{};
  DetectorSpec detector_bob{};
  ClockSpec clock_alice{};
  ClockSpec clock_bob{};
  AnalyzerSetting analyzer_alice{};
  AnalyzerSetting analyzer_bob{};
  SyncSpec sync{};
  double coincidence_window_ps = 2000.0;

  void validate() const {
    source.validate();
    fiber_alice.validate();
    fiber_bob.validate();
    classical.validate();
    raman.validate();
    detector_alice.validate();
    detector_bob.validate();
    clock_alice.validate();
    clock_bob.validate();
    analyzer_alice.validate();
    analyzer_bob.validate();
    sync.validate();
    if (!(coincidence_window_ps > 0.0)) throw ConfigError("coincidence window must be > 0");
  }

  bool noise_characterization() const { return topology == Topology::NoiseCharacterization; }

  // In the noise-characterization layout both photons run through fiber_alice.
  const FiberSpec& arm(Node n) const {
    if (noise_characterization()) return fiber_alice;
    return n == Node::Alice ? fiber_alice : fiber_bob;
  }

  const DetectorSpec& detector(Node n) const { return n == Node::Alice ? detector_alice : detector_bob; }

  // Both detectors of the noise-characterization layout share Alice's time tagger.
  const ClockSpec& clock(Node n) const {
    if (noise_characterization()) return clock_alice;
    return n == Node::Alice ? clock_alice : clock_bob;
  }

  double length_of_flight_km() const { return arm(Node::Alice).length_km + arm(Node::Bob).length_km; }

  // Probability that a photon of this arm reaches and fires its detector,
  // excluding the analyzer projection.
  double arm_efficiency(Node n) const {
    return source.coupling_efficiency * transmission(arm(n), Band::C) * detector(n).efficiency;
  }

  double raman_rate_cps() const {
    return raman_noise_rate(raman, length_of_flight_km(), classical.tx_wavelength_nm);
  }

  double noise_rate_cps(Node n) const { return raman_rate_cps() + detector(n).dark_rate_cps; }

  // Analyzer settings have no effect in the noise-characterization layout,
  // which detects before any polarization analysis.
  bool has_analyzers() const { return !noise_characterization(); }

  // Classical time-transfer path between the two time taggers.
  FiberSpec classical_path() const {
    FiberSpec f = fiber_alice;
    f.length_km = noise_characterization() ? fiber_alice.length_km : fiber_alice.length_km + fiber_bob.length_km;
    f.attenuation.excess_loss_db = classical.path_excess_loss_db;
    return f;
  }

  double differential_delay_ps() const { return arm(Node::Bob).delay_ps() - arm(Node::Alice).delay_ps(); }

  // Combined Gaussian width of the (tB - tA) coincidence peak.
  double coincidence_peak_sigma_ps() const {
    auto spread = [&](Node n) {
      const double d = arm(n).dispersion_spread_ps_per_km * arm(n).length_km;
      const double j = detector(n).jitter_sigma_ps;
      return d * d + j * j;
    };
    return std::sqrt(spread(Node::Alice) + spread(Node::Bob));
  }
};

}  // namespace coexist
