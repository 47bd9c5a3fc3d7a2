#pragma once

// Fiber-link physics: per-band attenuation, the classical power budget of the
// time-transfer link, and the lumped Raman noise rate seen by the quantum
// receiver as a function of length-of-flight.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "coexist/errors.hpp"

namespace coexist {

enum class Band { C, O };

struct BandAttenuation {
  double c_band_db_per_km = 0.20;
  double o_band_db_per_km = 0.33;
  double excess_loss_db = 3.0;

  void validate() const {
    if (!(c_band_db_per_km >= 0.0) || !(o_band_db_per_km >= 0.0) || !(excess_loss_db >= 0.0)) {
      throw ConfigError("attenuation coefficients and excess loss must be >= 0");
    }
    if (o_band_db_per_km < c_band_db_per_km) {
      throw ConfigError("O-band attenuation must not be below C-band attenuation");
    }
  }
};

struct FiberSpec {
  double length_km = 0.0;
  BandAttenuation attenuation{};
  double dispersion_spread_ps_per_km = 0.0;
  double group_index = 1.468;

  void validate() const {
    if (!(length_km >= 0.0)) throw ConfigError("fiber length must be >= 0");
    if (!(dispersion_spread_ps_per_km >= 0.0)) throw ConfigError("dispersion spread must be >= 0");
    if (!(group_index >= 1.0)) throw ConfigError("group index must be >= 1");
    attenuation.validate();
  }

  // One-way group delay in picoseconds.
  double delay_ps() const { return length_km * 1e3 * group_index / kSpeedOfLightMPerPs; }

  static constexpr double kSpeedOfLightMPerPs = 299792458.0 * 1e-12;
};

struct ClassicalLinkSpec {
  double tx_wavelength_nm = 1290.0;
  double rx_wavelength_nm = 1270.0;
  double launch_power_dbm = -3.0;
  double receiver_sensitivity_dbm = -41.0;
  // Lumped connector/OADM loss along the classical path.
  double path_excess_loss_db = 3.0;

  void validate() const {
    auto in_o_band = [](double nm) { return nm >= 1260.0 && nm <= 1320.0; };
    if (!in_o_band(tx_wavelength_nm) || !in_o_band(rx_wavelength_nm)) {
      throw ConfigError("classical wavelengths must lie in [1260, 1320] nm");
    }
    if (!(launch_power_dbm > receiver_sensitivity_dbm)) {
      throw ConfigError("launch power must exceed receiver sensitivity");
    }
    if (!(path_excess_loss_db >= 0.0)) throw ConfigError("path excess loss must be >= 0");
  }
};

struct RamanNoiseModel {
  double amplitude_cps = 2216.3;
  double growth_per_km = 0.026885;
  double relative_scale_1310 = 10.0;

  void validate() const {
    if (!(amplitude_cps >= 0.0)) throw ConfigError("Raman amplitude must be >= 0");
    if (!(growth_per_km > 0.0)) throw ConfigError("Raman growth rate must be > 0");
    if (!(relative_scale_1310 >= 1.0)) throw ConfigError("Raman 1310 nm scale must be >= 1");
  }
};

inline double band_coefficient(const BandAttenuation& a, Band band) {
  return band == Band::C ? a.c_band_db_per_km : a.o_band_db_per_km;
}

inline double attenuation_db(const FiberSpec& fiber, Band band) {
  return fiber.length_km * band_coefficient(fiber.attenuation, band) + fiber.attenuation.excess_loss_db;
}

inline double transmission(double loss_db) { return std::pow(10.0, -loss_db / 10.0); }

inline double transmission(const FiberSpec& fiber, Band band) {
  return transmission(attenuation_db(fiber, band));
}

// Received power minus receiver sensitivity. Both directions of the link share
// the fiber, so the same margin governs upstream and downstream.
inline double classical_link_margin(const ClassicalLinkSpec& link, const FiberSpec& fiber) {
  return link.launch_power_dbm - attenuation_db(fiber, Band::O) - link.receiver_sensitivity_dbm;
}

inline bool classical_link_up(const ClassicalLinkSpec& link, const FiberSpec& fiber) {
  return classical_link_margin(link, fiber) >= 0.0;
}

// Length at which the margin reaches zero; negative when the link is down even
// at zero length.
inline double classical_break_even_km(const ClassicalLinkSpec& link, const BandAttenuation& att) {
  const double budget = link.launch_power_dbm - link.receiver_sensitivity_dbm - att.excess_loss_db;
  return budget / att.o_band_db_per_km;
}

struct NoisePoint {
  double length_of_flight_km;
  double noise_cps;
};

// Fits noise = A exp(b L) by least squares on ln(noise). Two points give the
// exact interpolant.
inline RamanNoiseModel calibrate_raman(std::span<const NoisePoint> points,
                                       double relative_scale_1310 = 10.0) {
  if (points.size() < 2) throw CalibrationError("Raman calibration needs at least two points");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(points[i].noise_cps > 0.0)) throw CalibrationError("Raman calibration rates must be > 0");
    if (!std::isfinite(points[i].length_of_flight_km)) throw CalibrationError("non-finite length");
    for (std::size_t j = 0; j < i; ++j) {
      if (points[i].length_of_flight_km == points[j].length_of_flight_km) {
        throw CalibrationError("Raman calibration points have duplicate lengths");
      }
    }
  }
  const double n = static_cast<double>(points.size());
  double sx = 0, sy = 0;
  for (const auto& p : points) {
    sx += p.length_of_flight_km;
    sy += std::log(p.noise_cps);
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (const auto& p : points) {
    const double dx = p.length_of_flight_km - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(p.noise_cps) - my);
  }
  const double b = sxy / sxx;
  if (!(b > 0.0)) throw CalibrationError("Raman noise must grow with length (fitted slope <= 0)");
  RamanNoiseModel m;
  m.growth_per_km = b;
  m.amplitude_cps = std::exp(my - b * mx);
  m.relative_scale_1310 = relative_scale_1310;
  return m;
}

inline double raman_noise_rate(const RamanNoiseModel& model, double length_of_flight_km,
                               double tx_wavelength_nm) {
  double rate = model.amplitude_cps * std::exp(model.growth_per_km * length_of_flight_km);
  if (tx_wavelength_nm >= 1300.0) rate *= model.relative_scale_1310;
  return rate;
}

}  // namespace coexist
