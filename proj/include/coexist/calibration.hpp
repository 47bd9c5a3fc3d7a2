#pragma once

// Fits the free source and loss parameters of the link model to a set of
// measured anchor values.
//
// Shared across the entanglement scenarios: pair rate R and source (Werner)
// visibility Vs. Per scenario: the arm efficiency, reported as an extra
// excess loss relative to the lowest-loss scenario, which fixes the shared
// coupling efficiency. The objective is the worst normalized residual over
// all scenarios and all three observables:
//
//   rate:       |ln(predicted / anchor)| / ln(rate_factor)
//   visibility: |V - V_anchor| / visibility_tolerance
//   CHSH:       |S - S_anchor| / (chsh_sigmas * sigma_S)
//
// so a value <= 1 means every observable is inside its tolerance. The
// noise-characterization scenario shares R and gets its own coupling, set so
// that its CAR matches a single anchor point.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>
#include <json.hpp>
#include <toml.hpp>

#include "coexist/analysis.hpp"
#include "coexist/channel_model.hpp"
#include "coexist/errors.hpp"
#include "coexist/event_synthesis.hpp"
#include "coexist/scenario.hpp"
#include "coexist/scenario_io.hpp"

namespace coexist {

inline constexpr std::array<double, 4> kFringeAliceBases{-kPi / 4.0, 0.0, kPi / 4.0, kPi / 2.0};

struct FringePrediction {
  double max_rate_cps = 0.0;
  std::array<double, 4> visibilities{};
  double mean_visibility = 0.0;
  double s = 0.0;
  double sigma_s = 0.0;
};

// Analytic counterpart of the fringe recipe: four Alice bases, sine-square
// fringes in Bob's angle, CHSH from the fringe values at the optimal angles.
inline FringePrediction predict_fringes(const LinkScenario& s, double window_ps, double integration_s = 1.0) {
  const TwoQubitState rho = s.source.state();
  FringePrediction p;
  double vsum = 0.0;
  for (std::size_t k = 0; k < kFringeAliceBases.size(); ++k) {
    const AnalyzerSetting a = AnalyzerSetting::linear(kFringeAliceBases[k]);
    const FringeExtrema ex = fringe_extrema(rho, a);
    const double hi = expected_coincidence_rate(s, rho, a, AnalyzerSetting::linear(ex.argmax_rad), window_ps);
    const double lo =
        expected_coincidence_rate(s, rho, a, AnalyzerSetting::linear(ex.argmax_rad + kPi / 2.0), window_ps);
    p.visibilities[k] = (hi + lo) > 0.0 ? (hi - lo) / (hi + lo) : 0.0;
    vsum += p.visibilities[k];
    p.max_rate_cps = std::max(p.max_rate_cps, hi);
  }
  p.mean_visibility = vsum / static_cast<double>(kFringeAliceBases.size());

  const ChshAngles ang = optimal_chsh_angles(s.source.target);
  auto c = [&](double a, double b) {
    return integration_s *
           expected_coincidence_rate(s, rho, AnalyzerSetting::linear(a), AnalyzerSetting::linear(b), window_ps);
  };
  auto corr = [&](double a, double b) {
    const double ap = a + kPi / 2.0, bp = b + kPi / 2.0;
    return CorrelationCounts{c(a, b), c(a, bp), c(ap, b), c(ap, bp)};
  };
  const ChshCounts counts{corr(ang.a, ang.b), corr(ang.a, ang.b_prime), corr(ang.a_prime, ang.b),
                          corr(ang.a_prime, ang.b_prime)};
  const ChshResult r = chsh_from_counts(counts);
  p.s = r.s;
  p.sigma_s = r.sigma;
  return p;
}

struct EntanglementAnchor {
  std::string name;
  double arm_length_km = 0.0;
  double coincidence_rate_cps = 0.0;  // fringe maximum in the anchor window
  double visibility = 0.0;            // mean over the four Alice bases
  double chsh_s = 0.0;
  double chsh_sigma = 0.0;  // as reported; informational
};

struct NoiseCarAnchor {
  std::string name = "noise_characterization";
  double length_of_flight_km = 130.0;
  double car = 10.0;
  // Fiber length written into the calibrated scenario.
  double fiber_length_km = 50.0;
};

struct CalibrationAnchors {
  std::vector<NoisePoint> raman_points;
  double relative_scale_1310 = 10.0;
  std::vector<EntanglementAnchor> entanglement;
  std::optional<NoiseCarAnchor> noise_car;
  double window_ps = 2000.0;
  double integration_s = 1.0;
  double rate_factor = 2.0;
  double visibility_tolerance = 0.05;
  double chsh_sigmas = 3.0;

  void validate() const {
    if (raman_points.empty() && entanglement.empty() && !noise_car) {
      throw ConfigError("calibration anchors are empty");
    }
    if (!(rate_factor > 1.0) || !(visibility_tolerance > 0.0) || !(chsh_sigmas > 0.0) || !(window_ps > 0.0) ||
        !(integration_s > 0.0)) {
      throw ConfigError("calibration tolerances must be positive (rate factor > 1)");
    }
    for (const auto& a : entanglement) {
      if (!(a.arm_length_km >= 0.0) || !(a.coincidence_rate_cps > 0.0) || !(a.visibility > 0.0 && a.visibility < 1.0) ||
          !(a.chsh_s > 0.0)) {
        throw ConfigError("entanglement anchor '" + a.name + "' has out-of-range values");
      }
    }
    if (!entanglement.empty() && raman_points.empty()) {
      throw ConfigError("entanglement anchors need Raman noise anchors");
    }
    if (noise_car && raman_points.empty()) throw ConfigError("the CAR anchor needs Raman noise anchors");
    if (noise_car && entanglement.empty()) throw ConfigError("the CAR anchor needs entanglement anchors (shared pair rate)");
  }
};

inline CalibrationAnchors anchors_from_toml(const toml::table& root) {
  CalibrationAnchors a;
  auto num = [](const toml::node_view<const toml::node>& v, const char* what) {
    if (auto d = v.value<double>()) return *d;
    throw ConfigError(std::string("anchors: missing or non-numeric '") + what + "'");
  };
  if (const auto* r = root["raman"].as_table()) {
    if (auto v = (*r)["relative_scale_1310"].value<double>()) a.relative_scale_1310 = *v;
    if (const auto* pts = (*r)["points"].as_array()) {
      for (const auto& p : *pts) {
        const auto* t = p.as_table();
        if (!t) throw ConfigError("anchors: raman.points entries must be tables");
        const toml::node_view<const toml::node> v{*t};
        a.raman_points.push_back({num(v["length_of_flight_km"], "length_of_flight_km"), num(v["noise_cps"], "noise_cps")});
      }
    }
  }
  if (const auto* obj = root["objective"].as_table()) {
    const toml::node_view<const toml::node> v{*obj};
    if (auto x = v["window_ps"].value<double>()) a.window_ps = *x;
    if (auto x = v["integration_s"].value<double>()) a.integration_s = *x;
    if (auto x = v["rate_factor"].value<double>()) a.rate_factor = *x;
    if (auto x = v["visibility_tolerance"].value<double>()) a.visibility_tolerance = *x;
    if (auto x = v["chsh_sigmas"].value<double>()) a.chsh_sigmas = *x;
  }
  if (const auto* ents = root["entanglement"].as_array()) {
    for (const auto& e : *ents) {
      const auto* t = e.as_table();
      if (!t) throw ConfigError("anchors: [[entanglement]] entries must be tables");
      const toml::node_view<const toml::node> v{*t};
      EntanglementAnchor x;
      x.name = v["name"].value<std::string>().value_or("entanglement_" + std::to_string(a.entanglement.size()));
      x.arm_length_km = num(v["arm_length_km"], "arm_length_km");
      x.coincidence_rate_cps = num(v["coincidence_rate_cps"], "coincidence_rate_cps");
      x.visibility = num(v["visibility"], "visibility");
      x.chsh_s = num(v["chsh_s"], "chsh_s");
      x.chsh_sigma = v["chsh_sigma"].value<double>().value_or(0.0);
      a.entanglement.push_back(x);
    }
  }
  if (const auto* n = root["noise_characterization"].as_table()) {
    const toml::node_view<const toml::node> v{*n};
    NoiseCarAnchor c;
    c.name = v["name"].value<std::string>().value_or(c.name);
    c.length_of_flight_km = num(v["length_of_flight_km"], "length_of_flight_km");
    c.car = num(v["car"], "car");
    c.fiber_length_km = v["fiber_length_km"].value<double>().value_or(c.fiber_length_km);
    a.noise_car = c;
  }
  a.validate();
  return a;
}

inline CalibrationAnchors load_anchors(const std::string& path) {
  try {
    return anchors_from_toml(toml::parse(read_text_file(path), path));
  } catch (const toml::parse_error& e) {
    throw ConfigError(path + ":" + std::to_string(e.source().begin.line) + ": " + std::string(e.description()));
  }
}

struct ScenarioResidual {
  std::string name;
  double arm_efficiency = 0.0;
  double extra_excess_loss_db = 0.0;
  FringePrediction predicted;
  EntanglementAnchor anchor;
  double rate_residual = 0.0;
  double visibility_residual = 0.0;
  double chsh_residual = 0.0;

  double worst() const { return std::max({rate_residual, visibility_residual, chsh_residual}); }
};

struct CalibrationResult {
  RamanNoiseModel raman;
  std::vector<LinkScenario> scenarios;
  std::vector<ScenarioResidual> residuals;
  double pair_rate_cps = 0.0;
  double source_visibility = 1.0;
  double coupling_efficiency = 0.0;
  double max_residual = 0.0;
  std::optional<double> noise_coupling_efficiency;
  std::optional<double> noise_car_at_anchor;
  std::vector<double> raman_relative_errors;

  nlohmann::json report() const {
    nlohmann::json j;
    j["raman"] = {{"amplitude_cps", raman.amplitude_cps},
                  {"growth_per_km", raman.growth_per_km},
                  {"relative_scale_1310", raman.relative_scale_1310},
                  {"anchor_relative_errors", raman_relative_errors}};
    if (!residuals.empty()) {
      j["pair_rate_cps"] = pair_rate_cps;
      j["source_visibility"] = source_visibility;
      j["coupling_efficiency"] = coupling_efficiency;
      j["max_normalized_residual"] = max_residual;
      j["scenarios"] = nlohmann::json::array();
      for (const auto& r : residuals) {
        j["scenarios"].push_back({{"name", r.name},
                                  {"arm_efficiency", r.arm_efficiency},
                                  {"extra_excess_loss_db", r.extra_excess_loss_db},
                                  {"predicted_rate_cps", r.predicted.max_rate_cps},
                                  {"anchor_rate_cps", r.anchor.coincidence_rate_cps},
                                  {"predicted_visibility", r.predicted.mean_visibility},
                                  {"anchor_visibility", r.anchor.visibility},
                                  {"predicted_chsh_s", r.predicted.s},
                                  {"predicted_chsh_sigma", r.predicted.sigma_s},
                                  {"anchor_chsh_s", r.anchor.chsh_s},
                                  {"rate_residual", r.rate_residual},
                                  {"visibility_residual", r.visibility_residual},
                                  {"chsh_residual", r.chsh_residual}});
      }
    }
    if (noise_coupling_efficiency) {
      j["noise_characterization"] = {{"coupling_efficiency", *noise_coupling_efficiency},
                                     {"car_at_anchor", *noise_car_at_anchor}};
    }
    return j;
  }
};

namespace detail {

// Entanglement scenario for one anchor with the given model parameters. The
// coupling may exceed 1 transiently during the search; nothing here validates.
inline LinkScenario entanglement_candidate(const LinkScenario& tmpl, const EntanglementAnchor& a, double R,
                                           double Vs, double arm_eff) {
  LinkScenario s = tmpl;
  s.name = a.name;
  s.topology = Topology::EntanglementDistribution;
  s.fiber_alice.length_km = a.arm_length_km;
  s.fiber_bob.length_km = a.arm_length_km;
  s.source.pair_rate_cps = R;
  s.source.visibility = std::clamp(Vs, 0.0, 1.0);
  const double base = transmission(s.fiber_alice, Band::C) * s.detector_alice.efficiency;
  s.source.coupling_efficiency = arm_eff / base;
  return s;
}

// Highest arm efficiency the template allows at this length (coupling = 1).
inline double max_arm_efficiency(const LinkScenario& tmpl, double arm_length_km) {
  FiberSpec f = tmpl.fiber_alice;
  f.length_km = arm_length_km;
  return transmission(f, Band::C) * std::min(tmpl.detector_alice.efficiency, tmpl.detector_bob.efficiency);
}

struct Objective {
  const LinkScenario& tmpl;
  const CalibrationAnchors& anchors;

  ScenarioResidual evaluate(const EntanglementAnchor& a, double R, double Vs, double eff) const {
    ScenarioResidual r;
    r.name = a.name;
    r.anchor = a;
    r.arm_efficiency = eff;
    r.predicted = predict_fringes(entanglement_candidate(tmpl, a, R, Vs, eff), anchors.window_ps, anchors.integration_s);
    r.rate_residual = std::abs(std::log(r.predicted.max_rate_cps / a.coincidence_rate_cps)) / std::log(anchors.rate_factor);
    r.visibility_residual = std::abs(r.predicted.mean_visibility - a.visibility) / anchors.visibility_tolerance;
    r.chsh_residual = r.predicted.sigma_s > 0.0
                          ? std::abs(r.predicted.s - a.chsh_s) / (anchors.chsh_sigmas * r.predicted.sigma_s)
                          : std::numeric_limits<double>::infinity();
    return r;
  }

  // Best arm efficiency for one scenario at fixed (R, Vs).
  ScenarioResidual best_for(const EntanglementAnchor& a, double R, double Vs) const {
    const double hi = std::log(max_arm_efficiency(tmpl, a.arm_length_km) * 0.999);
    const double lo = std::log(1e-7);
    auto f = [&](double u) { return evaluate(a, R, Vs, std::exp(u)).worst(); };
    constexpr int kGrid = 48;
    int best = 0;
    double best_v = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= kGrid; ++i) {
      const double v = f(lo + (hi - lo) * i / kGrid);
      if (v < best_v) {
        best_v = v;
        best = i;
      }
    }
    const double step = (hi - lo) / kGrid;
    const double a_lo = std::max(lo, lo + step * (best - 1));
    const double a_hi = std::min(hi, lo + step * (best + 1));
    const auto m = boost::math::tools::brent_find_minima(f, a_lo, a_hi, 40);
    const double u = m.second <= best_v ? m.first : lo + step * best;
    return evaluate(a, R, Vs, std::exp(u));
  }

  double operator()(double log10_r, double vs, std::vector<ScenarioResidual>* out = nullptr) const {
    if (!(vs > 0.0 && vs <= 1.0)) return 1e9 + std::abs(vs);
    const double R = std::pow(10.0, log10_r);
    double worst = 0.0;
    if (out) out->clear();
    for (const auto& a : anchors.entanglement) {
      ScenarioResidual r = best_for(a, R, vs);
      worst = std::max(worst, r.worst());
      if (out) out->push_back(std::move(r));
    }
    return worst;
  }
};

// Nelder-Mead on two variables.
template <class F>
std::array<double, 2> nelder_mead_2d(F&& f, std::array<double, 2> x0, std::array<double, 2> step, int max_iter,
                                     double ftol) {
  std::array<std::array<double, 2>, 3> p{x0, {x0[0] + step[0], x0[1]}, {x0[0], x0[1] + step[1]}};
  std::array<double, 3> v{f(p[0]), f(p[1]), f(p[2])};
  for (int it = 0; it < max_iter; ++it) {
    std::array<int, 3> idx{0, 1, 2};
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] < v[b]; });
    const int b = idx[0], m = idx[1], w = idx[2];
    if (std::abs(v[w] - v[b]) <= ftol * (std::abs(v[b]) + 1e-12)) break;
    const std::array<double, 2> c{(p[b][0] + p[m][0]) / 2.0, (p[b][1] + p[m][1]) / 2.0};
    auto along = [&](double t) { return std::array<double, 2>{c[0] + t * (p[w][0] - c[0]), c[1] + t * (p[w][1] - c[1])}; };
    const auto xr = along(-1.0);
    const double fr = f(xr);
    if (fr < v[b]) {
      const auto xe = along(-2.0);
      const double fe = f(xe);
      if (fe < fr) {
        p[w] = xe;
        v[w] = fe;
      } else {
        p[w] = xr;
        v[w] = fr;
      }
    } else if (fr < v[m]) {
      p[w] = xr;
      v[w] = fr;
    } else {
      const auto xc = fr < v[w] ? along(-0.5) : along(0.5);
      const double fc = f(xc);
      if (fc < std::min(fr, v[w])) {
        p[w] = xc;
        v[w] = fc;
      } else {
        for (int k : {m, w}) {
          p[k] = {p[b][0] + 0.5 * (p[k][0] - p[b][0]), p[b][1] + 0.5 * (p[k][1] - p[b][1])};
          v[k] = f(p[k]);
        }
      }
    }
  }
  int best = 0;
  for (int k = 1; k < 3; ++k)
    if (v[k] < v[best]) best = k;
  return p[best];
}

}  // namespace detail

inline void check_rate_ordering(std::vector<EntanglementAnchor> anchors) {
  std::sort(anchors.begin(), anchors.end(),
            [](const auto& a, const auto& b) { return a.arm_length_km < b.arm_length_km; });
  for (std::size_t i = 1; i < anchors.size(); ++i) {
    if (anchors[i].arm_length_km == anchors[i - 1].arm_length_km) continue;
    if (anchors[i].coincidence_rate_cps >= anchors[i - 1].coincidence_rate_cps) {
      throw CalibrationError("contradictory anchors: coincidence rate does not decrease with length ('" +
                             anchors[i - 1].name + "' " + std::to_string(anchors[i - 1].coincidence_rate_cps) +
                             " cps at " + std::to_string(anchors[i - 1].arm_length_km) + " km per arm, '" +
                             anchors[i].name + "' " + std::to_string(anchors[i].coincidence_rate_cps) + " cps at " +
                             std::to_string(anchors[i].arm_length_km) + " km per arm)");
    }
  }
}

// CAR of the noise-characterization layout at a given length-of-flight.
inline double noise_layout_car(LinkScenario s, double length_of_flight_km, double window_ps) {
  s.fiber_alice.length_km = 0.5 * length_of_flight_km;
  return expected_link_metrics(s, window_ps).car;
}

inline CalibrationResult calibrate(const LinkScenario& entanglement_template, const LinkScenario& noise_template,
                                   const CalibrationAnchors& anchors) {
  anchors.validate();
  CalibrationResult out;
  out.raman = entanglement_template.raman;
  if (!anchors.raman_points.empty()) {
    out.raman = calibrate_raman(anchors.raman_points, anchors.relative_scale_1310);
    for (const auto& p : anchors.raman_points) {
      const double model =
          raman_noise_rate(out.raman, p.length_of_flight_km, entanglement_template.classical.tx_wavelength_nm);
      out.raman_relative_errors.push_back((model - p.noise_cps) / p.noise_cps);
    }
  }
  if (anchors.entanglement.empty()) return out;

  check_rate_ordering(anchors.entanglement);
  LinkScenario tmpl = entanglement_template;
  tmpl.raman = out.raman;
  detail::Objective obj{tmpl, anchors};

  double best = std::numeric_limits<double>::infinity();
  std::array<double, 2> x{6.0, 0.95};
  for (double lr = 5.0; lr <= 8.0 + 1e-9; lr += 0.2) {
    for (double vs = 0.88; vs <= 1.0 + 1e-9; vs += 0.01) {
      const double v = obj(lr, std::min(vs, 1.0));
      if (v < best) {
        best = v;
        x = {lr, std::min(vs, 1.0)};
      }
    }
  }
  x = detail::nelder_mead_2d([&](const std::array<double, 2>& p) { return obj(p[0], p[1]); }, x, {0.1, 0.005}, 200,
                             1e-9);
  out.max_residual = obj(x[0], x[1], &out.residuals);
  out.pair_rate_cps = std::pow(10.0, x[0]);
  out.source_visibility = x[1];

  if (out.max_residual > 1.0) {
    std::string msg = "calibration infeasible: worst normalized residual " + std::to_string(out.max_residual) + " > 1;";
    for (const auto& r : out.residuals) {
      msg += " " + r.name + " (rate " + std::to_string(r.rate_residual) + ", visibility " +
             std::to_string(r.visibility_residual) + ", chsh " + std::to_string(r.chsh_residual) + ")";
    }
    throw CalibrationError(msg);
  }

  // Shared coupling from the least lossy scenario; the rest becomes excess loss.
  double coupling = 0.0;
  for (const auto& r : out.residuals) {
    const double base = detail::max_arm_efficiency(tmpl, r.anchor.arm_length_km);
    coupling = std::max(coupling, r.arm_efficiency / base);
  }
  if (!(coupling > 0.0 && coupling <= 1.0)) throw CalibrationError("calibrated coupling efficiency outside (0, 1]");
  out.coupling_efficiency = coupling;
  for (auto& r : out.residuals) {
    const double base = detail::max_arm_efficiency(tmpl, r.anchor.arm_length_km) * coupling;
    r.extra_excess_loss_db = std::max(0.0, -10.0 * std::log10(r.arm_efficiency / base));
    LinkScenario s = detail::entanglement_candidate(tmpl, r.anchor, out.pair_rate_cps, out.source_visibility,
                                                    r.arm_efficiency);
    s.source.coupling_efficiency = coupling;
    s.fiber_alice.attenuation.excess_loss_db += r.extra_excess_loss_db;
    s.fiber_bob.attenuation.excess_loss_db += r.extra_excess_loss_db;
    s.validate();
    out.scenarios.push_back(s);
  }

  if (anchors.noise_car) {
    const NoiseCarAnchor& na = *anchors.noise_car;
    LinkScenario n = noise_template;
    n.name = na.name;
    n.topology = Topology::NoiseCharacterization;
    n.raman = out.raman;
    n.source.pair_rate_cps = out.pair_rate_cps;
    n.source.visibility = out.source_visibility;
    auto car_at = [&](double log_c) {
      LinkScenario t = n;
      t.source.coupling_efficiency = std::exp(log_c);
      return noise_layout_car(t, na.length_of_flight_km, anchors.window_ps) - na.car;
    };
    const double lo = std::log(1e-7), hi = 0.0;
    if (car_at(hi) < 0.0) {
      throw CalibrationError("noise anchor infeasible: CAR " + std::to_string(car_at(hi) + na.car) + " at " +
                             std::to_string(na.length_of_flight_km) + " km even with unit coupling");
    }
    if (car_at(lo) > 0.0) throw CalibrationError("noise anchor infeasible: CAR above target at minimal coupling");
    const auto root = boost::math::tools::bisect(
        car_at, lo, hi, [](double a, double b) { return std::abs(a - b) < 1e-12; });
    const double c = std::exp(0.5 * (root.first + root.second));
    n.source.coupling_efficiency = c;
    n.fiber_alice.length_km = na.fiber_length_km;
    n.validate();
    out.noise_coupling_efficiency = c;
    out.noise_car_at_anchor = noise_layout_car(n, na.length_of_flight_km, anchors.window_ps);
    out.scenarios.push_back(n);
  }
  return out;
}

}  // namespace coexist
