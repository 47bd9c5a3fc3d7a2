#pragma once

// Scenario files (TOML, one table per component) and the canonical JSON form
// used for digests. Keys missing from a file keep their struct defaults;
// unknown keys are rejected so that typos cannot silently fall back.

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>
#include <toml.hpp>

#include "coexist/errors.hpp"
#include "coexist/scenario.hpp"

namespace coexist {

namespace detail {

class TomlReader {
 public:
  TomlReader(const toml::table& t, std::string path) : t_(t), path_(std::move(path)) {}

  void number(std::string_view key, double& out) {
    seen_.insert(std::string(key));
    const toml::node* n = t_.get(key);
    if (!n) return;
    if (auto v = n->value<double>()) {
      out = *v;
      return;
    }
    fail(key, "expected a number");
  }

  void text(std::string_view key, std::string& out) {
    seen_.insert(std::string(key));
    const toml::node* n = t_.get(key);
    if (!n) return;
    if (auto v = n->value<std::string>()) {
      out = *v;
      return;
    }
    fail(key, "expected a string");
  }

  const toml::table* table(std::string_view key) {
    seen_.insert(std::string(key));
    const toml::node* n = t_.get(key);
    if (!n) return nullptr;
    if (!n->is_table()) fail(key, "expected a table");
    return n->as_table();
  }

  std::string child(std::string_view key) const { return path_.empty() ? std::string(key) : path_ + "." + std::string(key); }

  void finish() const {
    for (const auto& [k, v] : t_) {
      if (!seen_.count(std::string(k.str()))) {
        throw ConfigError("unknown scenario key '" + child(k.str()) + "' (line " +
                          std::to_string(v.source().begin.line) + ")");
      }
    }
  }

 private:
  [[noreturn]] void fail(std::string_view key, const std::string& msg) const {
    const toml::node* n = t_.get(key);
    throw ConfigError("scenario key '" + child(key) + "': " + msg + " (line " +
                      std::to_string(n ? n->source().begin.line : 0) + ")");
  }

  const toml::table& t_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
void with_table(TomlReader& parent, std::string_view key, F&& f) {
  if (const toml::table* t = parent.table(key)) {
    TomlReader r(*t, parent.child(key));
    f(r);
    r.finish();
  }
}

inline void read_fiber(TomlReader& r, FiberSpec& f) {
  r.number("length_km", f.length_km);
  r.number("c_band_db_per_km", f.attenuation.c_band_db_per_km);
  r.number("o_band_db_per_km", f.attenuation.o_band_db_per_km);
  r.number("excess_loss_db", f.attenuation.excess_loss_db);
  r.number("dispersion_spread_ps_per_km", f.dispersion_spread_ps_per_km);
  r.number("group_index", f.group_index);
}

inline void read_detector(TomlReader& r, DetectorSpec& d) {
  r.number("efficiency", d.efficiency);
  r.number("dark_rate_cps", d.dark_rate_cps);
  r.number("jitter_sigma_ps", d.jitter_sigma_ps);
  r.number("dead_time_ps", d.dead_time_ps);
}

inline void read_clock(TomlReader& r, ClockSpec& c) {
  r.number("initial_offset_ps", c.initial_offset_ps);
  r.number("drift_ppm", c.drift_ppm);
  r.number("random_walk_ps_per_sqrt_s", c.random_walk_ps_per_sqrt_s);
}

inline void read_analyzer(TomlReader& r, AnalyzerSetting& a) {
  r.number("basis_angle_rad", a.basis_angle_rad);
  r.number("circular_phase_rad", a.circular_phase_rad);
}

}  // namespace detail

inline LinkScenario scenario_from_toml(const toml::table& root) {
  LinkScenario s;
  detail::TomlReader r(root, "");
  r.text("name", s.name);
  std::string topo = to_string(s.topology);
  r.text("topology", topo);
  s.topology = topology_from_string(topo);
  r.number("coincidence_window_ps", s.coincidence_window_ps);

  detail::with_table(r, "source", [&](detail::TomlReader& t) {
    t.number("pair_rate_cps", s.source.pair_rate_cps);
    t.number("coupling_efficiency", s.source.coupling_efficiency);
    t.number("visibility", s.source.visibility);
    std::string target = to_string(s.source.target.which);
    t.text("target", target);
    s.source.target.which = bell_state_from_string(target);
    t.number("target_phase_rad", s.source.target.phase_rad);
  });
  detail::with_table(r, "fiber_alice", [&](detail::TomlReader& t) { detail::read_fiber(t, s.fiber_alice); });
  detail::with_table(r, "fiber_bob", [&](detail::TomlReader& t) { detail::read_fiber(t, s.fiber_bob); });
  detail::with_table(r, "classical", [&](detail::TomlReader& t) {
    t.number("tx_wavelength_nm", s.classical.tx_wavelength_nm);
    t.number("rx_wavelength_nm", s.classical.rx_wavelength_nm);
    t.number("launch_power_dbm", s.classical.launch_power_dbm);
    t.number("receiver_sensitivity_dbm", s.classical.receiver_sensitivity_dbm);
    t.number("path_excess_loss_db", s.classical.path_excess_loss_db);
  });
  detail::with_table(r, "raman", [&](detail::TomlReader& t) {
    t.number("amplitude_cps", s.raman.amplitude_cps);
    t.number("growth_per_km", s.raman.growth_per_km);
    t.number("relative_scale_1310", s.raman.relative_scale_1310);
  });
  detail::with_table(r, "detector_alice", [&](detail::TomlReader& t) { detail::read_detector(t, s.detector_alice); });
  detail::with_table(r, "detector_bob", [&](detail::TomlReader& t) { detail::read_detector(t, s.detector_bob); });
  detail::with_table(r, "clock_alice", [&](detail::TomlReader& t) { detail::read_clock(t, s.clock_alice); });
  detail::with_table(r, "clock_bob", [&](detail::TomlReader& t) { detail::read_clock(t, s.clock_bob); });
  detail::with_table(r, "analyzer_alice", [&](detail::TomlReader& t) { detail::read_analyzer(t, s.analyzer_alice); });
  detail::with_table(r, "analyzer_bob", [&](detail::TomlReader& t) { detail::read_analyzer(t, s.analyzer_bob); });
  detail::with_table(r, "sync", [&](detail::TomlReader& t) {
    t.number("exchange_interval_s", s.sync.exchange_interval_s);
    t.number("timestamp_jitter_ps", s.sync.timestamp_jitter_ps);
    t.number("proportional_gain", s.sync.proportional_gain);
    t.number("integral_gain", s.sync.integral_gain);
    t.number("asymmetry_ps_per_km", s.sync.asymmetry_ps_per_km);
    t.number("asymmetry_correction", s.sync.asymmetry_correction);
    t.number("residual_target_ps", s.sync.residual_target_ps);
    t.number("turnaround_ps", s.sync.turnaround_ps);
  });
  r.finish();
  s.validate();
  return s;
}

inline LinkScenario parse_scenario(std::string_view text, std::string_view source_name = "<scenario>") {
  try {
    return scenario_from_toml(toml::parse(text, source_name));
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source_name << ":" << e.source().begin.line << ":" << e.source().begin.column << ": "
        << e.description();
    throw ConfigError(msg.str());
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline LinkScenario load_scenario(const std::string& path) { return parse_scenario(read_text_file(path), path); }

namespace detail {

inline toml::table fiber_table(const FiberSpec& f) {
  return toml::table{{"length_km", f.length_km},
                     {"c_band_db_per_km", f.attenuation.c_band_db_per_km},
                     {"o_band_db_per_km", f.attenuation.o_band_db_per_km},
                     {"excess_loss_db", f.attenuation.excess_loss_db},
                     {"dispersion_spread_ps_per_km", f.dispersion_spread_ps_per_km},
                     {"group_index", f.group_index}};
}

inline toml::table detector_table(const DetectorSpec& d) {
  return toml::table{{"efficiency", d.efficiency},
                     {"dark_rate_cps", d.dark_rate_cps},
                     {"jitter_sigma_ps", d.jitter_sigma_ps},
                     {"dead_time_ps", d.dead_time_ps}};
}

inline toml::table clock_table(const ClockSpec& c) {
  return toml::table{{"initial_offset_ps", c.initial_offset_ps},
                     {"drift_ppm", c.drift_ppm},
                     {"random_walk_ps_per_sqrt_s", c.random_walk_ps_per_sqrt_s}};
}

inline toml::table analyzer_table(const AnalyzerSetting& a) {
  return toml::table{{"basis_angle_rad", a.basis_angle_rad}, {"circular_phase_rad", a.circular_phase_rad}};
}

}  // namespace detail

inline toml::table scenario_to_toml(const LinkScenario& s) {
  toml::table root{{"name", s.name},
                   {"topology", to_string(s.topology)},
                   {"coincidence_window_ps", s.coincidence_window_ps}};
  root.insert("source", toml::table{{"pair_rate_cps", s.source.pair_rate_cps},
                                    {"coupling_efficiency", s.source.coupling_efficiency},
                                    {"visibility", s.source.visibility},
                                    {"target", to_string(s.source.target.which)},
                                    {"target_phase_rad", s.source.target.phase_rad}});
  root.insert("fiber_alice", detail::fiber_table(s.fiber_alice));
  root.insert("fiber_bob", detail::fiber_table(s.fiber_bob));
  root.insert("classical", toml::table{{"tx_wavelength_nm", s.classical.tx_wavelength_nm},
                                       {"rx_wavelength_nm", s.classical.rx_wavelength_nm},
                                       {"launch_power_dbm", s.classical.launch_power_dbm},
                                       {"receiver_sensitivity_dbm", s.classical.receiver_sensitivity_dbm},
                                       {"path_excess_loss_db", s.classical.path_excess_loss_db}});
  root.insert("raman", toml::table{{"amplitude_cps", s.raman.amplitude_cps},
                                   {"growth_per_km", s.raman.growth_per_km},
                                   {"relative_scale_1310", s.raman.relative_scale_1310}});
  root.insert("detector_alice", detail::detector_table(s.detector_alice));
  root.insert("detector_bob", detail::detector_table(s.detector_bob));
  root.insert("clock_alice", detail::clock_table(s.clock_alice));
  root.insert("clock_bob", detail::clock_table(s.clock_bob));
  root.insert("analyzer_alice", detail::analyzer_table(s.analyzer_alice));
  root.insert("analyzer_bob", detail::analyzer_table(s.analyzer_bob));
  root.insert("sync", toml::table{{"exchange_interval_s", s.sync.exchange_interval_s},
                                  {"timestamp_jitter_ps", s.sync.timestamp_jitter_ps},
                                  {"proportional_gain", s.sync.proportional_gain},
                                  {"integral_gain", s.sync.integral_gain},
                                  {"asymmetry_ps_per_km", s.sync.asymmetry_ps_per_km},
                                  {"asymmetry_correction", s.sync.asymmetry_correction},
                                  {"residual_target_ps", s.sync.residual_target_ps},
                                  {"turnaround_ps", s.sync.turnaround_ps}});
  return root;
}

inline std::string scenario_to_toml_string(const LinkScenario& s) {
  std::ostringstream ss;
  ss << scenario_to_toml(s) << "\n";
  return ss.str();
}

namespace detail {

inline nlohmann::json toml_to_json(const toml::node& n) {
  if (const auto* t = n.as_table()) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v);
    return j;
  }
  if (const auto* a = n.as_array()) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& v : *a) j.push_back(toml_to_json(v));
    return j;
  }
  if (auto v = n.value_exact<std::string>()) return *v;
  if (auto v = n.value_exact<bool>()) return *v;
  if (auto v = n.value<double>()) return *v;
  return nullptr;
}

}  // namespace detail

// Sorted keys, every numeric field as a double: independent of the order and
// spelling (1 vs 1.0) of the source file.
inline nlohmann::json scenario_to_json(const LinkScenario& s) { return detail::toml_to_json(scenario_to_toml(s)); }

inline std::string canonical_scenario_string(const LinkScenario& s) { return scenario_to_json(s).dump(); }

}  // namespace coexist
