#pragma once

// End-to-end pipelines: synthesis, clock discipline, coincidence counting and
// statistical reduction for each reproducible artifact.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "coexist/analysis.hpp"
#include "coexist/calibration.hpp"
#include "coexist/channel_model.hpp"
#include "coexist/coincidence.hpp"
#include "coexist/errors.hpp"
#include "coexist/event_synthesis.hpp"
#include "coexist/manifest.hpp"
#include "coexist/parallel.hpp"
#include "coexist/rng.hpp"
#include "coexist/scenario.hpp"
#include "coexist/scenario_io.hpp"
#include "coexist/sync.hpp"

namespace coexist {

// Shortest round-trip decimal form; identical on every conforming platform.
inline std::string fmt_num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline nlohmann::json json_num(double x) {
  if (std::isfinite(x)) return x;
  return fmt_num(x);
}

class Csv {
 public:
  explicit Csv(std::initializer_list<std::string> header) { row_strings(std::vector<std::string>(header)); }

  template <class... T>
  void row(const T&... v) {
    std::vector<std::string> cells{cell(v)...};
    row_strings(cells);
  }

  const std::string& str() const { return text_; }

 private:
  static std::string cell(double v) { return fmt_num(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(std::uint64_t v) { return std::to_string(v); }
  static std::string cell(std::int64_t v) { return std::to_string(v); }
  static std::string cell(bool v) { return v ? "true" : "false"; }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }

  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text_ += ',';
      text_ += cells[i];
    }
    text_ += '\n';
  }

  std::string text_;
};

// ---------------------------------------------------------------- scenarios

struct ScenarioSet {
  std::vector<LinkScenario> scenarios;

  std::vector<LinkScenario> entanglement() const {
    std::vector<LinkScenario> out;
    for (const auto& s : scenarios)
      if (!s.noise_characterization()) out.push_back(s);
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& a, const auto& b) { return a.length_of_flight_km() < b.length_of_flight_km(); });
    return out;
  }

  const LinkScenario& noise() const {
    for (const auto& s : scenarios)
      if (s.noise_characterization()) return s;
    throw ConfigError("scenario set has no noise_characterization scenario");
  }

  // Entanglement scenario with the given length-of-flight.
  const LinkScenario& entanglement_at(double lof_km) const {
    for (const auto& s : scenarios)
      if (!s.noise_characterization() && std::abs(s.length_of_flight_km() - lof_km) < 1e-6) return s;
    throw ConfigError("scenario set has no entanglement scenario at " + fmt_num(lof_km) + " km length-of-flight");
  }
};

// A file loads one scenario; a directory loads every *.toml in it, by name.
inline ScenarioSet load_scenario_set(const std::string& path) {
  namespace fs = std::filesystem;
  ScenarioSet set;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path))
      if (e.is_regular_file() && e.path().extension() == ".toml") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) set.scenarios.push_back(load_scenario(f.string()));
  } else {
    set.scenarios.push_back(load_scenario(path));
  }
  if (set.scenarios.empty()) throw ConfigError("no scenarios found at '" + path + "'");
  return set;
}

// ---------------------------------------------------------------- one run

struct LinkRun {
  TagStream alice;
  TagStream bob;  // on the leader's time base when the clocks needed discipline
  GroundTruth truth;
  std::optional<SyncSession> sync;
};

inline constexpr double kSyncWarmupExchanges = 30.0;

// Synthesizes a run and, unless both nodes already share a time base,
// disciplines Bob's tags onto Alice's clock with a sync session that locked
// before the run started.
inline LinkRun simulate_link(const LinkScenario& s, double duration_s, std::uint64_t seed) {
  SynthesisResult r = synthesize_run(s, duration_s, seed);
  LinkRun run;
  run.truth = std::move(r.truth);
  run.alice = std::move(r.alice);
  const bool shared = s.noise_characterization() || (s.clock_alice.is_ideal() && s.clock_bob.is_ideal());
  if (shared) {
    run.bob = std::move(r.bob);
    return run;
  }
  SyncSessionOptions opt;
  opt.start_s = -kSyncWarmupExchanges * s.sync.exchange_interval_s;
  opt.settle_fraction = 0.5;
  SyncSession session =
      run_sync_session(s, r.clock_alice, r.clock_bob, duration_s, s.sync.exchange_interval_s, derive_seed(seed, 9), opt);
  run.bob = session.correction.apply(r.bob);
  run.sync = std::move(session);
  return run;
}

inline constexpr std::int64_t kPeakSearchRangePs = 50000;
inline constexpr std::int64_t kPeakSearchBinPs = 50;

// Alice at H, Bob at the angle of maximum correlation.
inline LinkScenario with_aligned_analyzers(LinkScenario s) {
  if (s.has_analyzers()) {
    s.analyzer_alice = AnalyzerSetting::H();
    s.analyzer_bob = AnalyzerSetting::linear(fringe_extrema(s.source.state(), s.analyzer_alice).argmax_rad);
  }
  return s;
}

// Delay of the coincidence peak from a run at the strongest-correlation setting.
inline double align_delay(const LinkScenario& s, double duration_s, std::uint64_t seed) {
  const LinkRun run = simulate_link(with_aligned_analyzers(s), duration_s, seed);
  const auto ta = run.alice.times();
  const auto tb = run.bob.times();
  return locate_peak_delay(ta, tb, kPeakSearchRangePs, kPeakSearchBinPs, 0.5 * s.coincidence_window_ps);
}

inline CoincidenceWindow window_for(const LinkScenario& s, double delay_ps) {
  return {static_cast<std::int64_t>(std::llround(s.coincidence_window_ps)),
          static_cast<std::int64_t>(std::llround(delay_ps))};
}

// ---------------------------------------------------------------- fringes

struct FringeRecipeOptions {
  int bob_points = 37;  // evenly spaced over [0, pi], both ends included
  double integration_s = 1.0;
  double alignment_s = 5.0;
};

struct ScenarioFringes {
  LinkScenario scenario;
  double delay_ps = 0.0;
  std::vector<FringeScan> scans;
  std::vector<FringeFit> fits;
  ChshResult chsh;
  double mean_visibility = 0.0;
  FringePrediction predicted;
};

inline ScenarioFringes run_fringes(const LinkScenario& s, std::uint64_t seed, const FringeRecipeOptions& opt = {}) {
  if (!s.has_analyzers()) throw ConfigError("fringes need an entanglement_distribution scenario");
  if (opt.bob_points < 6) throw ConfigError("fringes need at least 6 Bob angles");
  ScenarioFringes out;
  out.scenario = s;
  out.delay_ps = align_delay(s, opt.alignment_s, derive_seed(seed, 0));
  const CoincidenceWindow w = window_for(s, out.delay_ps);

  const std::size_t nb = static_cast<std::size_t>(opt.bob_points);
  const std::size_t n = kFringeAliceBases.size() * nb;
  const auto counts = parallel_map<std::uint64_t>(n, [&](std::size_t i) {
    const std::size_t k = i / nb, j = i % nb;
    LinkScenario p = s;
    p.analyzer_alice = AnalyzerSetting::linear(kFringeAliceBases[k]);
    p.analyzer_bob = AnalyzerSetting::linear(kPi * static_cast<double>(j) / static_cast<double>(nb - 1));
    const LinkRun run = simulate_link(p, opt.integration_s, derive_seed(seed, 1 + i));
    return count_coincidences(run.alice.times(), run.bob.times(), w);
  });

  for (std::size_t k = 0; k < kFringeAliceBases.size(); ++k) {
    FringeScan scan;
    scan.alice_basis_rad = kFringeAliceBases[k];
    for (std::size_t j = 0; j < nb; ++j) {
      scan.points.push_back({kPi * static_cast<double>(j) / static_cast<double>(nb - 1),
                             static_cast<double>(counts[k * nb + j]), opt.integration_s});
    }
    out.fits.push_back(fit_fringe(scan));
    out.scans.push_back(std::move(scan));
  }
  double v = 0.0;
  for (const auto& f : out.fits) v += f.visibility;
  out.mean_visibility = v / static_cast<double>(out.fits.size());
  out.chsh = chsh_from_fringes(out.fits, optimal_chsh_angles(s.source.target), opt.integration_s);
  out.predicted = predict_fringes(s, s.coincidence_window_ps, opt.integration_s);
  return out;
}

// ---------------------------------------------------------------- tomography

struct TomographyRecipeOptions {
  double min_total_coincidences = 20000.0;
  double alignment_s = 5.0;
};

struct ScenarioTomography {
  LinkScenario scenario;
  double delay_ps = 0.0;
  double integration_s = 0.0;
  TomographyData data;
  LinearTomographyResult linear;
  TomographyResult mle;
};

inline ScenarioTomography run_tomography(const LinkScenario& s, std::uint64_t seed,
                                         const TomographyRecipeOptions& opt = {}) {
  if (!s.has_analyzers()) throw ConfigError("tomography needs an entanglement_distribution scenario");
  ScenarioTomography out;
  out.scenario = s;
  out.delay_ps = align_delay(s, opt.alignment_s, derive_seed(seed, 0));
  const CoincidenceWindow w = window_for(s, out.delay_ps);
  const auto settings = canonical_tomography_settings();

  double total_rate = 0.0;
  for (const auto& [a, b] : settings) total_rate += expected_coincidence_rate(s, a, b, s.coincidence_window_ps);
  if (!(total_rate > 0.0)) throw AnalysisError("tomography: expected coincidence rate is zero");
  out.integration_s = std::max(1.0, std::ceil(opt.min_total_coincidences / total_rate));

  const auto counts = parallel_map<std::uint64_t>(settings.size(), [&](std::size_t i) {
    LinkScenario p = s;
    p.analyzer_alice = settings[i].first;
    p.analyzer_bob = settings[i].second;
    const LinkRun run = simulate_link(p, out.integration_s, derive_seed(seed, 1 + i));
    return count_coincidences(run.alice.times(), run.bob.times(), w);
  });
  for (std::size_t i = 0; i < settings.size(); ++i) {
    out.data.records.push_back({settings[i].first, settings[i].second, static_cast<double>(counts[i]), out.integration_s});
  }
  out.linear = tomography_linear(out.data);
  out.mle = tomography_mle(out.data, s.source.target);
  return out;
}

// ---------------------------------------------------------------- CAR vs length

struct CarLengthRow {
  double length_of_flight_km = 0.0;
  double raman_cps = 0.0;
  double singles_cps = 0.0;
  double true_cps = 0.0;
  double accidental_cps = 0.0;
  double car = 0.0;
};

inline std::vector<CarLengthRow> car_vs_length(const LinkScenario& noise, const std::vector<double>& lofs_km,
                                               double window_ps) {
  if (!noise.noise_characterization()) throw ConfigError("CAR sweep needs a noise_characterization scenario");
  std::vector<CarLengthRow> rows;
  for (double lof : lofs_km) {
    LinkScenario s = noise;
    s.fiber_alice.length_km = 0.5 * lof;
    const LinkMetrics m = expected_link_metrics(s, window_ps);
    rows.push_back({lof, s.raman_rate_cps(), m.singles_a_cps, m.true_coincidence_cps, m.accidental_cps, m.car});
  }
  return rows;
}

inline std::vector<double> default_car_lengths() {
  std::vector<double> v;
  for (int l = 10; l <= 200; l += 10) v.push_back(l);
  return v;
}

// ---------------------------------------------------------------- window sweep

struct WindowSweepOptions {
  std::vector<double> windows_ps{100, 200, 300, 400, 500, 600, 700, 800, 900, 1000, 1250, 1500,
                                 1750, 2000, 2500, 3000, 3500, 4000, 4500, 5000};
  double min_true_pairs = 20000.0;
  int accidental_shifts = 10;
};

struct WindowSweepRow {
  double window_ps = 0.0;
  std::uint64_t coincidences = 0;
  double accidentals = 0.0;
  double car = 0.0;
  double coincidence_rate_cps = 0.0;
  double analytic_coincidence_rate_cps = 0.0;
  double analytic_car = 0.0;
};

struct WindowSweep {
  LinkScenario scenario;
  double duration_s = 0.0;
  double delay_ps = 0.0;
  std::uint64_t true_pairs_recorded = 0;
  std::vector<WindowSweepRow> rows;
};

inline WindowSweep run_window_sweep(const LinkScenario& scenario, std::uint64_t seed,
                                    const WindowSweepOptions& opt = {}) {
  if (opt.windows_ps.empty()) throw ConfigError("window sweep needs at least one window");
  const LinkScenario s = with_aligned_analyzers(scenario);
  WindowSweep out;
  out.scenario = s;
  const double true_rate = expected_link_metrics(s, *std::max_element(opt.windows_ps.begin(), opt.windows_ps.end()))
                               .true_coincidence_cps;
  if (!(true_rate > 0.0)) throw AnalysisError("window sweep: expected true coincidence rate is zero");
  out.duration_s = std::max(1.0, std::ceil(opt.min_true_pairs / true_rate));
  const LinkRun run = simulate_link(s, out.duration_s, seed);
  out.true_pairs_recorded = run.truth.true_pairs_recorded;
  const auto ta = run.alice.times();
  const auto tb = run.bob.times();
  out.delay_ps = locate_peak_delay(ta, tb, kPeakSearchRangePs, kPeakSearchBinPs, 0.5 * s.coincidence_window_ps);
  const double wmax = *std::max_element(opt.windows_ps.begin(), opt.windows_ps.end());
  const std::int64_t shift = default_accidental_shift(static_cast<std::int64_t>(std::llround(wmax)));
  for (double wps : opt.windows_ps) {
    LinkScenario sw = s;
    sw.coincidence_window_ps = wps;
    const CoincidenceWindow w = window_for(sw, out.delay_ps);
    WindowSweepRow row;
    row.window_ps = wps;
    row.coincidences = count_coincidences(ta, tb, w);
    row.accidentals = estimate_accidentals_mean(ta, tb, w, shift, opt.accidental_shifts);
    row.car = row.accidentals > 0.0 ? static_cast<double>(row.coincidences) / row.accidentals
                                    : std::numeric_limits<double>::infinity();
    row.coincidence_rate_cps = static_cast<double>(row.coincidences) / out.duration_s;
    const LinkMetrics m = expected_link_metrics(s, wps);
    row.analytic_coincidence_rate_cps = m.total_coincidence_cps();
    row.analytic_car = m.car;
    out.rows.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------- link budget

struct LinkBudgetRow {
  std::string transceiver;
  double tx_wavelength_nm = 0.0;
  double rx_wavelength_nm = 0.0;
  double receiver_sensitivity_dbm = 0.0;
  double node_separation_km = 0.0;
  double margin_db = 0.0;
  bool up = false;
};

struct Transceiver {
  std::string label;
  double tx_nm;
  double rx_nm;
  double sensitivity_dbm;
};

inline std::vector<Transceiver> default_transceivers() {
  return {{"1310/1290", 1310.0, 1290.0, -17.0}, {"1290/1270", 1290.0, 1270.0, -41.0}};
}

inline std::vector<double> default_separations_km() { return {0.25, 25.0, 50.0, 100.0}; }

// Feasibility of the classical link between the two receivers, whose fiber
// path is the sum of both arms.
inline std::vector<LinkBudgetRow> link_budget_matrix(const LinkScenario& base, const std::vector<Transceiver>& xcvrs,
                                                     const std::vector<double>& separations_km) {
  std::vector<LinkBudgetRow> rows;
  for (const auto& x : xcvrs) {
    ClassicalLinkSpec c = base.classical;
    c.tx_wavelength_nm = x.tx_nm;
    c.rx_wavelength_nm = x.rx_nm;
    c.receiver_sensitivity_dbm = x.sensitivity_dbm;
    c.validate();
    for (double L : separations_km) {
      LinkScenario s = base;
      s.topology = Topology::EntanglementDistribution;
      s.classical = c;
      s.fiber_alice.length_km = 0.5 * L;
      s.fiber_bob.length_km = 0.5 * L;
      const double m = classical_link_margin(c, s.classical_path());
      rows.push_back({x.label, x.tx_nm, x.rx_nm, x.sensitivity_dbm, L, m, m >= 0.0});
    }
  }
  return rows;
}

// ---------------------------------------------------------------- sync demo

struct SyncDemoOptions {
  double duration_s = 600.0;
  double peak_run_s = 60.0;
};

struct SyncDemo {
  LinkScenario scenario;
  SyncSession session;
  double peak_delay_ps = 0.0;
  double true_delay_ps = 0.0;
  double peak_error_ps = 0.0;
  std::uint64_t peak_true_pairs = 0;
  double peak_run_sync_sigma_ps = 0.0;
};

inline SyncDemo run_sync_demo(const LinkScenario& s, std::uint64_t seed, const SyncDemoOptions& opt = {}) {
  SyncDemo out;
  out.scenario = s;
  out.session = run_sync_session(s, opt.duration_s, s.sync.exchange_interval_s, seed);

  const LinkRun run = simulate_link(with_aligned_analyzers(s), opt.peak_run_s, derive_seed(seed, 1));
  out.true_delay_ps = run.truth.differential_delay_ps;
  out.peak_true_pairs = run.truth.true_pairs_recorded;
  out.peak_delay_ps = locate_peak_delay(run.alice.times(), run.bob.times(), kPeakSearchRangePs, kPeakSearchBinPs,
                                        0.5 * s.coincidence_window_ps);
  out.peak_error_ps = out.peak_delay_ps - out.true_delay_ps;
  if (run.sync) out.peak_run_sync_sigma_ps = run.sync->steady_sigma_ps;
  return out;
}

// ---------------------------------------------------------------- artifacts

inline const std::vector<std::string>& reproducible_artifacts() {
  static const std::vector<std::string> names{"fringes",   "visibility_summary", "car_vs_length", "window_sweep",
                                              "tomography", "link_budget", "sync_demo"};
  return names;
}

inline std::string scenario_set_digest(const ScenarioSet& set) {
  std::string all;
  for (const auto& s : set.scenarios) all += scenario_digest(s) + "\n";
  return sha256_hex(all);
}

inline nlohmann::json fit_json(const FringeFit& f) {
  return {{"alice_basis_rad", f.alice_basis_rad}, {"amplitude_cps", f.amplitude},  {"baseline_cps", f.baseline},
          {"phase_rad", f.phase_rad},             {"visibility", f.visibility},    {"chi2", f.chi2},
          {"iterations", f.iterations},           {"converged", f.converged}};
}

inline nlohmann::json chsh_json(const ChshResult& c) {
  return {{"s", c.s}, {"sigma", c.sigma}, {"violates_local_bound", c.s - 2.0 > 3.0 * c.sigma}};
}

inline std::vector<ScenarioFringes> fringes_for_set(const ScenarioSet& set, std::uint64_t seed) {
  std::vector<ScenarioFringes> out;
  const auto ent = set.entanglement();
  if (ent.empty()) throw ConfigError("scenario set has no entanglement_distribution scenarios");
  for (std::size_t i = 0; i < ent.size(); ++i) out.push_back(run_fringes(ent[i], derive_seed(seed, i)));
  return out;
}

inline void emit_fringes(const ScenarioSet& set, std::uint64_t seed, OutputDir& out) {
  nlohmann::json summary = nlohmann::json::object();
  for (const auto& f : fringes_for_set(set, seed)) {
    Csv csv{"alice_basis_rad", "bob_angle_rad", "coincidences", "integration_s", "fit_rate_cps"};
    for (std::size_t k = 0; k < f.scans.size(); ++k)
      for (const auto& p : f.scans[k].points)
        csv.row(f.scans[k].alice_basis_rad, p.bob_angle_rad, p.count, p.integration_s, f.fits[k].rate(p.bob_angle_rad));
    out.write("fringes_" + f.scenario.name + ".csv", csv.str());
    nlohmann::json fits = nlohmann::json::array();
    for (const auto& fit : f.fits) fits.push_back(fit_json(fit));
    summary[f.scenario.name] = {{"delay_ps", f.delay_ps}, {"fits", fits}, {"mean_visibility", f.mean_visibility}};
  }
  out.write_json("fringes_summary.json", summary);
}

inline void emit_visibility_summary(const ScenarioSet& set, std::uint64_t seed, OutputDir& out) {
  Csv csv{"scenario", "length_of_flight_km", "alice_basis_rad", "visibility", "predicted_visibility"};
  nlohmann::json summary = nlohmann::json::object();
  for (const auto& f : fringes_for_set(set, seed)) {
    nlohmann::json vis = nlohmann::json::array();
    for (std::size_t k = 0; k < f.fits.size(); ++k) {
      csv.row(f.scenario.name, f.scenario.length_of_flight_km(), f.fits[k].alice_basis_rad, f.fits[k].visibility,
              f.predicted.visibilities[k]);
      vis.push_back(f.fits[k].visibility);
    }
    summary[f.scenario.name] = {{"length_of_flight_km", f.scenario.length_of_flight_km()},
                                {"visibilities", vis},
                                {"mean_visibility", f.mean_visibility},
                                {"chsh", chsh_json(f.chsh)},
                                {"predicted_mean_visibility", f.predicted.mean_visibility},
                                {"predicted_s", f.predicted.s},
                                {"max_coincidence_rate_cps", f.fits[1].amplitude + f.fits[1].baseline}};
  }
  out.write("visibility_summary.csv", csv.str());
  out.write_json("visibility_summary.json", summary);
}

inline void emit_car_vs_length(const ScenarioSet& set, OutputDir& out) {
  const LinkScenario& n = set.noise();
  const auto rows = car_vs_length(n, default_car_lengths(), n.coincidence_window_ps);
  Csv csv{"length_of_flight_km", "raman_cps", "singles_cps", "true_coincidence_cps", "accidental_cps", "car"};
  bool monotone = true;
  double car_120 = std::numeric_limits<double>::quiet_NaN();
  double last_above_10 = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    csv.row(r.length_of_flight_km, r.raman_cps, r.singles_cps, r.true_cps, r.accidental_cps, r.car);
    if (i > 0 && r.car > rows[i - 1].car) monotone = false;
    if (std::abs(r.length_of_flight_km - 120.0) < 1e-9) car_120 = r.car;
    if (r.car >= 10.0) last_above_10 = r.length_of_flight_km;
  }
  out.write("car_vs_length.csv", csv.str());
  out.write_json("car_vs_length_summary.json", {{"scenario", n.name},
                                                {"window_ps", n.coincidence_window_ps},
                                                {"car_at_120km", json_num(car_120)},
                                                {"longest_lof_with_car_at_least_10_km", last_above_10},
                                                {"monotone_decreasing", monotone}});
}

// Net (accidental-subtracted) rate at the given window relative to the widest window.
inline double plateau_fraction(const WindowSweep& w, double window_ps) {
  const auto net = [&](const WindowSweepRow& r) { return static_cast<double>(r.coincidences) - r.accidentals; };
  const WindowSweepRow* at = nullptr;
  for (const auto& r : w.rows)
    if (std::abs(r.window_ps - window_ps) < 1e-9) at = &r;
  if (!at) throw ConfigError("window " + fmt_num(window_ps) + " ps is not part of the sweep");
  const double top = net(w.rows.back());
  return top > 0.0 ? net(*at) / top : std::numeric_limits<double>::quiet_NaN();
}

inline bool coincidences_non_decreasing(const WindowSweep& w) {
  for (std::size_t i = 1; i < w.rows.size(); ++i)
    if (w.rows[i].coincidences < w.rows[i - 1].coincidences) return false;
  return true;
}

inline bool car_non_increasing_beyond(const WindowSweep& w, double window_ps) {
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& r : w.rows) {
    if (r.window_ps < window_ps) continue;
    if (r.car > prev) return false;
    prev = r.car;
  }
  return true;
}

inline void emit_window_sweep(const ScenarioSet& set, std::uint64_t seed, OutputDir& out) {
  const WindowSweep w = run_window_sweep(set.noise(), seed);
  Csv csv{"window_ps", "coincidences", "accidentals", "car", "coincidence_rate_cps", "analytic_coincidence_rate_cps",
          "analytic_car"};
  for (const auto& r : w.rows)
    csv.row(r.window_ps, r.coincidences, r.accidentals, r.car, r.coincidence_rate_cps, r.analytic_coincidence_rate_cps,
            r.analytic_car);
  out.write("window_sweep.csv", csv.str());
  out.write_json("window_sweep_summary.json",
                 {{"scenario", w.scenario.name},
                  {"length_of_flight_km", w.scenario.length_of_flight_km()},
                  {"duration_s", w.duration_s},
                  {"delay_ps", w.delay_ps},
                  {"true_pairs_recorded", w.true_pairs_recorded},
                  {"net_rate_fraction_at_1500ps", json_num(plateau_fraction(w, 1500.0))},
                  {"coincidences_non_decreasing", coincidences_non_decreasing(w)},
                  {"car_non_increasing_beyond_1000ps", car_non_increasing_beyond(w, 1000.0)}});
}

inline nlohmann::json density_json(const Matrix4c& rho) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < 4; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < 4; ++j) row.push_back(nlohmann::json::array({rho(i, j).real(), rho(i, j).imag()}));
    rows.push_back(row);
  }
  return rows;
}

inline void emit_tomography(const ScenarioSet& set, std::uint64_t seed, OutputDir& out) {
  Csv csv{"scenario", "setting", "coincidences", "integration_s"};
  nlohmann::json summary = nlohmann::json::object();
  const auto ent = set.entanglement();
  std::size_t idx = 0;
  for (const auto& s : ent) {
    if (s.length_of_flight_km() < 1.0) continue;
    const ScenarioTomography t = run_tomography(s, derive_seed(seed, idx++));
    for (const auto& r : t.data.records) csv.row(s.name, setting_label(r.alice) + setting_label(r.bob), r.count, r.integration_s);
    summary[s.name] = {{"length_of_flight_km", s.length_of_flight_km()},
                       {"integration_s_per_setting", t.integration_s},
                       {"delay_ps", t.delay_ps},
                       {"mle_fidelity", t.mle.fidelity_to_target},
                       {"mle_converged", t.mle.converged},
                       {"mle_iterations", t.mle.iterations_used},
                       {"mle_status", t.mle.status},
                       {"linear_fidelity", fidelity(t.linear.state, s.source.target)},
                       {"linear_min_eigenvalue", t.linear.min_eigenvalue},
                       {"linear_physical", t.linear.physical},
                       {"rho_mle", density_json(t.mle.state.rho())},
                       {"rho_linear", density_json(t.linear.state.rho())}};
  }
  if (idx == 0) throw ConfigError("tomography needs an entanglement scenario with non-zero length");
  out.write("tomography_counts.csv", csv.str());
  out.write_json("tomography_summary.json", summary);
}

inline void emit_link_budget(const ScenarioSet& set, OutputDir& out) {
  const auto ent = set.entanglement();
  const LinkScenario& base = ent.empty() ? set.scenarios.front() : ent.front();
  const auto rows = link_budget_matrix(base, default_transceivers(), default_separations_km());
  Csv csv{"transceiver", "tx_wavelength_nm", "rx_wavelength_nm", "receiver_sensitivity_dbm", "node_separation_km",
          "margin_db", "status"};
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& r : rows) {
    csv.row(r.transceiver, r.tx_wavelength_nm, r.rx_wavelength_nm, r.receiver_sensitivity_dbm, r.node_separation_km,
            r.margin_db, std::string(r.up ? "UP" : "DOWN"));
    summary.push_back({{"transceiver", r.transceiver},
                       {"node_separation_km", r.node_separation_km},
                       {"margin_db", r.margin_db},
                       {"status", r.up ? "UP" : "DOWN"}});
  }
  out.write("link_budget.csv", csv.str());
  out.write_json("link_budget_summary.json", {{"launch_power_dbm", base.classical.launch_power_dbm},
                                         {"path_excess_loss_db", base.classical.path_excess_loss_db},
                                         {"o_band_db_per_km", base.fiber_alice.attenuation.o_band_db_per_km},
                                         {"links", summary}});
}

inline void emit_sync_demo(const LinkScenario& s, std::uint64_t seed, OutputDir& out, const SyncDemoOptions& opt = {}) {
  const SyncDemo d = run_sync_demo(s, seed, opt);
  Csv csv{"time_s", "residual_ps"};
  for (const auto& r : d.session.residuals) csv.row(r.time_s, r.residual_ps);
  out.write("sync_residuals.csv", csv.str());
  out.write_json("sync_summary.json", {{"scenario", s.name},
                                       {"status", d.session.status},
                                       {"exchanges", d.session.exchanges.size()},
                                       {"steady_mean_ps", d.session.steady_mean_ps},
                                       {"steady_sigma_ps", d.session.steady_sigma_ps},
                                       {"steady_max_abs_ps", d.session.steady_max_abs_ps},
                                       {"residual_target_ps", s.sync.residual_target_ps},
                                       {"peak_delay_ps", d.peak_delay_ps},
                                       {"true_delay_ps", d.true_delay_ps},
                                       {"peak_error_ps", d.peak_error_ps},
                                       {"peak_true_pairs", d.peak_true_pairs}});
}

// The longest entanglement scenario whose classical link closes.
inline const LinkScenario& sync_demo_scenario(const ScenarioSet& set) {
  const LinkScenario* best = nullptr;
  for (const auto& s : set.scenarios) {
    if (s.noise_characterization()) continue;
    if (classical_link_margin(s.classical, s.classical_path()) < 0.0) continue;
    if (!best || s.length_of_flight_km() > best->length_of_flight_km()) best = &s;
  }
  if (best) return *best;
  for (const auto& s : set.scenarios)
    if (!s.noise_characterization()) return s;  // run_sync_session reports the link as DOWN
  throw ConfigError("sync demo needs an entanglement_distribution scenario");
}

inline void reproduce(const std::string& artifact, const ScenarioSet& set, std::uint64_t seed, OutputDir& out) {
  out.manifest().seed = seed;
  out.manifest().scenario_digest = scenario_set_digest(set);
  if (artifact == "fringes") emit_fringes(set, seed, out);
  else if (artifact == "visibility_summary") emit_visibility_summary(set, seed, out);
  else if (artifact == "car_vs_length") emit_car_vs_length(set, out);
  else if (artifact == "window_sweep") emit_window_sweep(set, seed, out);
  else if (artifact == "tomography") emit_tomography(set, seed, out);
  else if (artifact == "link_budget") emit_link_budget(set, out);
  else if (artifact == "sync_demo") emit_sync_demo(sync_demo_scenario(set), seed, out);
  else throw ConfigError("unknown artifact '" + artifact + "'");
}

}  // namespace coexist
