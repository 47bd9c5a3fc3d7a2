// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include "coexist/calibration.hpp"
#include "coexist/recipes.hpp"
#include "coexist/scenario_io.hpp"
#include "support.hpp"

using namespace coexist;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 42;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome raman_calibration(const ScenarioSet& set, const CalibrationAnchors& anchors) {
  Outcome o;
  LinkScenario noise = set.noise();
  noise.source.pair_rate_cps = 0.0;
  const double T = 30.0;
  for (const NoisePoint& p : anchors.raman_points) {
    noise.fiber_alice.length_km = 0.5 * p.length_of_flight_km;
    const double model = noise.raman_rate_cps();
    const double rel = std::abs(model - p.noise_cps) / p.noise_cps;
    const SynthesisResult r = synthesize_run(noise, T, derive_seed(kSeed, static_cast<std::uint64_t>(p.length_of_flight_km)));
    const double z = testing_support::poisson_z(static_cast<double>(r.truth.alice.raman_tags), model * T);
    o.detail << " LOF " << p.length_of_flight_km << " km: model " << model << " cps (rel err " << rel << "), MC z "
             << z << ";";
    o.require(rel <= 1e-6, "relative error > 1e-6");
    o.require(std::abs(z) < 5.0, "MC noise rate outside 5 sigma");
  }
  return o;
}

Outcome car_vs_length_check(const ScenarioSet& set) {
  Outcome o;
  const auto rows = car_vs_length(set.noise(), default_car_lengths(), set.noise().coincidence_window_ps);
  double car120 = std::nan("");
  bool monotone = true;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].length_of_flight_km == 120.0) car120 = rows[i].car;
    if (i > 0 && !(rows[i].car < rows[i - 1].car)) monotone = false;
  }
  o.detail << " CAR(120 km) = " << car120 << ", monotone decreasing = " << (monotone ? "yes" : "no");
  o.require(car120 >= 8.0 && car120 <= 30.0, "CAR(120 km) outside [8, 30]");
  o.require(car120 >= 10.0, "CAR(120 km) below 10");
  o.require(monotone, "CAR not monotone in length");
  return o;
}

Outcome window_sweep_check(const ScenarioSet& set) {
  Outcome o;
  const WindowSweep w = run_window_sweep(set.noise(), kSeed);
  const double frac = plateau_fraction(w, 1500.0);
  o.detail << " " << w.scenario.name << ", " << w.duration_s << " s, " << w.true_pairs_recorded
           << " true pairs; net rate at 1.5 ns = " << frac << " of asymptote";
  o.require(w.true_pairs_recorded >= 10000, "fewer than 1e4 true pairs");
  o.require(coincidences_non_decreasing(w), "coincidences decrease with window");
  o.require(frac >= 0.95, "below 95% of asymptote at 1.5 ns");
  o.require(car_non_increasing_beyond(w, 1000.0), "CAR increases beyond 1 ns");
  return o;
}

Outcome entanglement_chain(const ScenarioSet& set, const CalibrationAnchors& anchors) {
  Outcome o;
  const auto fr = fringes_for_set(set, kSeed);
  for (const auto& f : fr) {
    const EntanglementAnchor* a = nullptr;
    for (const auto& e : anchors.entanglement)
      if (e.name == f.scenario.name) a = &e;
    if (!a) {
      o.require(false, "no anchor for " + f.scenario.name);
      continue;
    }
    const double dz = std::abs(f.chsh.s - a->chsh_s) / f.chsh.sigma;
    o.detail << " " << f.scenario.name << ": V " << f.mean_visibility << " (ref " << a->visibility << "), S "
             << f.chsh.s << " +- " << f.chsh.sigma << " (ref " << a->chsh_s << ", " << dz << " sigma);";
    o.require(std::abs(f.mean_visibility - a->visibility) <= 0.05, f.scenario.name + " visibility off by > 0.05");
    o.require(dz <= 3.0, f.scenario.name + " S off by > 3 sigma");
  }
  return o;
}

Outcome tomography_check(const ScenarioSet& set) {
  Outcome o;
  const BellTarget psi{BellState::PsiPlus, 0.0};
  double worst = 0.0;
  for (double v : {0.0, 0.5, 0.9, 1.0}) {
    const TomographyResult r = tomography_mle(exact_tomography_data(werner_mix(psi, v), 1e4), psi);
    worst = std::max(worst, std::abs(r.fidelity_to_target - (3.0 * v + 1.0) / 4.0));
    o.require(r.state.is_physical(), "Werner MLE state not physical");
  }
  o.detail << " Werner max |F - (3V+1)/4| = " << worst << ";";
  o.require(worst <= 1e-6, "Werner fidelity error > 1e-6");
  const ScenarioTomography t = run_tomography(set.entanglement_at(100.0), kSeed);
  o.detail << " 100 km MC fidelity " << t.mle.fidelity_to_target << " (" << t.data.total_counts() << " counts)";
  o.require(std::abs(t.mle.fidelity_to_target - 0.87) <= 0.06, "100 km fidelity outside 0.87 +- 0.06");
  o.require(t.mle.state.is_physical(), "100 km MLE state not physical");
  return o;
}

Outcome coincidence_oracle() {
  Outcome o;
  int agree = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 g(seed);
    auto stream = [&](std::size_t n, std::uint64_t span) {
      std::vector<std::uint64_t> v(n);
      for (auto& x : v) x = std::uniform_int_distribution<std::uint64_t>(0, span)(g);
      std::sort(v.begin(), v.end());
      return v;
    };
    const std::uint64_t span = std::uniform_int_distribution<std::uint64_t>(1000, 2000000)(g);
    const auto a = stream(std::uniform_int_distribution<std::size_t>(0, 1000)(g), span);
    const auto b = stream(std::uniform_int_distribution<std::size_t>(0, 1000)(g), span);
    const CoincidenceWindow w{std::uniform_int_distribution<std::int64_t>(1, 3000)(g),
                              std::uniform_int_distribution<std::int64_t>(-4000, 4000)(g)};
    if (count_coincidences(a, b, w) == testing_support::brute_force_coincidences(a, b, w.width_ps, w.center_delay_ps))
      ++agree;
  }
  const LinkScenario s = testing_support::noise_only_scenario(1e5);
  const SynthesisResult r = synthesize_run(s, 100.0, kSeed);
  const double ra = static_cast<double>(r.alice.size()) / 100.0, rb = static_cast<double>(r.bob.size()) / 100.0;
  const double expected = ra * rb * 2000e-12 * 100.0;
  const double acc =
      static_cast<double>(estimate_accidentals(r.alice.times(), r.bob.times(), {2000, 0}, default_accidental_shift(2000)));
  const double z = testing_support::poisson_z(acc, expected);
  o.detail << " oracle agreement " << agree << "/100; accidentals " << acc << " vs r1*r2*tau*T " << expected << " (z "
           << z << ")";
  o.require(agree == 100, "oracle mismatch");
  o.require(std::abs(z) < 5.0, "accidentals outside 5 sigma");
  return o;
}

Outcome sync_check(const ScenarioSet& set) {
  Outcome o;
  std::mt19937_64 g(kSeed);
  std::uniform_int_distribution<std::int64_t> off(-5000000, 5000000), del(1000000, 2000000000), asym(-100000, 100000);
  bool exact = true, half = true;
  for (int i = 0; i < 10000; ++i) {
    const std::int64_t of = off(g), d = del(g), t1 = del(g), delta = 2 * asym(g);
    if (estimate_offset_delay({t1, t1 + d + of, t1 + d + of + 1000, t1 + 2 * d + 1000}).offset_ps != of) exact = false;
    const std::int64_t r = d - delta;
    if (estimate_offset_delay({t1, t1 + d + of, t1 + d + of + 1000, t1 + d + 1000 + r}).offset_ps - of != delta / 2)
      half = false;
  }
  const LinkScenario& s = sync_demo_scenario(set);
  const SyncDemo d = run_sync_demo(s, kSeed);
  const double target = s.sync.residual_target_ps;
  o.detail << " exact offsets " << (exact ? "yes" : "no") << ", delta/2 law " << (half ? "yes" : "no") << "; "
           << s.name << " steady sigma " << d.session.steady_sigma_ps << " ps, peak error " << d.peak_error_ps
           << " ps (bound " << target << " ps)";
  o.require(exact, "offset not integer-exact");
  o.require(half, "asymmetry error not delta/2");
  o.require(d.session.steady_sigma_ps <= target, "steady residual sigma above target");
  o.require(std::abs(d.peak_error_ps) <= target, "coincidence peak outside the residual bound");
  return o;
}

Outcome link_budget_check(const ScenarioSet& set) {
  Outcome o;
  const auto rows = link_budget_matrix(set.entanglement_at(100.0), default_transceivers(), default_separations_km());
  auto state = [&](double sens, double km) {
    for (const auto& r : rows)
      if (r.receiver_sensitivity_dbm == sens && r.node_separation_km == km) return r.up ? 1 : 0;
    return -1;
  };
  for (const auto& r : rows)
    o.detail << " " << r.receiver_sensitivity_dbm << " dBm @ " << r.node_separation_km << " km: "
             << (r.up ? "UP" : "DOWN") << " (" << r.margin_db << " dB);";
  o.require(state(-17.0, 25.0) == 1, "-17 dBm not UP at 25 km");
  o.require(state(-17.0, 50.0) == 0, "-17 dBm not DOWN at 50 km");
  o.require(state(-17.0, 100.0) == 0, "-17 dBm not DOWN at 100 km");
  o.require(state(-41.0, 100.0) == 1, "-41 dBm not UP at 100 km");
  return o;
}

Outcome determinism_check(const ScenarioSet& set) {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / "coexist_acceptance_repro";
  fs::remove_all(root);
  for (const char* run : {"a", "b"}) {
    for (const auto& art : reproducible_artifacts()) {
      OutputDir out(root / run / art);
      reproduce(art, set, kSeed, out);
      out.finish();
    }
  }
  std::size_t files = 0, differ = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path other = root / "b" / fs::relative(e.path(), root / "a");
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) ++differ;
  }
  o.detail << " " << reproducible_artifacts().size() << " artifacts, " << files << " files, " << differ << " differ";
  o.require(files > 0 && differ == 0, "outputs differ between runs");
  fs::remove_all(root);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string dir = "scenarios";
  app.add_option("--scenarios", dir, "Directory holding anchors.toml and calibrated/")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  ScenarioSet set;
  CalibrationAnchors anchors;
  try {
    set = load_scenario_set((fs::path(dir) / "calibrated").string());
    anchors = load_anchors((fs::path(dir) / "anchors.toml").string());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cannot load inputs: %s\n", e.what());
    return 2;
  }

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "Raman calibration", [&] { return raman_calibration(set, anchors); }},
      {2, "CAR vs length", [&] { return car_vs_length_check(set); }},
      {3, "window sweep", [&] { return window_sweep_check(set); }},
      {4, "entanglement metrics", [&] { return entanglement_chain(set, anchors); }},
      {5, "tomography", [&] { return tomography_check(set); }},
      {6, "coincidence engine", [] { return coincidence_oracle(); }},
      {7, "sync", [&] { return sync_check(set); }},
      {8, "classical link budget", [&] { return link_budget_check(set); }},
      {9, "determinism", [&] { return determinism_check(set); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [error: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failed;
    std::printf("criterion %d %s: %s (%.1f s);%s\n", c.id, c.name, o.pass ? "PASS" : "FAIL", secs,
                o.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
