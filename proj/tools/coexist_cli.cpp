#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "coexist/calibration.hpp"
#include "coexist/coincidence.hpp"
#include "coexist/errors.hpp"
#include "coexist/manifest.hpp"
#include "coexist/recipes.hpp"
#include "coexist/scenario_io.hpp"
#include "coexist/tag_io.hpp"

namespace {

using namespace coexist;

constexpr int kExitConfig = 2;
constexpr int kExitAnalysis = 3;

struct Common {
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::string scenario;
};

void add_common(CLI::App* cmd, Common& c, const std::string& scenario_help) {
  cmd->add_option("--seed", c.seed, "Master RNG seed")->capture_default_str();
  cmd->add_option("--out-dir", c.out_dir, "Output directory")->capture_default_str();
  cmd->add_option("--scenario", c.scenario, scenario_help)->capture_default_str();
}

// The output location is left out so manifests do not depend on where they are written.
std::string command_line(int argc, char** argv) {
  std::string s = std::filesystem::path(argv[0]).filename().string();
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--out-dir") {
      ++i;
      continue;
    }
    if (arg.rfind("--out-dir=", 0) == 0) continue;
    s += ' ' + arg;
  }
  return s;
}

// ---------------------------------------------------------------- calibrate

struct CalibrateArgs {
  Common common{1, "scenarios/calibrated", "scenarios/templates/entanglement.toml"};
  std::string noise_template = "scenarios/templates/noise_characterization.toml";
  std::string anchors = "scenarios/anchors.toml";
};

void run_calibrate(const CalibrateArgs& a, const std::string& cmd) {
  const LinkScenario ent = load_scenario(a.common.scenario);
  const LinkScenario noise = load_scenario(a.noise_template);
  const CalibrationAnchors anchors = load_anchors(a.anchors);
  const CalibrationResult r = calibrate(ent, noise, anchors);

  OutputDir out(a.common.out_dir);
  out.manifest().command = cmd;
  out.manifest().seed = a.common.seed;
  ScenarioSet set{r.scenarios};
  for (const auto& s : r.scenarios) out.write(s.name + ".toml", scenario_to_toml_string(s));
  if (!r.scenarios.empty()) out.manifest().scenario_digest = scenario_set_digest(set);
  out.write_json("calibration_report.json", r.report());
  out.finish();
  std::cout << "calibrated " << r.scenarios.size() << " scenario(s); max residual " << fmt_num(r.max_residual)
            << " -> " << a.common.out_dir << "\n";
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  Common common{1, "out/simulate", ""};
  double duration_s = 1.0;
  std::string format = "text";
  bool raw = false;
};

void run_simulate(const SimulateArgs& a, const std::string& cmd) {
  const LinkScenario s = load_scenario(a.common.scenario);
  const TagFormat f = a.format == "binary" ? TagFormat::Binary : TagFormat::Text;
  const std::string ext = f == TagFormat::Binary ? ".qtag" : ".csv";

  TagStream alice, bob;
  GroundTruth truth;
  nlohmann::json sync = nullptr;
  if (a.raw) {
    SynthesisResult r = synthesize_run(s, a.duration_s, a.common.seed);
    alice = std::move(r.alice);
    bob = std::move(r.bob);
    truth = std::move(r.truth);
  } else {
    LinkRun r = simulate_link(s, a.duration_s, a.common.seed);
    alice = std::move(r.alice);
    bob = std::move(r.bob);
    truth = std::move(r.truth);
    if (r.sync) {
      sync = {{"status", r.sync->status},
              {"steady_mean_ps", r.sync->steady_mean_ps},
              {"steady_sigma_ps", r.sync->steady_sigma_ps}};
    }
  }

  OutputDir out(a.common.out_dir);
  out.manifest().command = cmd;
  out.manifest().seed = a.common.seed;
  out.manifest().scenario_digest = scenario_digest(s);
  std::ostringstream ta, tb;
  if (f == TagFormat::Binary) {
    write_tags_binary(ta, alice);
    write_tags_binary(tb, bob);
  } else {
    write_tags_text(ta, alice);
    write_tags_text(tb, bob);
  }
  out.write("alice" + ext, ta.str());
  out.write("bob" + ext, tb.str());
  out.write_json("truth.json", {{"scenario", s.name},
                                {"duration_s", a.duration_s},
                                {"alice_tags", alice.size()},
                                {"bob_tags", bob.size()},
                                {"true_pairs", truth.true_pairs},
                                {"true_pairs_recorded", truth.true_pairs_recorded},
                                {"differential_delay_ps", truth.differential_delay_ps},
                                {"bob_on_leader_time_base", !a.raw},
                                {"sync", sync}});
  out.finish();
  std::cout << "wrote " << alice.size() << " + " << bob.size() << " tags to " << a.common.out_dir << "\n";
}

// ---------------------------------------------------------------- analyze

struct AnalyzeArgs {
  Common common{1, "out/analyze", ""};
  std::string tags_a;
  std::string tags_b;
  std::optional<double> window_ps;
  std::optional<double> delay_ps;
  double histogram_range_ps = 50000.0;
  double histogram_bin_ps = 50.0;
  bool sort = false;
};

TagStream prepare(const std::string& path, Node node, bool sort) {
  TagStream s = load_tags(path, node);
  if (!s.is_sorted()) {
    if (!sort) throw PreconditionError("tag file '" + path + "' is not time-sorted (pass --sort to sort it)");
    s.sort();
  }
  return s;
}

void run_analyze(const AnalyzeArgs& a, const std::string& cmd) {
  double window = 2000.0;
  if (!a.common.scenario.empty()) window = load_scenario(a.common.scenario).coincidence_window_ps;
  if (a.window_ps) window = *a.window_ps;
  if (!(window > 0.0)) throw ConfigError("--window-ps must be > 0");
  if (!(a.histogram_bin_ps > 0.0) || !(a.histogram_range_ps > 0.0)) throw ConfigError("histogram range and bin must be > 0");

  const TagStream sa = prepare(a.tags_a, Node::Alice, a.sort);
  const TagStream sb = prepare(a.tags_b, Node::Bob, a.sort);
  const auto ta = sa.times();
  const auto tb = sb.times();
  const auto range = static_cast<std::int64_t>(std::llround(a.histogram_range_ps));
  const auto bin = static_cast<std::int64_t>(std::llround(a.histogram_bin_ps));

  double delay = 0.0;
  std::string delay_source = "given";
  if (a.delay_ps) {
    delay = *a.delay_ps;
  } else if (!ta.empty() && !tb.empty()) {
    delay = locate_peak_delay(ta, tb, range, bin, 0.5 * window);
    delay_source = "peak";
  } else {
    delay_source = "none (empty input)";
  }
  const CoincidenceWindow w{static_cast<std::int64_t>(std::llround(window)),
                            static_cast<std::int64_t>(std::llround(delay))};
  const std::uint64_t duration = std::max(sa.duration_ps, sb.duration_ps);
  const CoincidenceResult r = analyze_window(ta, tb, w, duration);
  const TimeDiffHistogram h = time_difference_histogram(ta, tb, range, bin);

  OutputDir out(a.common.out_dir);
  out.manifest().command = cmd;
  out.manifest().seed = a.common.seed;
  Csv csv{"bin_start_ps", "count"};
  for (std::size_t i = 0; i < h.bins.size(); ++i) csv.row(h.bin_low(i), h.bins[i]);
  out.write("histogram.csv", csv.str());
  const double car = r.car();
  const bool car_defined = r.accidentals > 0;
  out.write_json("coincidences.json",
                 {{"alice_tags", sa.size()},
                  {"bob_tags", sb.size()},
                  {"alice_rate_cps", sa.rate_cps()},
                  {"bob_rate_cps", sb.rate_cps()},
                  {"window_ps", window},
                  {"delay_ps", delay},
                  {"delay_source", delay_source},
                  {"coincidences", r.coincidences},
                  {"accidentals", r.accidentals},
                  {"coincidence_rate_cps", r.coincidence_rate_cps()},
                  {"accidental_rate_cps", r.accidental_rate_cps()},
                  {"car", car_defined ? nlohmann::json(car) : nlohmann::json(nullptr)},
                  {"car_defined", car_defined}});
  out.finish();
  std::cout << "coincidences " << r.coincidences << ", accidentals " << fmt_num(r.accidentals) << ", CAR "
            << (car_defined ? fmt_num(car) : std::string("undefined")) << "\n";
}

// ---------------------------------------------------------------- reproduce / sync-demo

struct ReproduceArgs {
  Common common{1, "out/reproduce", "scenarios/calibrated"};
  std::string artifact;
};

void run_reproduce(const ReproduceArgs& a, const std::string& cmd) {
  const ScenarioSet set = load_scenario_set(a.common.scenario);
  const bool all = a.artifact == "all";
  for (const auto& name : reproducible_artifacts()) {
    if (!all && name != a.artifact) continue;
    OutputDir out(all ? std::filesystem::path(a.common.out_dir) / name : std::filesystem::path(a.common.out_dir));
    out.manifest().command = cmd;
    reproduce(name, set, a.common.seed, out);
    out.finish();
    std::cout << name << " -> " << out.root().string() << "\n";
  }
}

struct SyncDemoArgs {
  Common common{1, "out/sync_demo", "scenarios/calibrated"};
  double duration_s = 600.0;
  double peak_run_s = 60.0;
};

void run_sync_demo_cmd(const SyncDemoArgs& a, const std::string& cmd) {
  const ScenarioSet set = load_scenario_set(a.common.scenario);
  const LinkScenario& s = set.scenarios.size() == 1 ? set.scenarios.front() : sync_demo_scenario(set);
  OutputDir out(a.common.out_dir);
  out.manifest().command = cmd;
  out.manifest().seed = a.common.seed;
  out.manifest().scenario_digest = scenario_digest(s);
  emit_sync_demo(s, a.common.seed, out, {a.duration_s, a.peak_run_s});
  out.finish();
  std::cout << "sync-demo (" << s.name << ") -> " << a.common.out_dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entanglement distribution / classical coexistence link simulator"};
  app.require_subcommand(1);

  CalibrateArgs cal;
  auto* c_cal = app.add_subcommand("calibrate", "Fit a scenario template to measured anchors");
  add_common(c_cal, cal.common, "Entanglement scenario template");
  c_cal->add_option("--noise-template", cal.noise_template, "Noise-characterization template")->capture_default_str();
  c_cal->add_option("--anchors", cal.anchors, "Anchor file")->capture_default_str();

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Synthesize tag streams for one scenario");
  add_common(c_sim, sim.common, "Scenario file");
  c_sim->get_option("--scenario")->required();
  c_sim->add_option("--duration", sim.duration_s, "Simulated seconds")->capture_default_str()->check(CLI::PositiveNumber);
  c_sim->add_option("--format", sim.format, "Tag file format")->capture_default_str()->check(CLI::IsMember({"text", "binary"}));
  c_sim->add_flag("--raw", sim.raw, "Keep Bob's tags on his free-running clock");

  AnalyzeArgs an;
  auto* c_an = app.add_subcommand("analyze", "Coincidence analysis of two tag files");
  add_common(c_an, an.common, "Scenario supplying the coincidence window (optional)");
  c_an->add_option("--tags-a", an.tags_a, "Alice tag file")->required();
  c_an->add_option("--tags-b", an.tags_b, "Bob tag file")->required();
  c_an->add_option("--window-ps", an.window_ps, "Coincidence window width");
  c_an->add_option("--delay-ps", an.delay_ps, "Bob-minus-Alice delay (default: locate the peak)");
  c_an->add_option("--histogram-range-ps", an.histogram_range_ps)->capture_default_str();
  c_an->add_option("--histogram-bin-ps", an.histogram_bin_ps)->capture_default_str();
  c_an->add_flag("--sort", an.sort, "Sort unsorted inputs instead of failing");

  ReproduceArgs rep;
  auto* c_rep = app.add_subcommand("reproduce", "Regenerate one artifact as CSV/JSON");
  add_common(c_rep, rep.common, "Calibrated scenario file or directory");
  std::vector<std::string> choices = reproducible_artifacts();
  choices.push_back("all");
  c_rep->add_option("artifact", rep.artifact, "Artifact name")->required()->check(CLI::IsMember(choices));

  SyncDemoArgs sd;
  auto* c_sd = app.add_subcommand("sync-demo", "Clock-discipline session and coincidence-peak check");
  add_common(c_sd, sd.common, "Scenario file or directory");
  c_sd->add_option("--duration", sd.duration_s, "Session length in seconds")->capture_default_str()->check(CLI::PositiveNumber);
  c_sd->add_option("--peak-run", sd.peak_run_s, "Seconds of tags for the peak check")->capture_default_str()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  const std::string cmd = command_line(argc, argv);
  try {
    if (*c_cal) run_calibrate(cal, cmd);
    else if (*c_sim) run_simulate(sim, cmd);
    else if (*c_an) run_analyze(an, cmd);
    else if (*c_rep) run_reproduce(rep, cmd);
    else if (*c_sd) run_sync_demo_cmd(sd, cmd);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const LinkDownError& e) {
    std::cerr << "analysis failure: " << e.what() << "\n";
    return kExitAnalysis;
  } catch (const CalibrationError& e) {
    std::cerr << "calibration failure: " << e.what() << "\n";
    return kExitAnalysis;
  } catch (const AnalysisError& e) {
    std::cerr << "analysis failure: " << e.what() << "\n";
    return kExitAnalysis;
  } catch (const PreconditionError& e) {
    std::cerr << "precondition failed: " << e.what() << "\n";
    return kExitAnalysis;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitAnalysis;
  }
}
