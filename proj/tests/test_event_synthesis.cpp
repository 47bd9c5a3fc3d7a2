#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "coexist/clock.hpp"
#include "coexist/coincidence.hpp"
#include "coexist/event_synthesis.hpp"
#include "coexist/scenario_io.hpp"
#include "support.hpp"

using namespace coexist;
using testing_support::ideal_scenario;
using testing_support::noise_only_scenario;
using testing_support::poisson_z;
using testing_support::source_path;

TEST(Synthesis, NoiselessLimitPairsEveryTagAtDifferentialDelay) {
  const LinkScenario s = ideal_scenario(2e4);
  const SynthesisResult r = synthesize_run(s, 0.5, 99);
  ASSERT_GT(r.alice.size(), 1000u);
  ASSERT_EQ(r.alice.size(), r.bob.size());
  const double D = s.differential_delay_ps();
  EXPECT_NEAR(D, 2.0 * 1e3 * 1.468 / (299792458.0 * 1e-12), 1e-6);
  EXPECT_NEAR(r.truth.differential_delay_ps, D, 1e-9);
  for (std::size_t i = 0; i < r.alice.size(); ++i) {
    const double d = static_cast<double>(r.bob.tags[i].time_ps) - static_cast<double>(r.alice.tags[i].time_ps);
    ASSERT_LT(std::abs(d - D), 1.0) << "tag " << i;  // integer-ps rounding of each side
  }
  EXPECT_EQ(r.truth.true_pairs_recorded, r.alice.size());
}

TEST(Synthesis, DarkCountsArePoisson) {
  const LinkScenario s = noise_only_scenario(500.0);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const SynthesisResult r = synthesize_run(s, 10.0, seed);
    EXPECT_LT(std::abs(poisson_z(static_cast<double>(r.alice.size()), 5000.0)), 5.0);
    EXPECT_LT(std::abs(poisson_z(static_cast<double>(r.bob.size()), 5000.0)), 5.0);
    EXPECT_EQ(r.truth.alice.signal_tags, 0u);
    EXPECT_EQ(r.truth.alice.dark_tags, r.alice.size());
  }
}

TEST(Synthesis, InterArrivalTimesPassExponentialKs) {
  LinkScenario s = noise_only_scenario(1e4);
  const SynthesisResult r = synthesize_run(s, 10.0, 4242);
  const auto& tags = r.alice.tags;
  std::vector<double> gaps;
  for (std::size_t i = 1; i < tags.size(); ++i) gaps.push_back(static_cast<double>(tags[i].time_ps - tags[i - 1].time_ps));
  ASSERT_GT(gaps.size(), 90000u);
  std::sort(gaps.begin(), gaps.end());
  const double rate = 1e4 * 1e-12;
  const double n = static_cast<double>(gaps.size());
  double dmax = 0.0;
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    const double cdf = 1.0 - std::exp(-rate * gaps[i]);
    dmax = std::max({dmax, std::abs(cdf - i / n), std::abs((i + 1) / n - cdf)});
  }
  EXPECT_LT(dmax, 1.628 / std::sqrt(n));  // alpha = 0.01
}

TEST(Synthesis, DeterministicPerSeed) {
  LinkScenario s = ideal_scenario(5e3);
  s.detector_alice.dark_rate_cps = 300;
  s.detector_bob.jitter_sigma_ps = 40;
  s.clock_bob.drift_ppm = 0.3;
  s.clock_bob.random_walk_ps_per_sqrt_s = 1.0;
  const SynthesisResult a = synthesize_run(s, 1.0, 5);
  const SynthesisResult b = synthesize_run(s, 1.0, 5);
  const SynthesisResult c = synthesize_run(s, 1.0, 6);
  EXPECT_EQ(a.alice, b.alice);
  EXPECT_EQ(a.bob, b.bob);
  EXPECT_NE(a.bob, c.bob);
}

TEST(Synthesis, CategoryConservation) {
  LinkScenario s = ideal_scenario(3e4);
  s.source.visibility = 0.9;
  s.detector_alice.dark_rate_cps = 2000;
  s.detector_bob.dark_rate_cps = 1000;
  s.raman.amplitude_cps = 5000;
  s.detector_alice.dead_time_ps = 0.0;
  s.detector_bob.dead_time_ps = 0.0;
  const SynthesisResult r = synthesize_run(s, 2.0, 8);
  EXPECT_EQ(r.truth.alice.emitted(), r.alice.size());
  EXPECT_EQ(r.truth.bob.emitted(), r.bob.size());

  s.detector_alice.dead_time_ps = 1e6;
  s.detector_bob.dead_time_ps = 1e6;
  const SynthesisResult d = synthesize_run(s, 2.0, 8);
  EXPECT_EQ(d.truth.alice.emitted(), r.truth.alice.emitted());
  EXPECT_EQ(d.truth.alice.recorded_tags, d.alice.size());
  EXPECT_LT(d.alice.size(), d.truth.alice.emitted());
}

TEST(Synthesis, DeadTimeSpacingHolds) {
  LinkScenario s = noise_only_scenario(2e5);
  s.detector_alice.dead_time_ps = 50000;
  s.detector_bob.dead_time_ps = 50000;
  const SynthesisResult r = synthesize_run(s, 1.0, 12);
  for (const TagStream* st : {&r.alice, &r.bob}) {
    ASSERT_TRUE(st->is_sorted());
    for (std::size_t i = 1; i < st->size(); ++i) ASSERT_GE(st->tags[i].time_ps - st->tags[i - 1].time_ps, 50000u);
  }
  const double expected = 2e5 * dead_time_factor(2e5, 50000);
  EXPECT_LT(std::abs(poisson_z(static_cast<double>(r.alice.size()), expected)), 5.0);
}

TEST(Synthesis, EmptyOutputAllowed) {
  const SynthesisResult r = synthesize_run(noise_only_scenario(0.0), 1.0, 1);
  EXPECT_TRUE(r.alice.empty());
  EXPECT_TRUE(r.bob.empty());
  EXPECT_EQ(r.alice.duration_ps, 1000000000000u);
}

TEST(Synthesis, InvalidScenarioRejected) {
  LinkScenario s = ideal_scenario();
  s.detector_alice.efficiency = 1.5;
  EXPECT_THROW(synthesize_run(s, 1.0, 1), ConfigError);
  EXPECT_THROW(synthesize_run(ideal_scenario(), 0.0, 1), ConfigError);
}

TEST(Synthesis, CalibratedHundredKmNoiseRate) {
  const LinkScenario s = load_scenario(source_path("scenarios/calibrated/entanglement_100km.toml"));
  const double T = 30.0;
  const SynthesisResult r = synthesize_run(s, T, 2024);
  EXPECT_NEAR(s.raman_rate_cps(), 32600.0, 32600.0 * 1e-6);
  EXPECT_LT(std::abs(poisson_z(static_cast<double>(r.truth.bob.raman_tags), 32600.0 * T)), 5.0);
  EXPECT_LT(std::abs(poisson_z(static_cast<double>(r.truth.alice.raman_tags), 32600.0 * T)), 5.0);
}

// Measured singles, coincidences and accidentals against the closed form.
TEST(Synthesis, MonteCarloMatchesAnalyticRates) {
  LinkScenario s = load_scenario(source_path("scenarios/calibrated/entanglement_50km.toml"));
  s.clock_alice = {};
  s.clock_bob = {};
  s.analyzer_alice = AnalyzerSetting::linear(0.4);
  s.analyzer_bob = AnalyzerSetting::linear(0.9);
  const double T = 30.0, window = 2000.0;
  const SynthesisResult r = synthesize_run(s, T, 77);
  const LinkMetrics m = expected_link_metrics(s, window);
  EXPECT_LT(std::abs(poisson_z(static_cast<double>(r.alice.size()), m.singles_a_cps * T)), 5.0);
  EXPECT_LT(std::abs(poisson_z(static_cast<double>(r.bob.size()), m.singles_b_cps * T)), 5.0);

  const auto ta = r.alice.times(), tb = r.bob.times();
  const CoincidenceWindow w{2000, std::llround(s.differential_delay_ps())};
  const double coinc = static_cast<double>(count_coincidences(ta, tb, w));
  EXPECT_LT(std::abs(poisson_z(coinc, m.total_coincidence_cps() * T)), 5.0);
  const double acc = static_cast<double>(estimate_accidentals(ta, tb, w, default_accidental_shift(2000)));
  EXPECT_LT(std::abs(poisson_z(acc, m.accidental_cps * T)), 5.0);
}

TEST(Synthesis, NoiseLayoutSharesOneFiberAndClock) {
  LinkScenario s = ideal_scenario(1e4);
  s.topology = Topology::NoiseCharacterization;
  s.fiber_alice.length_km = 50.0;
  s.fiber_bob.length_km = 0.0;
  s.clock_alice.initial_offset_ps = 1234.0;
  s.clock_bob.initial_offset_ps = 99999.0;
  EXPECT_DOUBLE_EQ(s.length_of_flight_km(), 100.0);
  const SynthesisResult r = synthesize_run(s, 0.2, 3);
  EXPECT_NEAR(r.truth.differential_delay_ps, 0.0, 1e-9);
  ASSERT_EQ(r.alice.size(), r.bob.size());
  for (std::size_t i = 0; i < r.alice.size(); ++i) ASSERT_EQ(r.alice.tags[i].time_ps, r.bob.tags[i].time_ps);
}

// Without noise the only accidentals are uncorrelated pairs, singles^2 * tau,
// so CAR grows without bound as the pair rate falls.
TEST(Analytic, NoiselessCarDivergesAtLowPairRate) {
  const LinkMetrics m = expected_link_metrics(ideal_scenario(1e4), 2000.0);
  EXPECT_NEAR(m.true_coincidence_cps, 0.5e4, 1e-9);
  EXPECT_NEAR(m.accidental_cps, 0.5e4 * 0.5e4 * 2e-9, 1e-12);
  double prev = m.car;
  for (double R : {1e3, 1e2, 1e1, 1.0}) {
    const LinkMetrics k = expected_link_metrics(ideal_scenario(R), 2000.0);
    EXPECT_NEAR(k.car, 1.0 + 1.0 / (0.5 * R * 2e-9), 1e-6 * k.car);
    EXPECT_GT(k.car, 10.0 * prev * 0.99);
    prev = k.car;
  }
  EXPECT_GT(prev, 1e9);
}

TEST(Analytic, PureNoiseAccidentalsAndCarOfOne) {
  const LinkScenario s = noise_only_scenario(1e5);
  const LinkMetrics m = expected_link_metrics(s, 2000.0);
  EXPECT_NEAR(m.accidental_cps, 1e5 * 1e5 * 2e-9, 1e-9);
  EXPECT_NEAR(m.accidental_cps, 20.0, 1e-9);
  EXPECT_NEAR(m.car, 1.0, 1e-12);

  const SynthesisResult r = synthesize_run(s, 10.0, 31);
  const auto ta = r.alice.times(), tb = r.bob.times();
  const double c = static_cast<double>(count_coincidences(ta, tb, CoincidenceWindow{2000, 0}));
  EXPECT_LT(std::abs(poisson_z(c, 200.0)), 5.0);
}

TEST(Analytic, ZeroSinglesIsAnError) {
  EXPECT_THROW(expected_link_metrics(noise_only_scenario(0.0), 2000.0), AnalysisError);
}

TEST(Analytic, VisibilityReducesToSourceWithoutBackground) {
  LinkScenario s = ideal_scenario(100.0);
  s.source.visibility = 0.9;
  const LinkMetrics m = expected_link_metrics(s, 2000.0);
  ASSERT_TRUE(m.visibility.has_value());
  EXPECT_NEAR(*m.visibility, 0.9, 1e-6);
  s.detector_alice.dark_rate_cps = 1e5;
  s.detector_bob.dark_rate_cps = 1e5;
  EXPECT_LT(*expected_link_metrics(s, 2000.0).visibility, 0.9);
}

TEST(Analytic, CaptureFractionErf) {
  EXPECT_NEAR(window_capture_fraction(2000.0, 0.0), 1.0, 0.0);
  EXPECT_NEAR(window_capture_fraction(2.0 * 70.0, 70.0), std::erf(1.0 / std::sqrt(2.0)), 1e-15);
  EXPECT_NEAR(window_capture_fraction(2.0 * 1.96 * 50.0, 50.0), 0.95, 1e-4);
}

TEST(Clock, ZeroErrorIsIdentity) {
  TagStream s;
  s.duration_ps = 10000;
  for (std::uint64_t t : {0u, 5u, 77u, 9999u}) s.tags.push_back({t, Node::Bob, 2});
  EXPECT_EQ(apply_clock(s, ClockSpec{}, 1), s);
}

TEST(Clock, ConstantOffsetShiftsEveryTag) {
  TagStream s;
  s.duration_ps = 1000000;
  for (std::uint64_t t = 0; t < 1000000; t += 12345) s.tags.push_back({t, Node::Bob, 2});
  ClockSpec c;
  c.initial_offset_ps = 1000.0;
  const TagStream out = apply_clock(s, c, 1);
  ASSERT_EQ(out.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(out.tags[i].time_ps, s.tags[i].time_ps + 1000);
}

TEST(Clock, OnePpmDriftOverOneSecond) {
  TagStream s;
  s.duration_ps = 1000000000001;
  s.tags.push_back({0, Node::Bob, 2});
  s.tags.push_back({1000000000000, Node::Bob, 2});
  ClockSpec c;
  c.drift_ppm = 1.0;
  const TagStream out = apply_clock(s, c, 1);
  const std::int64_t start_shift = static_cast<std::int64_t>(out.tags[0].time_ps) - 0;
  const std::int64_t end_shift = static_cast<std::int64_t>(out.tags[1].time_ps) - 1000000000000;
  EXPECT_EQ(end_shift - start_shift, 1000000);
}

TEST(Clock, OutputResorted) {
  TagStream s;
  s.duration_ps = 3000000000;
  for (std::uint64_t t = 0; t < 3000000000; t += 1000) s.tags.push_back({t, Node::Bob, 2});
  ClockSpec c;
  c.random_walk_ps_per_sqrt_s = 1e5;
  EXPECT_TRUE(apply_clock(s, c, 9).is_sorted());
}
