#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "coexist/coincidence.hpp"
#include "coexist/errors.hpp"
#include "coexist/event_synthesis.hpp"
#include "coexist/recipes.hpp"
#include "coexist/scenario_io.hpp"
#include "support.hpp"

using namespace coexist;
using testing_support::brute_force_coincidences;
using testing_support::poisson_z;

namespace {

std::vector<std::uint64_t> random_sorted(std::mt19937_64& g, std::size_t n, std::uint64_t span) {
  std::uniform_int_distribution<std::uint64_t> u(0, span);
  std::vector<std::uint64_t> v(n);
  for (auto& x : v) x = u(g);
  std::sort(v.begin(), v.end());
  return v;
}

std::vector<std::uint64_t> poisson_stream(std::mt19937_64& g, double rate_cps, double duration_s) {
  std::exponential_distribution<double> gap(rate_cps * 1e-12);
  std::vector<std::uint64_t> v;
  double t = gap(g);
  while (t < duration_s * 1e12) {
    v.push_back(static_cast<std::uint64_t>(t));
    t += gap(g);
  }
  return v;
}

}  // namespace

TEST(Counter, MatchesBruteForceOracleOverHundredSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 g(seed);
    std::uniform_int_distribution<std::size_t> n(0, 1000);
    std::uniform_int_distribution<std::int64_t> wd(1, 3000), dl(-4000, 4000);
    // Dense enough that windows overlap and tags compete.
    const std::uint64_t span = 1 + std::uniform_int_distribution<std::uint64_t>(1000, 2000000)(g);
    const auto a = random_sorted(g, n(g), span);
    const auto b = random_sorted(g, n(g), span);
    const CoincidenceWindow w{wd(g), dl(g)};
    ASSERT_EQ(count_coincidences(a, b, w), brute_force_coincidences(a, b, w.width_ps, w.center_delay_ps))
        << "seed " << seed;
  }
}

TEST(Counter, WindowEdgesAreInclusive) {
  const std::int64_t d = 5000;
  const std::vector<std::uint64_t> a{100};
  EXPECT_EQ(count_coincidences(a, std::vector<std::uint64_t>{100 + d}, {2000, d}), 1u);
  EXPECT_EQ(count_coincidences(a, std::vector<std::uint64_t>{100 + d + 1000}, {2000, d}), 1u);
  EXPECT_EQ(count_coincidences(a, std::vector<std::uint64_t>{100 + d - 1000}, {2000, d}), 1u);
  EXPECT_EQ(count_coincidences(a, std::vector<std::uint64_t>{100 + d + 1001}, {2000, d}), 0u);
  EXPECT_EQ(count_coincidences(a, std::vector<std::uint64_t>{100 + d - 1001}, {2000, d}), 0u);
}

TEST(Counter, EachTagUsedOnce) {
  const std::vector<std::uint64_t> a{1000, 1001, 1002};
  const std::vector<std::uint64_t> b{1000};
  EXPECT_EQ(count_coincidences(a, b, {100, 0}), 1u);
  EXPECT_EQ(count_coincidences(b, a, {100, 0}), 1u);
}

TEST(Counter, UnsortedInputRejected) {
  const std::vector<std::uint64_t> sorted{1, 2, 3};
  const std::vector<std::uint64_t> unsorted{3, 1, 2};
  EXPECT_THROW(count_coincidences(unsorted, sorted, {10, 0}), PreconditionError);
  EXPECT_THROW(count_coincidences(sorted, unsorted, {10, 0}), PreconditionError);
  EXPECT_THROW(count_coincidences(sorted, sorted, {0, 0}), PreconditionError);
}

TEST(Counter, TranslationInvariant) {
  std::mt19937_64 g(3);
  const auto a = random_sorted(g, 800, 500000);
  const auto b = random_sorted(g, 800, 500000);
  const std::uint64_t base = count_coincidences(a, b, {1500, 200});
  for (std::uint64_t c : {1ull, 777ull, 1000000000000ull}) {
    auto a2 = a, b2 = b;
    for (auto& x : a2) x += c;
    for (auto& x : b2) x += c;
    EXPECT_EQ(count_coincidences(a2, b2, {1500, 200}), base);
  }
}

TEST(Counter, WiderWindowNeverCountsFewerForSparseStreams) {
  // Pairs spaced far apart relative to every window: no competition.
  std::mt19937_64 g(9);
  std::normal_distribution<double> jit(0.0, 300.0);
  std::vector<std::uint64_t> a, b;
  for (std::uint64_t k = 1; k <= 2000; ++k) {
    a.push_back(k * 1000000);
    b.push_back(static_cast<std::uint64_t>(static_cast<double>(k * 1000000 + 4000) + jit(g)));
  }
  std::sort(b.begin(), b.end());
  std::uint64_t prev = 0;
  for (std::int64_t w = 100; w <= 20000; w += 100) {
    const std::uint64_t c = count_coincidences(a, b, {w, 4000});
    EXPECT_GE(c, prev);
    prev = c;
  }
  EXPECT_EQ(prev, 2000u);
}

TEST(Accidentals, PoissonStreamsMatchRateProduct) {
  std::mt19937_64 g(21);
  const double rate = 1e5, tau_ps = 2000.0, dur = 100.0;
  const auto a = poisson_stream(g, rate, dur);
  const auto b = poisson_stream(g, rate, dur);
  const double expected = rate * rate * tau_ps * 1e-12 * dur;
  EXPECT_NEAR(expected, 2000.0, 1e-9);
  const double acc = static_cast<double>(estimate_accidentals(a, b, {2000, 0}, default_accidental_shift(2000)));
  EXPECT_LT(std::abs(poisson_z(acc, expected)), 5.0) << acc;
  // Peak window sees the same background when nothing is correlated.
  const double coinc = static_cast<double>(count_coincidences(a, b, {2000, 0}));
  EXPECT_LT(std::abs(poisson_z(coinc, expected)), 5.0);
}

TEST(Accidentals, ScaleWithWindow) {
  std::mt19937_64 g(22);
  const auto a = poisson_stream(g, 1e5, 100.0);
  const auto b = poisson_stream(g, 1e5, 100.0);
  const double one = estimate_accidentals_mean(a, b, {2000, 0}, 500000, 10);
  const double two = estimate_accidentals_mean(a, b, {4000, 0}, 500000, 10);
  EXPECT_NEAR(two / one, 2.0, 0.05);
}

TEST(Accidentals, EmptyStreamGivesZero) {
  const std::vector<std::uint64_t> none;
  const std::vector<std::uint64_t> some{1, 2, 3, 4};
  EXPECT_EQ(estimate_accidentals(none, some, {2000, 0}, 100000), 0u);
  EXPECT_EQ(estimate_accidentals(some, none, {2000, 0}, 100000), 0u);
}

TEST(Accidentals, SparseCorrelatedPairsGiveZero) {
  std::vector<std::uint64_t> a, b;
  for (std::uint64_t k = 1; k <= 1000; ++k) {
    a.push_back(k * 10000000);
    b.push_back(k * 10000000 + 3000);
  }
  const CoincidenceResult r = analyze_window(a, b, {2000, 3000}, 1001 * 10000000ull);
  EXPECT_EQ(r.coincidences, 1000u);
  EXPECT_EQ(r.accidentals, 0u);
  EXPECT_TRUE(std::isinf(r.car()));
}

TEST(Accidentals, ShiftTooCloseRejected) {
  const std::vector<std::uint64_t> a{1}, b{2};
  EXPECT_THROW(estimate_accidentals(a, b, {2000, 0}, 19999), PreconditionError);
  EXPECT_THROW(estimate_accidentals(a, b, {2000, 0}, -19999), PreconditionError);
  EXPECT_NO_THROW(estimate_accidentals(a, b, {2000, 0}, 20000));
  EXPECT_THROW(estimate_accidentals_mean(a, b, {2000, 0}, 20000, 0), PreconditionError);
}

TEST(Histogram, SumsToPairsInRange) {
  std::mt19937_64 g(5);
  const auto a = random_sorted(g, 300, 2000000);
  const auto b = random_sorted(g, 300, 2000000);
  const TimeDiffHistogram h = time_difference_histogram(a, b, 50000, 100);
  std::uint64_t expected = 0;
  for (auto ta : a)
    for (auto tb : b) {
      const std::int64_t d = static_cast<std::int64_t>(tb) - static_cast<std::int64_t>(ta);
      if (d >= -50000 && d < 50000) ++expected;
    }
  EXPECT_EQ(h.total(), expected);
  EXPECT_EQ(h.bins.size(), 1000u);
  EXPECT_THROW(time_difference_histogram(a, b, 0, 100), PreconditionError);
}

TEST(Peak, ExactDelayWithinHalfBin) {
  std::vector<std::uint64_t> a, b;
  const std::int64_t D = 12345;
  for (std::uint64_t k = 1; k <= 5000; ++k) {
    a.push_back(k * 3000000);
    b.push_back(k * 3000000 + D);
  }
  const double coarse = find_peak_delay(a, b, 50000, 100);
  EXPECT_LE(std::abs(coarse - D), 50.0);
  EXPECT_NEAR(locate_peak_delay(a, b, 50000, 100, 500.0), static_cast<double>(D), 1e-9);
}

TEST(Peak, PureNoiseHasNoPeak) {
  const LinkScenario s = testing_support::noise_only_scenario(1e4);
  const SynthesisResult r = synthesize_run(s, 10.0, 8);
  EXPECT_THROW(find_peak_delay(r.alice.times(), r.bob.times(), 50000, 50), AnalysisError);
}

TEST(Peak, CalibratedLinkWithinJitter) {
  LinkScenario s = load_scenario(testing_support::source_path("scenarios/calibrated/entanglement_100km.toml"));
  s.analyzer_alice = AnalyzerSetting::H();
  s.analyzer_bob = AnalyzerSetting::linear(fringe_extrema(s.source.state(), s.analyzer_alice).argmax_rad);
  const LinkRun run = simulate_link(s, 20.0, 31);
  const double d = locate_peak_delay(run.alice.times(), run.bob.times(), kPeakSearchRangePs, kPeakSearchBinPs,
                                     0.5 * s.coincidence_window_ps);
  const double sigma = std::hypot(s.detector_alice.jitter_sigma_ps, s.detector_bob.jitter_sigma_ps);
  EXPECT_LE(std::abs(d - run.truth.differential_delay_ps), sigma);
}

TEST(Rates, MonteCarloMatchesAnalyticAtHundredKilometres) {
  const LinkScenario s = load_scenario(testing_support::source_path("scenarios/calibrated/entanglement_100km.toml"));
  const double dur = 30.0;
  const LinkRun run = simulate_link(s, dur, 57);
  const auto ta = run.alice.times();
  const auto tb = run.bob.times();
  const CoincidenceWindow w = window_for(s, run.truth.differential_delay_ps);
  const CoincidenceResult r = analyze_window(ta, tb, w, run.alice.duration_ps);
  const LinkMetrics m = expected_link_metrics(s, s.coincidence_window_ps);
  EXPECT_LT(std::abs(poisson_z(static_cast<double>(r.coincidences), m.total_coincidence_cps() * dur)), 5.0);
  const double acc = estimate_accidentals_mean(ta, tb, w, default_accidental_shift(w.width_ps), 10);
  // Mean of ten shifts: variance shrinks tenfold.
  EXPECT_LT(std::abs(acc - m.accidental_cps * dur) / std::sqrt(m.accidental_cps * dur / 10.0), 5.0);
  const double car = static_cast<double>(r.coincidences) / acc;
  EXPECT_NEAR(car / m.car, 1.0, 0.25);
}
