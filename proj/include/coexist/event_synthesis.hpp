#pragma once

// Monte Carlo time-tag generation for the two receiver nodes, plus the
// closed-form rates the generator is expected to reproduce.
//
// Pair emission is a Poisson process. Each pair's outcome (both photons
// detected, only Alice's, only Bob's, neither) is an independent categorical
// draw, so by Poisson thinning the three detected categories are independent
// Poisson processes with rates R*p_both, R*p_alice_only, R*p_bob_only. The
// generator samples those three processes directly instead of drawing every
// emitted pair, which keeps the cost proportional to detected clicks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "coexist/clock.hpp"
#include "coexist/errors.hpp"
#include "coexist/quantum_state.hpp"
#include "coexist/rng.hpp"
#include "coexist/scenario.hpp"
#include "coexist/tags.hpp"

namespace coexist {

inline constexpr std::uint8_t kAliceChannel = 1;
inline constexpr std::uint8_t kBobChannel = 2;

inline std::uint8_t default_channel(Node n) { return n == Node::Alice ? kAliceChannel : kBobChannel; }

// Detection probabilities of one emitted pair.
struct PairOutcome {
  double both = 0.0;
  double alice_only = 0.0;
  double bob_only = 0.0;
};

inline PairOutcome pair_outcome(const LinkScenario& s) {
  const double ea = s.arm_efficiency(Node::Alice);
  const double eb = s.arm_efficiency(Node::Bob);
  double p_ab = 1.0, p_a = 1.0, p_b = 1.0;
  if (s.has_analyzers()) {
    const TwoQubitState rho = s.source.state();
    p_ab = coincidence_probability(rho, s.analyzer_alice, s.analyzer_bob);
    p_a = alice_pass_probability(rho, s.analyzer_alice);
    p_b = bob_pass_probability(rho, s.analyzer_bob);
  }
  PairOutcome o;
  o.both = std::max(0.0, ea * eb * p_ab);
  o.alice_only = std::max(0.0, ea * p_a - o.both);
  o.bob_only = std::max(0.0, eb * p_b - o.both);
  return o;
}

struct NodeTruth {
  std::uint64_t signal_tags = 0;
  std::uint64_t raman_tags = 0;
  std::uint64_t dark_tags = 0;
  std::uint64_t recorded_tags = 0;  // after clock transform and dead time

  std::uint64_t emitted() const { return signal_tags + raman_tags + dark_tags; }
};

struct ClockSample {
  double true_time_s;
  double alice_offset_ps;
  double bob_offset_ps;
};

struct GroundTruth {
  NodeTruth alice;
  NodeTruth bob;
  std::uint64_t true_pairs = 0;           // both photons detected, before dead time
  std::uint64_t true_pairs_recorded = 0;  // both tags survive dead time
  double differential_delay_ps = 0.0;     // true-time tB - tA of a pair
  std::vector<ClockSample> clock_trajectory;
};

struct SynthesisResult {
  TagStream alice;
  TagStream bob;
  GroundTruth truth;
  ClockRealization clock_alice;
  ClockRealization clock_bob;
};

namespace detail {

enum class TagKind : std::uint8_t { Signal, Raman, Dark };

struct RawTag {
  double t;
  std::uint32_t pair;
  TagKind kind;
};

inline constexpr std::uint32_t kNoPair = std::numeric_limits<std::uint32_t>::max();

inline void poisson_times(Rng& rng, double rate_cps, double start_ps, double end_ps, std::vector<double>& out) {
  if (!(rate_cps > 0.0) || !(end_ps > start_ps)) return;
  const double rate_per_ps = rate_cps * 1e-12;
  double t = start_ps + rng.exponential(rate_per_ps);
  while (t < end_ps) {
    out.push_back(t);
    t += rng.exponential(rate_per_ps);
  }
}

// Non-paralyzable dead time: a click within dead_ps of the last recorded click
// is lost. Input sorted by time.
inline std::vector<RawTag> apply_dead_time(const std::vector<RawTag>& in, double dead_ps) {
  std::vector<RawTag> out;
  out.reserve(in.size());
  double last = -std::numeric_limits<double>::infinity();
  for (const auto& t : in) {
    if (t.t - last < dead_ps) continue;
    out.push_back(t);
    last = t.t;
  }
  return out;
}

}  // namespace detail

inline SynthesisResult synthesize_run(const LinkScenario& scenario, double duration_s, std::uint64_t seed) {
  scenario.validate();
  if (!(duration_s > 0.0)) throw ConfigError("run duration must be > 0");
  const double T = duration_s * 1e12;
  if (T > 9e15) throw ConfigError("run duration too long for picosecond integer timestamps");

  using detail::RawTag;
  using detail::TagKind;

  SynthesisResult res;
  GroundTruth& truth = res.truth;

  const PairOutcome outcome = pair_outcome(scenario);
  const double R = scenario.source.pair_rate_cps;
  const double delay_a = scenario.arm(Node::Alice).delay_ps();
  const double delay_b = scenario.arm(Node::Bob).delay_ps();
  truth.differential_delay_ps = delay_b - delay_a;

  auto spread = [&](Node n) {
    const FiberSpec& f = scenario.arm(n);
    const double d = f.dispersion_spread_ps_per_km * f.length_km;
    const double j = scenario.detector(n).jitter_sigma_ps;
    return std::sqrt(d * d + j * j);
  };
  const double sigma_a = spread(Node::Alice);
  const double sigma_b = spread(Node::Bob);

  // Emissions start early enough that the first recorded second is already
  // in steady state.
  const double lead = std::max(delay_a, delay_b) + 10.0 * std::max(sigma_a, sigma_b) + 1.0;

  Rng rng_pairs(derive_seed(seed, 1));
  Rng rng_alice_only(derive_seed(seed, 2));
  Rng rng_bob_only(derive_seed(seed, 3));
  Rng rng_jitter(derive_seed(seed, 4));
  Rng rng_noise_a(derive_seed(seed, 5));
  Rng rng_noise_b(derive_seed(seed, 6));

  std::vector<RawTag> raw_a, raw_b;
  std::vector<double> times;

  auto arrival = [&](double emit, double delay, double sigma) {
    return emit + delay + (sigma > 0.0 ? sigma * rng_jitter.normal() : 0.0);
  };
  auto in_window = [&](double t) { return t >= 0.0 && t < T; };

  times.clear();
  detail::poisson_times(rng_pairs, R * outcome.both, -lead, T, times);
  std::uint32_t pair_id = 0;
  for (double e : times) {
    const double ta = arrival(e, delay_a, sigma_a);
    const double tb = arrival(e, delay_b, sigma_b);
    const bool ka = in_window(ta), kb = in_window(tb);
    if (ka && kb) {
      raw_a.push_back({ta, pair_id, TagKind::Signal});
      raw_b.push_back({tb, pair_id, TagKind::Signal});
      ++truth.true_pairs;
      ++pair_id;
    } else {
      if (ka) raw_a.push_back({ta, detail::kNoPair, TagKind::Signal});
      if (kb) raw_b.push_back({tb, detail::kNoPair, TagKind::Signal});
    }
  }

  times.clear();
  detail::poisson_times(rng_alice_only, R * outcome.alice_only, -lead, T, times);
  for (double e : times) {
    const double ta = arrival(e, delay_a, sigma_a);
    if (in_window(ta)) raw_a.push_back({ta, detail::kNoPair, TagKind::Signal});
  }
  times.clear();
  detail::poisson_times(rng_bob_only, R * outcome.bob_only, -lead, T, times);
  for (double e : times) {
    const double tb = arrival(e, delay_b, sigma_b);
    if (in_window(tb)) raw_b.push_back({tb, detail::kNoPair, TagKind::Signal});
  }

  const double raman = scenario.raman_rate_cps();
  auto add_noise = [&](Rng& rng, Node n, std::vector<RawTag>& raw) {
    times.clear();
    detail::poisson_times(rng, raman, 0.0, T, times);
    for (double t : times) raw.push_back({t, detail::kNoPair, TagKind::Raman});
    times.clear();
    detail::poisson_times(rng, scenario.detector(n).dark_rate_cps, 0.0, T, times);
    for (double t : times) raw.push_back({t, detail::kNoPair, TagKind::Dark});
  };
  add_noise(rng_noise_a, Node::Alice, raw_a);
  add_noise(rng_noise_b, Node::Bob, raw_b);

  auto tally = [](const std::vector<RawTag>& raw, NodeTruth& nt) {
    for (const auto& t : raw) {
      switch (t.kind) {
        case TagKind::Signal: ++nt.signal_tags; break;
        case TagKind::Raman: ++nt.raman_tags; break;
        case TagKind::Dark: ++nt.dark_tags; break;
      }
    }
  };
  tally(raw_a, truth.alice);
  tally(raw_b, truth.bob);

  // One time tagger serves both detectors in the noise-characterization layout.
  res.clock_alice = ClockRealization(scenario.clock(Node::Alice), T + lead, derive_seed(seed, 7));
  res.clock_bob = scenario.noise_characterization()
                      ? res.clock_alice
                      : ClockRealization(scenario.clock(Node::Bob), T + lead, derive_seed(seed, 8));

  auto to_local = [](std::vector<RawTag>& raw, const ClockRealization& clk) {
    std::vector<RawTag> out;
    out.reserve(raw.size());
    for (auto t : raw) {
      t.t = std::round(clk.local_ps(t.t));
      if (t.t < 0.0) continue;
      out.push_back(t);
    }
    std::stable_sort(out.begin(), out.end(), [](const RawTag& x, const RawTag& y) { return x.t < y.t; });
    raw = std::move(out);
  };
  to_local(raw_a, res.clock_alice);
  to_local(raw_b, res.clock_bob);

  const auto rec_a = detail::apply_dead_time(raw_a, scenario.detector(Node::Alice).dead_time_ps);
  const auto rec_b = detail::apply_dead_time(raw_b, scenario.detector(Node::Bob).dead_time_ps);
  truth.alice.recorded_tags = rec_a.size();
  truth.bob.recorded_tags = rec_b.size();

  std::vector<bool> seen(pair_id, false);
  for (const auto& t : rec_a) {
    if (t.pair != detail::kNoPair) seen[t.pair] = true;
  }
  for (const auto& t : rec_b) {
    if (t.pair != detail::kNoPair && seen[t.pair]) ++truth.true_pairs_recorded;
  }

  auto emit = [](const std::vector<RawTag>& rec, Node n, std::uint64_t duration, TagStream& out) {
    out.duration_ps = duration;
    out.tags.reserve(rec.size());
    const std::uint8_t ch = default_channel(n);
    for (const auto& t : rec) out.tags.push_back({static_cast<std::uint64_t>(t.t), n, ch});
  };
  const auto duration = static_cast<std::uint64_t>(std::llround(T));
  emit(rec_a, Node::Alice, duration, res.alice);
  emit(rec_b, Node::Bob, duration, res.bob);

  const double step_s = std::max(duration_s / 100.0, 1e-3);
  for (double ts = 0.0; ts <= duration_s + 1e-12; ts += step_s) {
    truth.clock_trajectory.push_back(
        {ts, res.clock_alice.offset_ps(ts * 1e12), res.clock_bob.offset_ps(ts * 1e12)});
  }
  return res;
}

// Closed-form rates for one scenario and full-width coincidence window.
struct LinkMetrics {
  double singles_a_cps = 0.0;  // recorded, after dead time
  double singles_b_cps = 0.0;
  double true_coincidence_cps = 0.0;
  double accidental_cps = 0.0;
  double car = 0.0;  // (true + accidental) / accidental
  bool car_unbounded = false;
  double capture_fraction = 1.0;
  std::optional<double> visibility;  // fringe visibility for Alice's analyzer setting

  double total_coincidence_cps() const { return true_coincidence_cps + accidental_cps; }
};

inline double window_capture_fraction(double window_ps, double sigma_ps) {
  if (!(sigma_ps > 0.0)) return 1.0;
  return std::erf(0.5 * window_ps / (std::sqrt(2.0) * sigma_ps));
}

// Fraction of Poisson arrivals a non-paralyzable detector records.
inline double dead_time_factor(double rate_cps, double dead_ps) { return 1.0 / (1.0 + rate_cps * dead_ps * 1e-12); }

inline LinkMetrics expected_link_metrics(const LinkScenario& s, double window_ps) {
  s.validate();
  if (!(window_ps > 0.0)) throw ConfigError("coincidence window must be > 0");

  const double R = s.source.pair_rate_cps;
  const double ea = s.arm_efficiency(Node::Alice);
  const double eb = s.arm_efficiency(Node::Bob);
  const PairOutcome o = pair_outcome(s);
  const double tau = window_ps * 1e-12;

  const double raw_a = R * (o.both + o.alice_only) + s.noise_rate_cps(Node::Alice);
  const double raw_b = R * (o.both + o.bob_only) + s.noise_rate_cps(Node::Bob);
  const double ka = dead_time_factor(raw_a, s.detector(Node::Alice).dead_time_ps);
  const double kb = dead_time_factor(raw_b, s.detector(Node::Bob).dead_time_ps);

  LinkMetrics m;
  m.singles_a_cps = raw_a * ka;
  m.singles_b_cps = raw_b * kb;
  if (!(m.singles_a_cps > 0.0) || !(m.singles_b_cps > 0.0)) {
    throw AnalysisError("CAR undefined: a node records no singles");
  }
  m.capture_fraction = window_capture_fraction(window_ps, s.coincidence_peak_sigma_ps());
  m.true_coincidence_cps = R * o.both * m.capture_fraction * ka * kb;
  m.accidental_cps = m.singles_a_cps * m.singles_b_cps * tau;
  if (m.accidental_cps > 0.0) {
    m.car = m.total_coincidence_cps() / m.accidental_cps;
  } else {
    m.car = std::numeric_limits<double>::infinity();
    m.car_unbounded = true;
  }

  if (s.has_analyzers()) {
    // Signal fringe over Bob's angle on a flat accidental floor. The floor uses
    // Bob's angle-averaged singles.
    const TwoQubitState rho = s.source.state();
    const FringeExtrema ex = fringe_extrema(rho, s.analyzer_alice);
    const double pa = alice_pass_probability(rho, s.analyzer_alice);
    const double raw_a_f = R * ea * pa + s.noise_rate_cps(Node::Alice);
    const double raw_b_f = R * eb * 0.5 + s.noise_rate_cps(Node::Bob);
    const double ka_f = dead_time_factor(raw_a_f, s.detector(Node::Alice).dead_time_ps);
    const double kb_f = dead_time_factor(raw_b_f, s.detector(Node::Bob).dead_time_ps);
    const double scale = R * ea * eb * m.capture_fraction * ka_f * kb_f;
    const double floor = raw_a_f * ka_f * raw_b_f * kb_f * tau;
    const double nmax = scale * ex.max + floor;
    const double nmin = scale * ex.min + floor;
    m.visibility = (nmax + nmin) > 0.0 ? (nmax - nmin) / (nmax + nmin) : 0.0;
  }
  return m;
}

// Expected windowed coincidence rate (true + accidental) for explicit analyzer
// settings, with singles computed for those settings.
inline double expected_coincidence_rate(const LinkScenario& s, const TwoQubitState& rho,
                                        const AnalyzerSetting& alice, const AnalyzerSetting& bob, double window_ps) {
  const double R = s.source.pair_rate_cps;
  const double ea = s.arm_efficiency(Node::Alice);
  const double eb = s.arm_efficiency(Node::Bob);
  const double pab = coincidence_probability(rho, alice, bob);
  const double raw_a = R * ea * alice_pass_probability(rho, alice) + s.noise_rate_cps(Node::Alice);
  const double raw_b = R * eb * bob_pass_probability(rho, bob) + s.noise_rate_cps(Node::Bob);
  const double ka = dead_time_factor(raw_a, s.detector(Node::Alice).dead_time_ps);
  const double kb = dead_time_factor(raw_b, s.detector(Node::Bob).dead_time_ps);
  const double cap = window_capture_fraction(window_ps, s.coincidence_peak_sigma_ps());
  return R * ea * eb * pab * cap * ka * kb + raw_a * ka * raw_b * kb * window_ps * 1e-12;
}

inline double expected_coincidence_rate(const LinkScenario& s, const AnalyzerSetting& alice,
                                        const AnalyzerSetting& bob, double window_ps) {
  return expected_coincidence_rate(s, s.source.state(), alice, bob, window_ps);
}

}  // namespace coexist
