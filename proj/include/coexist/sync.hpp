#pragma once

// Two-way time transfer between a leader and a follower clock over the
// classical path, with a phase/frequency servo that disciplines the follower.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coexist/channel_model.hpp"
#include "coexist/clock.hpp"
#include "coexist/errors.hpp"
#include "coexist/rng.hpp"
#include "coexist/scenario.hpp"
#include "coexist/tags.hpp"

namespace coexist {

// t1: leader send, t2: follower receive, t3: follower send, t4: leader
// receive. t1/t4 read the leader clock, t2/t3 the follower clock.
struct SyncExchange {
  std::int64_t t1 = 0;
  std::int64_t t2 = 0;
  std::int64_t t3 = 0;
  std::int64_t t4 = 0;

  void validate() const {
    if (t4 < t1 || t3 < t2) throw PreconditionError("sync exchange timestamps out of order");
  }
};

struct DelayAsymmetry {
  double forward_delay_ps = 0.0;  // leader -> follower
  double reverse_delay_ps = 0.0;  // follower -> leader

  void validate() const {
    if (!(forward_delay_ps > 0.0) || !(reverse_delay_ps > 0.0)) throw ConfigError("link delays must be > 0");
  }
  double asymmetry_ps() const { return forward_delay_ps - reverse_delay_ps; }
};

struct OffsetDelay {
  std::int64_t offset_ps = 0;  // follower minus leader
  std::int64_t rtt_ps = 0;
};

// n / 2 rounded half to even.
inline std::int64_t halve_round_even(std::int64_t n) {
  const std::int64_t q = n / 2;  // truncates toward zero
  const std::int64_t r = n - 2 * q;
  if (r == 0) return q;
  // Exactly half-way: pick the even neighbour.
  const std::int64_t lo = r > 0 ? q : q - 1;
  return (lo % 2 == 0) ? lo : lo + 1;
}

inline OffsetDelay estimate_offset_delay(const SyncExchange& x) {
  x.validate();
  const std::int64_t ms = x.t2 - x.t1;
  const std::int64_t sm = x.t4 - x.t3;
  return {halve_round_even(ms - sm), ms + sm};
}

// Classical path delays for a scenario; throws when the power budget does not
// close, since no exchange can then take place.
inline DelayAsymmetry sync_link_for(const LinkScenario& s) {
  const FiberSpec path = s.classical_path();
  const double margin = classical_link_margin(s.classical, path);
  if (margin < 0.0) {
    throw LinkDownError("classical link DOWN (transceiver pair does not close the power budget): margin " + std::to_string(margin) + " dB over " +
                        std::to_string(path.length_km) + " km with receiver sensitivity " +
                        std::to_string(s.classical.receiver_sensitivity_dbm) + " dBm");
  }
  DelayAsymmetry d;
  d.forward_delay_ps = path.delay_ps();
  d.reverse_delay_ps = path.delay_ps() + s.sync.asymmetry_ps_per_km * path.length_km;
  d.validate();
  return d;
}

inline SyncExchange perform_exchange(const ClockRealization& leader, const ClockRealization& follower,
                                     const DelayAsymmetry& link, double true_time_ps, double timestamp_jitter_ps,
                                     Rng& rng, double turnaround_ps = 1e6, bool link_up = true) {
  if (!link_up) throw LinkDownError("classical link DOWN: exchange unavailable");
  link.validate();
  auto stamp = [&](double v) {
    const double j = timestamp_jitter_ps > 0.0 ? timestamp_jitter_ps * rng.normal() : 0.0;
    return static_cast<std::int64_t>(std::llround(v + j));
  };
  const double send = true_time_ps;
  const double arrive = send + link.forward_delay_ps;
  const double reply = arrive + turnaround_ps;
  const double back = reply + link.reverse_delay_ps;
  SyncExchange x;
  x.t1 = stamp(leader.local_ps(send));
  x.t2 = stamp(follower.local_ps(arrive));
  x.t3 = stamp(follower.local_ps(reply));
  x.t4 = stamp(leader.local_ps(back));
  if (x.t3 < x.t2) x.t3 = x.t2;
  if (x.t4 < x.t1) x.t4 = x.t1;
  return x;
}

inline SyncExchange perform_exchange(const ClockRealization& leader, const ClockRealization& follower,
                                     const DelayAsymmetry& link, double true_time_ps, double timestamp_jitter_ps,
                                     std::uint64_t seed) {
  Rng rng(seed);
  return perform_exchange(leader, follower, link, true_time_ps, timestamp_jitter_ps, rng);
}

// Piecewise-linear correction of the follower's raw local time:
// corrected = raw - (phase + freq * (raw - anchor)) on each segment.
class CorrectionSchedule {
 public:
  struct Segment {
    double raw_start_ps;
    double anchor_ps;
    double phase_ps;
    double freq;  // ps per ps
  };

  void push(const Segment& s) { segments_.push_back(s); }
  bool empty() const { return segments_.empty(); }
  const std::vector<Segment>& segments() const { return segments_; }

  double correction_ps(double raw_ps) const {
    if (segments_.empty()) return 0.0;
    std::size_t lo = 0, hi = segments_.size();
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (segments_[mid].raw_start_ps <= raw_ps) lo = mid;
      else hi = mid;
    }
    const Segment& s = segments_[lo];
    return s.phase_ps + s.freq * (raw_ps - s.anchor_ps);
  }

  double corrected_ps(double raw_ps) const { return raw_ps - correction_ps(raw_ps); }

  // Re-times a follower stream onto the leader's time base.
  TagStream apply(const TagStream& raw) const {
    TagStream out;
    out.duration_ps = raw.duration_ps;
    out.tags.reserve(raw.tags.size());
    for (const auto& t : raw.tags) {
      const double c = std::round(corrected_ps(static_cast<double>(t.time_ps)));
      if (c < 0.0) continue;
      out.tags.push_back({static_cast<std::uint64_t>(c), t.node, t.channel});
    }
    out.sort();
    return out;
  }

 private:
  std::vector<Segment> segments_;
};

struct ServoState {
  double estimated_offset_ps = 0.0;
  double estimated_rtt_ps = 0.0;
  double proportional_gain = 0.3;
  double integral_gain = 0.05;
  double accumulated_integral = 0.0;  // frequency correction, ps per ps
  double phase_ps = 0.0;
  double anchor_raw_ps = 0.0;
  std::uint64_t samples = 0;

  double correction_at(double raw_ps) const { return phase_ps + accumulated_integral * (raw_ps - anchor_raw_ps); }

  // Consumes one offset measurement of the raw follower clock taken at raw
  // follower time raw_ps. The first sample steps the phase; the second sets
  // the frequency from the drift accumulated since; later samples run a PI
  // loop on the residual.
  void update(double measured_offset_ps, double raw_ps) {
    estimated_offset_ps = measured_offset_ps;
    const double residual = measured_offset_ps - correction_at(raw_ps);
    if (samples == 0) {
      phase_ps = measured_offset_ps;
      accumulated_integral = 0.0;
    } else if (samples == 1) {
      accumulated_integral += residual / (raw_ps - anchor_raw_ps);
      phase_ps = measured_offset_ps;
    } else {
      const double dt = raw_ps - anchor_raw_ps;
      const double phase_now = correction_at(raw_ps);
      accumulated_integral += integral_gain * residual / dt;
      phase_ps = phase_now + proportional_gain * residual;
    }
    anchor_raw_ps = raw_ps;
    ++samples;
  }
};

struct ResidualSample {
  double time_s;
  double residual_ps;
};

struct SyncSessionOptions {
  // Simulated outage: exchanges at or after this time fail.
  std::optional<double> link_down_after_s;
  // Leading share of the residual series excluded from steady-state statistics.
  double settle_fraction = 0.5;
  // First exchange time; negative values let the servo lock before t = 0.
  double start_s = 0.0;
};

struct SyncSession {
  std::vector<ResidualSample> residuals;  // true residual just before each correction
  CorrectionSchedule correction;
  std::vector<SyncExchange> exchanges;
  bool truncated = false;
  std::string status = "ok";
  double steady_mean_ps = 0.0;
  double steady_sigma_ps = 0.0;
  double steady_max_abs_ps = 0.0;
};

inline SyncSession run_sync_session(const LinkScenario& scenario, const ClockRealization& leader,
                                    const ClockRealization& follower, double duration_s, double exchange_interval_s,
                                    std::uint64_t seed, const SyncSessionOptions& opt = {}) {
  scenario.validate();
  if (!(duration_s > 0.0) || !(exchange_interval_s > 0.0)) throw ConfigError("sync session needs positive times");
  const DelayAsymmetry link = sync_link_for(scenario);

  // Calibrated asymmetry: the servo removes this share of the offset bias.
  const double known_bias_ps = scenario.sync.asymmetry_correction * 0.5 * link.asymmetry_ps();

  ServoState servo;
  servo.proportional_gain = scenario.sync.proportional_gain;
  servo.integral_gain = scenario.sync.integral_gain;

  Rng rng(derive_seed(seed, 0x51c));
  SyncSession out;
  const auto n =
      static_cast<std::size_t>(std::floor((duration_s - opt.start_s) / exchange_interval_s + 1e-9)) + 1;
  for (std::size_t k = 0; k < n; ++k) {
    const double t_s = opt.start_s + static_cast<double>(k) * exchange_interval_s;
    const double t_ps = t_s * 1e12;
    if (opt.link_down_after_s && t_s >= *opt.link_down_after_s) {
      out.truncated = true;
      out.status = "link down at t=" + std::to_string(t_s) + " s; series truncated";
      break;
    }
    const SyncExchange x = perform_exchange(leader, follower, link, t_ps, scenario.sync.timestamp_jitter_ps, rng,
                                            scenario.sync.turnaround_ps);
    out.exchanges.push_back(x);
    const OffsetDelay od = estimate_offset_delay(x);
    servo.estimated_rtt_ps = static_cast<double>(od.rtt_ps);

    // Follower receive instant, in raw follower time and in true time.
    const double raw = static_cast<double>(x.t2);
    const double true_rx = t_ps + link.forward_delay_ps;
    if (k > 0) {
      const double residual = follower.local_ps(true_rx) - servo.correction_at(follower.local_ps(true_rx)) -
                              leader.local_ps(true_rx);
      out.residuals.push_back({true_rx * 1e-12, residual});
    }
    servo.update(static_cast<double>(od.offset_ps) - known_bias_ps, raw);
    out.correction.push({out.correction.empty() ? -1e300 : raw, servo.anchor_raw_ps, servo.phase_ps,
                         servo.accumulated_integral});
  }

  const std::size_t first = static_cast<std::size_t>(std::floor(opt.settle_fraction * out.residuals.size()));
  if (first < out.residuals.size()) {
    double s = 0.0, s2 = 0.0, mx = 0.0;
    const double m = static_cast<double>(out.residuals.size() - first);
    for (std::size_t i = first; i < out.residuals.size(); ++i) {
      const double r = out.residuals[i].residual_ps;
      s += r;
      s2 += r * r;
      mx = std::max(mx, std::abs(r));
    }
    out.steady_mean_ps = s / m;
    out.steady_sigma_ps = std::sqrt(std::max(0.0, s2 / m - out.steady_mean_ps * out.steady_mean_ps));
    out.steady_max_abs_ps = mx;
  }
  return out;
}

// Same clock realizations as synthesize_run(scenario, ..., seed) uses.
inline SyncSession run_sync_session(const LinkScenario& scenario, double duration_s, double exchange_interval_s,
                                    std::uint64_t seed, const SyncSessionOptions& opt = {}) {
  const double horizon = duration_s * 1e12 + 1e12;
  const ClockRealization leader(scenario.clock(Node::Alice), horizon, derive_seed(seed, 7));
  const ClockRealization follower(scenario.clock(Node::Bob), horizon, derive_seed(seed, 8));
  return run_sync_session(scenario, leader, follower, duration_s, exchange_interval_s, seed, opt);
}

}  // namespace coexist
