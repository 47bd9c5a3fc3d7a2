#pragma once

// Coincidence analysis over sorted time-tag streams.
//
// A window of full width tau centred on delay d pairs an Alice tag at tA with
// a Bob tag at tB when |tB - tA - d| <= tau/2. Matching is one-to-one and
// greedy: Alice tags are visited in time order and each takes the earliest
// unmatched Bob tag inside its window. Under that rule the matched Bob indices
// are increasing, so a single forward pointer over Bob's stream suffices.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "coexist/errors.hpp"
#include "coexist/tags.hpp"

namespace coexist {

struct CoincidenceWindow {
  std::int64_t width_ps = 2000;
  std::int64_t center_delay_ps = 0;

  void validate() const {
    if (width_ps <= 0) throw PreconditionError("coincidence window width must be > 0");
  }
};

struct CoincidenceResult {
  std::int64_t window_ps = 0;
  std::int64_t delay_ps = 0;
  std::uint64_t coincidences = 0;
  std::uint64_t accidentals = 0;
  std::uint64_t singles_a = 0;
  std::uint64_t singles_b = 0;
  std::uint64_t duration_ps = 0;
  bool has_accidentals = false;

  // coincidences / accidentals; infinity when no accidentals were counted.
  double car() const {
    if (accidentals == 0) return std::numeric_limits<double>::infinity();
    return static_cast<double>(coincidences) / static_cast<double>(accidentals);
  }

  double coincidence_rate_cps() const { return rate(coincidences); }
  double accidental_rate_cps() const { return rate(accidentals); }

 private:
  double rate(std::uint64_t n) const {
    return duration_ps == 0 ? 0.0 : static_cast<double>(n) / (static_cast<double>(duration_ps) * 1e-12);
  }
};

namespace detail {

inline void require_sorted(std::span<const std::uint64_t> t, const char* which) {
  if (!std::is_sorted(t.begin(), t.end())) {
    throw PreconditionError(std::string("tag stream ") + which + " is not sorted");
  }
}

// |delta| <= width/2 evaluated without fractional arithmetic.
inline bool inside(std::int64_t delta, std::int64_t width) {
  const std::int64_t twice = 2 * (delta < 0 ? -delta : delta);
  return twice <= width;
}

}  // namespace detail

inline std::uint64_t count_coincidences(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                                        const CoincidenceWindow& w) {
  w.validate();
  detail::require_sorted(a, "a");
  detail::require_sorted(b, "b");
  std::uint64_t count = 0;
  std::size_t j = 0;
  const std::size_t nb = b.size();
  for (const std::uint64_t ta : a) {
    const std::int64_t target = static_cast<std::int64_t>(ta) + w.center_delay_ps;
    while (j < nb && !detail::inside(static_cast<std::int64_t>(b[j]) - target, w.width_ps) &&
           static_cast<std::int64_t>(b[j]) < target) {
      ++j;
    }
    if (j < nb && detail::inside(static_cast<std::int64_t>(b[j]) - target, w.width_ps)) {
      ++count;
      ++j;
    }
  }
  return count;
}

inline CoincidenceResult count_coincidences(const TagStream& a, const TagStream& b, const CoincidenceWindow& w) {
  const auto ta = a.times();
  const auto tb = b.times();
  CoincidenceResult r;
  r.window_ps = w.width_ps;
  r.delay_ps = w.center_delay_ps;
  r.coincidences = count_coincidences(ta, tb, w);
  r.singles_a = ta.size();
  r.singles_b = tb.size();
  r.duration_ps = std::max(a.duration_ps, b.duration_ps);
  return r;
}

// Shifted-window accidental count: the same counter with the window moved far
// off the correlation peak.
inline std::uint64_t estimate_accidentals(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                                          const CoincidenceWindow& w, std::int64_t shift_ps) {
  w.validate();
  if (std::abs(shift_ps) < 10 * w.width_ps) {
    throw PreconditionError("accidental window shift must be at least 10 window widths");
  }
  return count_coincidences(a, b, CoincidenceWindow{w.width_ps, w.center_delay_ps + shift_ps});
}

// Mean over shifts k * shift_ps, k = 1..n, for a lower-variance estimate.
inline double estimate_accidentals_mean(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                                        const CoincidenceWindow& w, std::int64_t shift_ps, int n_shifts) {
  if (n_shifts < 1) throw PreconditionError("need at least one accidental shift");
  std::uint64_t total = 0;
  for (int k = 1; k <= n_shifts; ++k) total += estimate_accidentals(a, b, w, k * shift_ps);
  return static_cast<double>(total) / n_shifts;
}

// Default shift: 50 window widths, and never closer than 100 ns to the peak.
inline std::int64_t default_accidental_shift(std::int64_t width_ps) {
  return std::max<std::int64_t>(50 * width_ps, 100000);
}

inline CoincidenceResult analyze_window(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                                        const CoincidenceWindow& w, std::uint64_t duration_ps,
                                        std::int64_t shift_ps = 0) {
  CoincidenceResult r;
  r.window_ps = w.width_ps;
  r.delay_ps = w.center_delay_ps;
  r.coincidences = count_coincidences(a, b, w);
  r.accidentals = estimate_accidentals(a, b, w, shift_ps == 0 ? default_accidental_shift(w.width_ps) : shift_ps);
  r.has_accidentals = true;
  r.singles_a = a.size();
  r.singles_b = b.size();
  r.duration_ps = duration_ps;
  return r;
}

struct TimeDiffHistogram {
  std::int64_t bin_width_ps = 0;
  std::int64_t range_ps = 0;  // histogram covers [-range, range)
  std::vector<std::uint64_t> bins;

  std::int64_t bin_low(std::size_t i) const { return -range_ps + static_cast<std::int64_t>(i) * bin_width_ps; }
  double bin_center(std::size_t i) const { return static_cast<double>(bin_low(i)) + 0.5 * bin_width_ps; }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto v : bins) s += v;
    return s;
  }
};

// All-pairs histogram of (tB - tA) over [-range, range).
inline TimeDiffHistogram time_difference_histogram(std::span<const std::uint64_t> a,
                                                   std::span<const std::uint64_t> b, std::int64_t range_ps,
                                                   std::int64_t bin_ps) {
  if (range_ps <= 0 || bin_ps <= 0) throw PreconditionError("histogram range and bin width must be > 0");
  detail::require_sorted(a, "a");
  detail::require_sorted(b, "b");
  TimeDiffHistogram h;
  h.bin_width_ps = bin_ps;
  h.range_ps = range_ps;
  const auto nbins = static_cast<std::size_t>((2 * range_ps + bin_ps - 1) / bin_ps);
  h.bins.assign(nbins, 0);
  std::size_t lo = 0;
  for (const std::uint64_t ta : a) {
    const std::int64_t t = static_cast<std::int64_t>(ta);
    while (lo < b.size() && static_cast<std::int64_t>(b[lo]) - t < -range_ps) ++lo;
    for (std::size_t k = lo; k < b.size(); ++k) {
      const std::int64_t d = static_cast<std::int64_t>(b[k]) - t;
      if (d >= range_ps) break;
      const auto idx = static_cast<std::size_t>((d + range_ps) / bin_ps);
      if (idx < nbins) ++h.bins[idx];
    }
  }
  return h;
}

struct PeakOptions {
  std::int64_t neighborhood_bins = 2;
  double significance_sigma = 5.0;
  int max_refinements = 20;
};

// Locates the correlation peak: the maximal bin (earliest on ties), then a
// count-weighted centroid over the neighbourhood, re-centred on the centroid
// until it stops moving.
inline double find_peak_delay(const TimeDiffHistogram& h, const PeakOptions& opt = {}) {
  if (h.bins.empty()) throw AnalysisError("no peak: empty histogram");
  std::size_t best = 0;
  for (std::size_t i = 1; i < h.bins.size(); ++i) {
    if (h.bins[i] > h.bins[best]) best = i;
  }
  const double mean = static_cast<double>(h.total()) / static_cast<double>(h.bins.size());
  const double peak = static_cast<double>(h.bins[best]);
  if (!(peak > mean + opt.significance_sigma * std::sqrt(std::max(mean, 1.0)))) {
    throw AnalysisError("no peak: histogram maximum is not significant");
  }
  const auto n = static_cast<std::int64_t>(h.bins.size());
  std::int64_t centre = static_cast<std::int64_t>(best);
  double centroid = h.bin_center(best);
  for (int it = 0; it < opt.max_refinements; ++it) {
    const std::int64_t lo = std::max<std::int64_t>(0, centre - opt.neighborhood_bins);
    const std::int64_t hi = std::min<std::int64_t>(n - 1, centre + opt.neighborhood_bins);
    double wsum = 0.0, xsum = 0.0;
    for (std::int64_t i = lo; i <= hi; ++i) {
      const double c = static_cast<double>(h.bins[static_cast<std::size_t>(i)]);
      wsum += c;
      xsum += c * h.bin_center(static_cast<std::size_t>(i));
    }
    centroid = xsum / wsum;
    const auto next = static_cast<std::int64_t>(std::floor((centroid + static_cast<double>(h.range_ps)) /
                                                           static_cast<double>(h.bin_width_ps)));
    const std::int64_t clamped = std::clamp<std::int64_t>(next, 0, n - 1);
    if (clamped == centre) break;
    centre = clamped;
  }
  return centroid;
}

// Sub-bin refinement on the raw differences: the mean of all (tB - tA) within
// half_width of the current estimate, iterated. A flat background is
// symmetric about the estimate, so the fixed point is the peak centre.
inline double refine_peak_delay(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b, double initial_ps,
                                double half_width_ps, int max_iter = 500, double tol_ps = 1e-3) {
  if (!(half_width_ps > 0.0)) throw PreconditionError("peak refinement half width must be > 0");
  const double reach = 2.0 * half_width_ps + std::abs(initial_ps);
  std::vector<double> diffs;
  std::size_t lo = 0;
  for (const std::uint64_t ta : a) {
    const double t = static_cast<double>(ta);
    while (lo < b.size() && static_cast<double>(b[lo]) - t < initial_ps - reach) ++lo;
    for (std::size_t k = lo; k < b.size(); ++k) {
      const double d = static_cast<double>(b[k]) - t;
      if (d > initial_ps + reach) break;
      diffs.push_back(d);
    }
  }
  double c = initial_ps;
  for (int it = 0; it < max_iter; ++it) {
    double s = 0.0;
    std::size_t n = 0;
    for (double d : diffs) {
      if (std::abs(d - c) <= half_width_ps) {
        s += d;
        ++n;
      }
    }
    if (n == 0) throw AnalysisError("no peak: no time differences near the estimate");
    const double next = s / static_cast<double>(n);
    const bool done = std::abs(next - c) < tol_ps;
    c = next;
    if (done) break;
  }
  return c;
}

inline double find_peak_delay(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                              std::int64_t search_range_ps, std::int64_t bin_ps, const PeakOptions& opt = {}) {
  return find_peak_delay(time_difference_histogram(a, b, search_range_ps, bin_ps), opt);
}

// Coarse histogram peak, then sub-bin refinement.
inline double locate_peak_delay(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                                std::int64_t search_range_ps, std::int64_t bin_ps, double half_width_ps,
                                const PeakOptions& opt = {}) {
  const double coarse = find_peak_delay(a, b, search_range_ps, bin_ps, opt);
  return refine_peak_delay(a, b, coarse, half_width_ps);
}

// One result per window width, all at the same delay.
inline std::vector<CoincidenceResult> window_sweep(std::span<const std::uint64_t> a,
                                                   std::span<const std::uint64_t> b,
                                                   std::span<const std::int64_t> widths_ps, std::int64_t delay_ps,
                                                   std::uint64_t duration_ps, std::int64_t shift_ps = 0) {
  std::vector<CoincidenceResult> out;
  out.reserve(widths_ps.size());
  std::int64_t shift = shift_ps;
  if (shift == 0 && !widths_ps.empty()) {
    shift = default_accidental_shift(*std::max_element(widths_ps.begin(), widths_ps.end()));
  }
  for (const std::int64_t w : widths_ps) {
    out.push_back(analyze_window(a, b, CoincidenceWindow{w, delay_ps}, duration_ps, shift));
  }
  return out;
}

}  // namespace coexist
