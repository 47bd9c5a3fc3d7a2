#pragma once

// Statistical reductions: sine-square fringe fits, CHSH S with uncertainty,
// and two-qubit state tomography (linear inversion and maximum likelihood).

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "coexist/errors.hpp"
#include "coexist/quantum_state.hpp"
#include "coexist/rng.hpp"

namespace coexist {

// ---------------------------------------------------------------- fringes

struct FringePoint {
  double bob_angle_rad = 0.0;
  double count = 0.0;
  double integration_s = 1.0;
};

struct FringeScan {
  double alice_basis_rad = 0.0;
  std::vector<FringePoint> points;

  void validate() const {
    if (points.size() < 6) throw PreconditionError("fringe scan needs at least 6 points");
    double lo = points.front().bob_angle_rad, hi = lo;
    for (const auto& p : points) {
      if (!(p.count >= 0.0)) throw PreconditionError("fringe counts must be >= 0");
      if (!(p.integration_s > 0.0)) throw PreconditionError("integration time must be > 0");
      lo = std::min(lo, p.bob_angle_rad);
      hi = std::max(hi, p.bob_angle_rad);
    }
    if (hi - lo < kPi - 1e-9) throw PreconditionError("fringe scan must span at least pi of Bob angle");
  }
};

struct FringeFit {
  double alice_basis_rad = 0.0;
  double amplitude = 0.0;  // A, counts/s
  double baseline = 0.0;   // B, counts/s
  double phase_rad = 0.0;  // phi in [-pi/2, pi/2)
  double visibility = 0.0;
  double chi2 = 0.0;
  int iterations = 0;
  bool converged = false;

  double rate(double theta) const {
    const double s = std::sin(theta - phase_rad);
    return amplitude * s * s + baseline;
  }
};

class FitError : public AnalysisError {
 public:
  FitError(const std::string& what, FringeFit best) : AnalysisError(what), best_(best) {}
  const FringeFit& best_candidate() const noexcept { return best_; }

 private:
  FringeFit best_;
};

struct VisibilityResult {
  double value = 0.0;
  bool violates_bell = false;  // strictly above 1/sqrt(2)
};

inline VisibilityResult visibility_from(double amplitude, double baseline) {
  const double den = amplitude + 2.0 * baseline;
  if (!(den > 0.0)) throw AnalysisError("visibility undefined: A + 2B = 0");
  const double v = amplitude / den;
  return {v, v > kBellThresholdVisibility};
}

inline VisibilityResult visibility(const FringeFit& fit) { return visibility_from(fit.amplitude, fit.baseline); }

namespace detail {

struct FringeLm {
  std::vector<double> theta, rate, weight;

  double chi2(double A, double B, double phi) const {
    double c = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double s = std::sin(theta[i] - phi);
      const double r = rate[i] - (A * s * s + B);
      c += weight[i] * r * r;
    }
    return c;
  }

  // Levenberg-Marquardt with A, B projected onto [0, inf).
  FringeFit run(double A, double B, double phi, int max_iter, double tol) const {
    A = std::max(A, 0.0);
    B = std::max(B, 0.0);
    double lambda = 1e-3;
    double c = chi2(A, B, phi);
    FringeFit f;
    f.converged = false;
    int it = 0;
    for (; it < max_iter; ++it) {
      Eigen::Matrix3d JtJ = Eigen::Matrix3d::Zero();
      Eigen::Vector3d Jtr = Eigen::Vector3d::Zero();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double d = theta[i] - phi;
        const double s = std::sin(d);
        const Eigen::Vector3d j(s * s, 1.0, -A * std::sin(2.0 * d));
        const double r = rate[i] - (A * s * s + B);
        JtJ += weight[i] * j * j.transpose();
        Jtr += weight[i] * r * j;
      }
      bool accepted = false;
      Eigen::Vector3d step;
      while (lambda < 1e20) {
        Eigen::Matrix3d M = JtJ;
        for (int k = 0; k < 3; ++k) M(k, k) += lambda * std::max(JtJ(k, k), 1e-300);
        step = M.ldlt().solve(Jtr);
        const double nA = std::max(A + step(0), 0.0);
        const double nB = std::max(B + step(1), 0.0);
        const double nphi = phi + step(2);
        const double nc = chi2(nA, nB, nphi);
        if (std::isfinite(nc) && nc <= c) {
          step = Eigen::Vector3d(nA - A, nB - B, nphi - phi);
          A = nA;
          B = nB;
          phi = nphi;
          c = nc;
          lambda = std::max(lambda * 0.1, 1e-12);
          accepted = true;
          break;
        }
        lambda *= 10.0;
      }
      if (!accepted) {
        // No downhill direction left at machine precision.
        f.converged = true;
        break;
      }
      const double scale_ab = std::max({A, B, 1e-300});
      const bool small = std::abs(step(0)) <= tol * std::max(std::abs(A), scale_ab) &&
                         std::abs(step(1)) <= tol * std::max(std::abs(B), scale_ab) &&
                         std::abs(step(2)) <= tol * std::max(std::abs(phi), 1.0);
      if (small) {
        f.converged = true;
        ++it;
        break;
      }
    }
    f.amplitude = A;
    f.baseline = B;
    f.phase_rad = canonical_angle(phi);
    f.chi2 = c;
    f.iterations = it;
    return f;
  }
};

}  // namespace detail

struct FringeFitOptions {
  int max_iterations = 500;
  double tolerance = 1e-10;
  int phase_starts = 16;
  // Refits weighted by the fitted expected counts; 0 keeps the count weights.
  int reweight_passes = 3;
};

inline FringeFit fit_fringe(const FringeScan& scan, const FringeFitOptions& opt = {}) {
  scan.validate();
  detail::FringeLm lm;
  double total = 0.0;
  std::size_t imax = 0, imin = 0;
  for (std::size_t i = 0; i < scan.points.size(); ++i) {
    const auto& p = scan.points[i];
    lm.theta.push_back(p.bob_angle_rad);
    lm.rate.push_back(p.count / p.integration_s);
    // Poisson weight 1/max(n, 1) on counts, expressed on rates.
    lm.weight.push_back(p.integration_s * p.integration_s / std::max(p.count, 1.0));
    total += p.count;
    if (lm.rate[i] > lm.rate[imax]) imax = i;
    if (lm.rate[i] < lm.rate[imin]) imin = i;
  }
  if (!(total > 0.0)) throw AnalysisError("degenerate fringe: all counts are zero");

  const double A0 = lm.rate[imax] - lm.rate[imin];
  const double B0 = lm.rate[imin];
  std::vector<double> starts{lm.theta[imax] - kPi / 2.0};
  for (int k = 0; k < opt.phase_starts; ++k) starts.push_back(-kPi / 2.0 + kPi * k / opt.phase_starts);

  std::optional<FringeFit> best_ok, best_any;
  for (double phi0 : starts) {
    const FringeFit f = lm.run(A0, B0, phi0, opt.max_iterations, opt.tolerance);
    if (!best_any || f.chi2 < best_any->chi2) best_any = f;
    if (f.converged && (!best_ok || f.chi2 < best_ok->chi2)) best_ok = f;
  }
  auto finish = [&](FringeFit f) {
    f.alice_basis_rad = scan.alice_basis_rad;
    const double den = f.amplitude + 2.0 * f.baseline;
    f.visibility = den > 0.0 ? f.amplitude / den : 0.0;
    return f;
  };
  if (!best_ok) throw FitError("fringe fit did not converge", finish(*best_any));

  // Count weights favour downward fluctuations at the fringe minimum and
  // bias the baseline low when counts are small.
  FringeFit best = *best_ok;
  for (int pass = 0; pass < opt.reweight_passes; ++pass) {
    for (std::size_t i = 0; i < scan.points.size(); ++i) {
      const double t = scan.points[i].integration_s;
      lm.weight[i] = t * t / std::max(best.rate(lm.theta[i]) * t, 1.0);
    }
    const FringeFit f = lm.run(best.amplitude, best.baseline, best.phase_rad, opt.max_iterations, opt.tolerance);
    if (!f.converged) break;
    best = f;
  }
  return finish(best);
}

// ---------------------------------------------------------------- CHSH

// Counts for one analyzer pair, ordered (a, b), (a, b_perp), (a_perp, b),
// (a_perp, b_perp).
struct CorrelationCounts {
  double same_ab = 0.0;
  double a_bperp = 0.0;
  double aperp_b = 0.0;
  double same_perp = 0.0;
};

// Pairs ordered (a, b), (a, b'), (a', b), (a', b').
using ChshCounts = std::array<CorrelationCounts, 4>;

struct ChshResult {
  double s = 0.0;
  double sigma = 0.0;
  std::array<double, 4> correlations{};
};

struct ChshOptions {
  bool bootstrap = false;
  int bootstrap_resamples = 200;
  std::uint64_t bootstrap_seed = 1;
};

namespace detail {

inline double correlation_of(const CorrelationCounts& c, double* var = nullptr) {
  const double s = c.same_ab + c.same_perp;
  const double d = c.a_bperp + c.aperp_b;
  const double n = s + d;
  if (!(n > 0.0)) throw AnalysisError("degenerate CHSH input: zero correlation denominator");
  if (var) *var = 4.0 * s * d / (n * n * n);
  return (s - d) / n;
}

inline double chsh_combine(const std::array<double, 4>& e) { return std::abs(e[0] - e[1] + e[2] + e[3]); }

}  // namespace detail

inline ChshResult chsh_from_counts(const ChshCounts& counts, const ChshOptions& opt = {}) {
  ChshResult r;
  double var = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& c = counts[k];
    if (!(c.same_ab >= 0.0 && c.a_bperp >= 0.0 && c.aperp_b >= 0.0 && c.same_perp >= 0.0)) {
      throw PreconditionError("CHSH counts must be >= 0");
    }
    double v = 0.0;
    r.correlations[k] = detail::correlation_of(c, &v);
    var += v;
  }
  r.s = detail::chsh_combine(r.correlations);
  r.sigma = std::sqrt(var);

  if (opt.bootstrap) {
    std::mt19937_64 gen(splitmix64(opt.bootstrap_seed));
    std::vector<double> samples;
    samples.reserve(opt.bootstrap_resamples);
    for (int b = 0; b < opt.bootstrap_resamples; ++b) {
      std::array<double, 4> e{};
      bool ok = true;
      for (std::size_t k = 0; k < 4; ++k) {
        auto draw = [&](double m) { return m > 0.0 ? static_cast<double>(std::poisson_distribution<long long>(m)(gen)) : 0.0; };
        const CorrelationCounts c{draw(counts[k].same_ab), draw(counts[k].a_bperp), draw(counts[k].aperp_b),
                                  draw(counts[k].same_perp)};
        if (!(c.same_ab + c.a_bperp + c.aperp_b + c.same_perp > 0.0)) {
          ok = false;
          break;
        }
        e[k] = detail::correlation_of(c);
      }
      if (ok) samples.push_back(detail::chsh_combine(e));
    }
    if (samples.size() < 2) throw AnalysisError("bootstrap produced too few valid resamples");
    double m = 0.0;
    for (double x : samples) m += x;
    m /= static_cast<double>(samples.size());
    double ss = 0.0;
    for (double x : samples) ss += (x - m) * (x - m);
    r.sigma = std::sqrt(ss / static_cast<double>(samples.size() - 1));
  }
  return r;
}

// Born-rule expected counts of a state at the CHSH settings, scaled so each
// correlation's four counts sum to `pairs_per_setting`.
inline ChshCounts expected_chsh_counts(const TwoQubitState& s, const ChshAngles& ang, double pairs_per_setting) {
  auto lin = [](double x) { return AnalyzerSetting::linear(x); };
  const std::array<std::pair<double, double>, 4> pairs{
      {{ang.a, ang.b}, {ang.a, ang.b_prime}, {ang.a_prime, ang.b}, {ang.a_prime, ang.b_prime}}};
  ChshCounts out{};
  for (std::size_t k = 0; k < 4; ++k) {
    const auto a = lin(pairs[k].first), b = lin(pairs[k].second);
    const double scale = pairs_per_setting;
    out[k] = {scale * coincidence_probability(s, a, b), scale * coincidence_probability(s, a, b.orthogonal()),
              scale * coincidence_probability(s, a.orthogonal(), b),
              scale * coincidence_probability(s, a.orthogonal(), b.orthogonal())};
  }
  return out;
}

// The four fits must cover Alice bases a, a_perp, a', a'_perp (mod pi).
// Fitted rates at Bob's CHSH angles, times the integration time, stand in
// for the 16 counts.
inline ChshResult chsh_from_fringes(const std::vector<FringeFit>& fits, const ChshAngles& ang,
                                    double integration_s = 1.0, const ChshOptions& opt = {}) {
  if (fits.size() != 4) throw PreconditionError("CHSH from fringes needs exactly four fits");
  for (const auto& f : fits) {
    if (!f.converged) throw AnalysisError("CHSH from fringes: a fringe fit did not converge");
  }
  auto find = [&](double basis) -> const FringeFit& {
    for (const auto& f : fits) {
      if (std::abs(canonical_angle(f.alice_basis_rad - basis)) < 1e-6) return f;
    }
    throw PreconditionError("CHSH from fringes: no fit for Alice basis " + std::to_string(basis));
  };
  const FringeFit& fa = find(ang.a);
  const FringeFit& fap = find(ang.a + kPi / 2.0);
  const FringeFit& fa2 = find(ang.a_prime);
  const FringeFit& fa2p = find(ang.a_prime + kPi / 2.0);
  auto counts = [&](const FringeFit& alice, const FringeFit& alice_perp, double b) {
    const double bp = b + kPi / 2.0;
    return CorrelationCounts{alice.rate(b) * integration_s, alice.rate(bp) * integration_s,
                             alice_perp.rate(b) * integration_s, alice_perp.rate(bp) * integration_s};
  };
  const ChshCounts c{counts(fa, fap, ang.b), counts(fa, fap, ang.b_prime), counts(fa2, fa2p, ang.b),
                     counts(fa2, fa2p, ang.b_prime)};
  return chsh_from_counts(c, opt);
}

// ---------------------------------------------------------------- tomography

struct TomographyRecord {
  AnalyzerSetting alice;
  AnalyzerSetting bob;
  double count = 0.0;
  double integration_s = 1.0;
};

struct TomographyData {
  std::vector<TomographyRecord> records;

  void validate() const {
    if (records.size() != 16) throw PreconditionError("tomography needs exactly 16 setting records");
    for (const auto& r : records) {
      if (!(r.count >= 0.0)) throw PreconditionError("tomography counts must be >= 0");
      if (!(r.integration_s > 0.0)) throw PreconditionError("integration time must be > 0");
    }
  }

  double total_counts() const {
    double s = 0.0;
    for (const auto& r : records) s += r.count;
    return s;
  }
};

// {H, V, D, R} x {H, V, D, R}, Alice-major.
inline std::vector<std::pair<AnalyzerSetting, AnalyzerSetting>> canonical_tomography_settings() {
  const std::array<AnalyzerSetting, 4> one{AnalyzerSetting::H(), AnalyzerSetting::V(), AnalyzerSetting::D(),
                                           AnalyzerSetting::R()};
  std::vector<std::pair<AnalyzerSetting, AnalyzerSetting>> out;
  for (const auto& a : one)
    for (const auto& b : one) out.emplace_back(a, b);
  return out;
}

inline std::string setting_label(const AnalyzerSetting& s) {
  auto near = [](double x, double y) { return std::abs(x - y) < 1e-9; };
  if (near(s.circular_phase_rad, 0.0)) {
    if (near(s.basis_angle_rad, 0.0)) return "H";
    if (near(std::abs(s.basis_angle_rad), kPi / 2.0)) return "V";
    if (near(s.basis_angle_rad, kPi / 4.0)) return "D";
    if (near(s.basis_angle_rad, -kPi / 4.0)) return "A";
  } else if (near(s.circular_phase_rad, kPi / 2.0) && near(s.basis_angle_rad, kPi / 4.0)) {
    return "R";
  }
  return "theta=" + std::to_string(s.basis_angle_rad) + ",chi=" + std::to_string(s.circular_phase_rad);
}

inline TomographyData exact_tomography_data(const TwoQubitState& s, double pairs_per_setting,
                                            double integration_s = 1.0) {
  TomographyData d;
  for (const auto& [a, b] : canonical_tomography_settings()) {
    d.records.push_back({a, b, pairs_per_setting * coincidence_probability(s, a, b), integration_s});
  }
  return d;
}

namespace detail {

inline std::array<Matrix2c, 4> paulis() {
  Matrix2c i = Matrix2c::Identity();
  Matrix2c x, y, z;
  x << 0, 1, 1, 0;
  y << 0, Complex(0, -1), Complex(0, 1), 0;
  z << 1, 0, 0, -1;
  return {i, x, y, z};
}

inline std::array<Matrix4c, 16> pauli_products() {
  const auto p = paulis();
  std::array<Matrix4c, 16> out;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) out[4 * i + j] = Eigen::kroneckerProduct(p[i], p[j]).eval();
  return out;
}

inline Matrix4c project_to_physical(const Matrix4c& rho) {
  const Matrix4c h = 0.5 * (rho + rho.adjoint());
  Eigen::SelfAdjointEigenSolver<Matrix4c> es(h);
  Eigen::Vector4d ev = es.eigenvalues().cwiseMax(0.0);
  if (!(ev.sum() > 0.0)) return Matrix4c::Identity() / 4.0;
  ev /= ev.sum();
  return es.eigenvectors() * ev.cast<Complex>().asDiagonal() * es.eigenvectors().adjoint();
}

}  // namespace detail

struct LinearTomographyResult {
  TwoQubitState state;
  double min_eigenvalue = 0.0;
  bool physical = true;
  double rate_scale = 0.0;  // fitted pair rate per setting (counts/s at trace 1)
};

inline LinearTomographyResult tomography_linear(const TomographyData& data) {
  data.validate();
  const auto sig = detail::pauli_products();
  Eigen::Matrix<double, 16, 16> M;
  Eigen::Matrix<double, 16, 1> y;
  for (int k = 0; k < 16; ++k) {
    const auto& r = data.records[static_cast<std::size_t>(k)];
    const Matrix4c P = joint_projector(r.alice, r.bob);
    for (int m = 0; m < 16; ++m) M(k, m) = 0.25 * (sig[m] * P).trace().real();
    y(k) = r.count / r.integration_s;
  }
  Eigen::FullPivLU<Eigen::Matrix<double, 16, 16>> lu(M);
  lu.setThreshold(1e-10);
  if (lu.rank() < 16) throw AnalysisError("tomography design is singular (duplicate or dependent settings)");
  const Eigen::Matrix<double, 16, 1> x = lu.solve(y);
  if (!(x(0) > 0.0)) throw AnalysisError("degenerate tomography input: zero total rate");
  Matrix4c rho = Matrix4c::Zero();
  for (int m = 0; m < 16; ++m) rho += (0.25 * x(m) / x(0)) * sig[m];
  rho = 0.5 * (rho + rho.adjoint());
  LinearTomographyResult out;
  out.state = TwoQubitState(rho);
  out.min_eigenvalue = out.state.eigenvalues().minCoeff();
  out.physical = out.min_eigenvalue >= -TwoQubitState::kTolerance;
  out.rate_scale = x(0);
  return out;
}

struct TomographyOptions {
  int max_iterations = 10000;
  double tolerance = 1e-10;  // relative log-likelihood change
  double initial_mixing = 1e-3;
};

struct TomographyResult {
  TwoQubitState state;
  double fidelity_to_target = 0.0;
  double log_likelihood = 0.0;
  int iterations_used = 0;
  bool converged = false;
  std::string status = "converged";
  std::vector<double> likelihood_trace;  // after each accepted step
};

namespace detail {

// rho = T^dagger T, T lower triangular; 4 real diagonal entries then the
// real and imaginary parts of the 6 strictly-lower entries.
inline Matrix4c unpack_t(const Eigen::Matrix<double, 16, 1>& p) {
  Matrix4c T = Matrix4c::Zero();
  int k = 0;
  for (int i = 0; i < 4; ++i) T(i, i) = p(k++);
  for (int i = 1; i < 4; ++i)
    for (int j = 0; j < i; ++j) {
      T(i, j) = Complex(p(k), p(k + 1));
      k += 2;
    }
  return T;
}

inline Eigen::Matrix<double, 16, 1> pack_t(const Matrix4c& T) {
  Eigen::Matrix<double, 16, 1> p;
  int k = 0;
  for (int i = 0; i < 4; ++i) p(k++) = T(i, i).real();
  for (int i = 1; i < 4; ++i)
    for (int j = 0; j < i; ++j) {
      p(k++) = T(i, j).real();
      p(k++) = T(i, j).imag();
    }
  return p;
}

// Lower-triangular T with T^dagger T = rho, for full-rank rho.
inline Matrix4c factor_lower(const Matrix4c& rho) {
  Matrix4c J = Matrix4c::Zero();
  for (int i = 0; i < 4; ++i) J(i, 3 - i) = 1.0;
  const Matrix4c flipped = J * rho * J;
  Eigen::LLT<Matrix4c> llt(0.5 * (flipped + flipped.adjoint()));
  const Matrix4c L = llt.matrixL();
  const Matrix4c U = J * L * J;  // upper triangular, U U^dagger = rho
  return U.adjoint();
}

struct Likelihood {
  std::array<Matrix4c, 16> proj;
  std::array<double, 16> n{}, t{};

  // Poisson log-likelihood relative to the saturated model (mu = n), so a
  // perfect fit scores 0.
  double value(const Eigen::Matrix<double, 16, 1>& p) const {
    const Matrix4c T = unpack_t(p);
    const Matrix4c rho = T.adjoint() * T;
    double ll = 0.0;
    for (int k = 0; k < 16; ++k) {
      const double mu = t[k] * (rho * proj[k]).trace().real();
      if (n[k] > 0.0) {
        if (!(mu > 0.0)) return -std::numeric_limits<double>::infinity();
        ll += n[k] * std::log(mu / n[k]) + n[k];
      }
      ll -= mu;
    }
    return ll;
  }

  Eigen::Matrix<double, 16, 1> gradient(const Eigen::Matrix<double, 16, 1>& p) const {
    const Matrix4c T = unpack_t(p);
    const Matrix4c rho = T.adjoint() * T;
    Matrix4c G = Matrix4c::Zero();
    for (int k = 0; k < 16; ++k) {
      const double mu = t[k] * (rho * proj[k]).trace().real();
      const double w = (n[k] > 0.0 ? n[k] / mu : 0.0) - 1.0;
      G += (w * t[k]) * proj[k];
    }
    const Matrix4c GT = G * T.adjoint();
    Eigen::Matrix<double, 16, 1> g;
    int k = 0;
    for (int i = 0; i < 4; ++i) g(k++) = 2.0 * GT(i, i).real();
    for (int i = 1; i < 4; ++i)
      for (int j = 0; j < i; ++j) {
        g(k++) = 2.0 * GT(j, i).real();
        g(k++) = -2.0 * GT(j, i).imag();
      }
    return g;
  }
};

}  // namespace detail

inline TomographyResult tomography_mle(const TomographyData& data, const BellTarget& target,
                                       const TomographyOptions& opt = {}) {
  data.validate();
  const LinearTomographyResult lin = tomography_linear(data);

  detail::Likelihood L;
  for (int k = 0; k < 16; ++k) {
    const auto& r = data.records[static_cast<std::size_t>(k)];
    L.proj[k] = joint_projector(r.alice, r.bob);
    L.n[k] = r.count;
    L.t[k] = r.integration_s;
  }

  const Matrix4c start = (1.0 - opt.initial_mixing) * detail::project_to_physical(lin.state.rho()) +
                         opt.initial_mixing * Matrix4c::Identity() / 4.0;
  using Vec = Eigen::Matrix<double, 16, 1>;
  Vec x = detail::pack_t(detail::factor_lower(start) * std::sqrt(lin.rate_scale));

  const double total = std::max(data.total_counts(), 1.0);

  // BFGS on -log L with Armijo backtracking.
  double f = -L.value(x);
  Vec g = -L.gradient(x);
  Eigen::Matrix<double, 16, 16> H = Eigen::Matrix<double, 16, 16>::Identity();
  bool scaled = false;

  TomographyResult res;
  res.likelihood_trace.push_back(-f);
  int it = 0;
  int quiet = 0;
  for (; it < opt.max_iterations; ++it) {
    Vec d = -H * g;
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      H.setIdentity();
      d = -g;
      slope = g.dot(d);
    }
    if (!(slope < 0.0)) {
      res.converged = true;
      break;
    }
    double step = 1.0;
    Vec xn;
    double fn = 0.0;
    bool ok = false;
    for (int ls = 0; ls < 60; ++ls) {
      xn = x + step * d;
      fn = -L.value(xn);
      if (std::isfinite(fn) && fn <= f + 1e-4 * step * slope) {
        ok = true;
        break;
      }
      step *= 0.5;
    }
    if (!ok) {
      if (H.isIdentity()) {
        res.converged = true;  // no further progress possible at this precision
        break;
      }
      H.setIdentity();
      continue;
    }
    const Vec gn = -L.gradient(xn);
    const Vec s = xn - x;
    const Vec y = gn - g;
    const double sy = s.dot(y);
    if (sy > 1e-300) {
      if (!scaled) {
        H *= sy / y.dot(y);
        scaled = true;
      }
      const double rho_k = 1.0 / sy;
      const Eigen::Matrix<double, 16, 16> I = Eigen::Matrix<double, 16, 16>::Identity();
      H = (I - rho_k * s * y.transpose()) * H * (I - rho_k * y * s.transpose()) + rho_k * s * s.transpose();
    }
    const double change = std::abs(fn - f) / std::max(std::abs(f), 1e-12 * total);
    x = xn;
    f = fn;
    g = gn;
    res.likelihood_trace.push_back(-f);
    quiet = change < opt.tolerance ? quiet + 1 : 0;
    if (quiet >= 3) {
      res.converged = true;
      ++it;
      break;
    }
  }

  const Matrix4c T = detail::unpack_t(x);
  Matrix4c rho = T.adjoint() * T;
  const double tr = rho.trace().real();
  if (!(tr > 0.0)) throw AnalysisError("tomography likelihood collapsed to a zero state");
  rho /= tr;
  rho = 0.5 * (rho + rho.adjoint());
  res.state = TwoQubitState(rho);
  res.log_likelihood = -f;
  res.iterations_used = it;
  if (!res.converged) res.status = "iteration limit reached";
  res.fidelity_to_target = fidelity(res.state, target);
  return res;
}

inline double trace_distance(const TwoQubitState& a, const TwoQubitState& b) {
  const Matrix4c d = a.rho() - b.rho();
  Eigen::SelfAdjointEigenSolver<Matrix4c> es(0.5 * (d + d.adjoint()), Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

}  // namespace coexist
