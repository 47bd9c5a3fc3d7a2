#pragma once

// Two-qubit polarization algebra in the |HH>, |HV>, |VH>, |VV> basis.

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "coexist/errors.hpp"

namespace coexist {

using Complex = std::complex<double>;
using Matrix2c = Eigen::Matrix2cd;
using Matrix4c = Eigen::Matrix4cd;
using Vector2c = Eigen::Vector2cd;
using Vector4c = Eigen::Vector4cd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kBellThresholdVisibility = 1.0 / std::numbers::sqrt2;

// Folds an angle into the canonical projection range [-pi/2, pi/2).
inline double canonical_angle(double theta) {
  double t = std::fmod(theta + kPi / 2.0, kPi);
  if (t < 0) t += kPi;
  return t - kPi / 2.0;
}

// Effective projection of the waveplate + PBS stack onto the transmitted port:
// |theta, chi> = cos(theta)|H> + exp(i chi) sin(theta)|V>. chi = 0 is linear
// polarization; chi = pi/2 with theta = pi/4 is the right-circular setting.
struct AnalyzerSetting {
  double basis_angle_rad = 0.0;
  double circular_phase_rad = 0.0;

  static AnalyzerSetting linear(double theta) { return {canonical_angle(theta), 0.0}; }
  static AnalyzerSetting H() { return {0.0, 0.0}; }
  static AnalyzerSetting V() { return {-kPi / 2.0, 0.0}; }
  static AnalyzerSetting D() { return {kPi / 4.0, 0.0}; }
  static AnalyzerSetting R() { return {kPi / 4.0, kPi / 2.0}; }

  AnalyzerSetting orthogonal() const { return {canonical_angle(basis_angle_rad + kPi / 2.0), circular_phase_rad}; }

  Vector2c vector() const {
    Vector2c v;
    v << Complex(std::cos(basis_angle_rad), 0.0),
        std::polar(1.0, circular_phase_rad) * std::sin(basis_angle_rad);
    return v;
  }

  Matrix2c projector() const {
    const Vector2c v = vector();
    return v * v.adjoint();
  }

  void validate() const {
    if (!(basis_angle_rad >= -kPi / 2.0 - 1e-12 && basis_angle_rad <= kPi / 2.0 + 1e-12)) {
      throw ConfigError("analyzer angle outside [-pi/2, pi/2]");
    }
    if (!std::isfinite(circular_phase_rad)) throw ConfigError("analyzer circular phase not finite");
  }
};

enum class BellState { PhiPlus, PhiMinus, PsiPlus, PsiMinus };

struct BellTarget {
  BellState which = BellState::PsiPlus;
  double phase_rad = 0.0;
};

inline std::string to_string(BellState s) {
  switch (s) {
    case BellState::PhiPlus: return "phi_plus";
    case BellState::PhiMinus: return "phi_minus";
    case BellState::PsiPlus: return "psi_plus";
    case BellState::PsiMinus: return "psi_minus";
  }
  return "psi_plus";
}

inline BellState bell_state_from_string(const std::string& s) {
  if (s == "phi_plus") return BellState::PhiPlus;
  if (s == "phi_minus") return BellState::PhiMinus;
  if (s == "psi_plus") return BellState::PsiPlus;
  if (s == "psi_minus") return BellState::PsiMinus;
  throw ConfigError("unknown Bell state '" + s + "'");
}

class TwoQubitState {
 public:
  static constexpr double kTolerance = 1e-9;

  TwoQubitState() : rho_(Matrix4c::Identity() / 4.0) {}
  explicit TwoQubitState(const Matrix4c& rho) : rho_(rho) {}

  static TwoQubitState maximally_mixed() { return TwoQubitState(); }

  static TwoQubitState pure(const Vector4c& psi) {
    const Vector4c n = psi / psi.norm();
    return TwoQubitState(n * n.adjoint());
  }

  const Matrix4c& rho() const { return rho_; }

  double trace() const { return rho_.trace().real(); }
  double purity() const { return (rho_ * rho_).trace().real(); }

  Eigen::Vector4d eigenvalues() const {
    const Matrix4c h = 0.5 * (rho_ + rho_.adjoint());
    Eigen::SelfAdjointEigenSolver<Matrix4c> es(h, Eigen::EigenvaluesOnly);
    return es.eigenvalues();
  }

  double hermiticity_error() const { return (rho_ - rho_.adjoint()).cwiseAbs().maxCoeff(); }

  bool is_physical(double tol = kTolerance) const {
    return hermiticity_error() <= tol && std::abs(trace() - 1.0) <= tol && eigenvalues().minCoeff() >= -tol;
  }

  void validate(double tol = kTolerance) const {
    if (!is_physical(tol)) throw ConfigError("density matrix is not a physical state");
  }

 private:
  Matrix4c rho_;
};

inline Vector4c bell_vector(const BellTarget& t) {
  const double s = 1.0 / std::numbers::sqrt2;
  const Complex ph = std::polar(1.0, t.phase_rad);
  Vector4c v = Vector4c::Zero();
  switch (t.which) {
    case BellState::PhiPlus: v(0) = s; v(3) = s * ph; break;
    case BellState::PhiMinus: v(0) = s; v(3) = -s * ph; break;
    case BellState::PsiPlus: v(1) = s; v(2) = s * ph; break;
    case BellState::PsiMinus: v(1) = s; v(2) = -s * ph; break;
  }
  return v;
}

inline TwoQubitState target_state(const BellTarget& t) { return TwoQubitState::pure(bell_vector(t)); }

// V |psi><psi| + (1 - V) I/4
inline TwoQubitState werner_mix(const BellTarget& t, double visibility) {
  if (!(visibility >= 0.0 && visibility <= 1.0)) throw std::invalid_argument("Werner visibility outside [0, 1]");
  const Matrix4c pure = target_state(t).rho();
  return TwoQubitState(visibility * pure + (1.0 - visibility) * Matrix4c::Identity() / 4.0);
}

inline Matrix4c joint_projector(const AnalyzerSetting& a, const AnalyzerSetting& b) {
  return Eigen::kroneckerProduct(a.projector(), b.projector()).eval();
}

inline double expectation(const TwoQubitState& s, const Matrix4c& op) { return (s.rho() * op).trace().real(); }

// Born-rule probability that both transmitted PBS ports fire.
inline double coincidence_probability(const TwoQubitState& s, const AnalyzerSetting& a, const AnalyzerSetting& b) {
  const Vector4c v = Eigen::kroneckerProduct(a.vector(), b.vector()).eval();
  return (v.adjoint() * s.rho() * v)(0, 0).real();
}

inline double alice_pass_probability(const TwoQubitState& s, const AnalyzerSetting& a) {
  return expectation(s, Eigen::kroneckerProduct(a.projector(), Matrix2c::Identity()).eval());
}

inline double bob_pass_probability(const TwoQubitState& s, const AnalyzerSetting& b) {
  return expectation(s, Eigen::kroneckerProduct(Matrix2c::Identity(), b.projector()).eval());
}

inline double fidelity(const TwoQubitState& s, const BellTarget& t) {
  const Vector4c psi = bell_vector(t);
  return (psi.adjoint() * s.rho() * psi)(0, 0).real();
}

// Correlation from the four projector combinations. Throws on an all-zero
// denominator.
inline double correlation(const TwoQubitState& s, const AnalyzerSetting& a, const AnalyzerSetting& b) {
  const AnalyzerSetting ap = a.orthogonal(), bp = b.orthogonal();
  const double pp = coincidence_probability(s, a, b);
  const double qq = coincidence_probability(s, ap, bp);
  const double pq = coincidence_probability(s, a, bp);
  const double qp = coincidence_probability(s, ap, b);
  const double den = pp + qq + pq + qp;
  if (!(den > 0.0)) throw AnalysisError("degenerate state: zero correlation denominator");
  return (pp + qq - pq - qp) / den;
}

struct ChshAngles {
  double a = 0.0;
  double a_prime = kPi / 4.0;
  double b = kPi / 8.0;
  double b_prime = 3.0 * kPi / 8.0;
};

// Psi+ and Phi- correlate as +-cos(2(a + b)) instead of +-cos(2(a - b)), so
// Bob's angles flip sign for them. Valid for zero relative phase.
inline ChshAngles optimal_chsh_angles(const BellTarget& t) {
  ChshAngles c;
  if (t.which == BellState::PsiPlus || t.which == BellState::PhiMinus) {
    c.b = -c.b;
    c.b_prime = -c.b_prime;
  }
  return c;
}

inline double chsh_value(const TwoQubitState& s, const ChshAngles& ang) {
  auto lin = [](double x) { return AnalyzerSetting::linear(x); };
  const double e_ab = correlation(s, lin(ang.a), lin(ang.b));
  const double e_abp = correlation(s, lin(ang.a), lin(ang.b_prime));
  const double e_apb = correlation(s, lin(ang.a_prime), lin(ang.b));
  const double e_apbp = correlation(s, lin(ang.a_prime), lin(ang.b_prime));
  return std::abs(e_ab - e_abp + e_apb + e_apbp);
}

inline std::vector<double> predicted_fringe(const TwoQubitState& s, double alice_angle,
                                            std::span<const double> bob_angles) {
  std::vector<double> out;
  out.reserve(bob_angles.size());
  const AnalyzerSetting a = AnalyzerSetting::linear(alice_angle);
  for (double th : bob_angles) out.push_back(coincidence_probability(s, a, AnalyzerSetting::linear(th)));
  return out;
}

// Exact extrema of p(a, theta) over Bob's linear angle: the fringe is
// c0 + c1 cos(2 theta) + c2 sin(2 theta).
struct FringeExtrema {
  double max;
  double min;
  double argmax_rad;
};

inline FringeExtrema fringe_extrema(const TwoQubitState& s, const AnalyzerSetting& alice) {
  const double p0 = coincidence_probability(s, alice, AnalyzerSetting::linear(0.0));
  const double p90 = coincidence_probability(s, alice, AnalyzerSetting::linear(kPi / 2.0));
  const double p45 = coincidence_probability(s, alice, AnalyzerSetting::linear(kPi / 4.0));
  const double c0 = 0.5 * (p0 + p90);
  const double c1 = 0.5 * (p0 - p90);
  const double c2 = p45 - c0;
  const double amp = std::hypot(c1, c2);
  return {c0 + amp, c0 - amp, canonical_angle(0.5 * std::atan2(c2, c1))};
}

}  // namespace coexist
