#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "coexist/channel_model.hpp"
#include "coexist/errors.hpp"

using namespace coexist;

namespace {

FiberSpec fiber(double km, double excess = 3.0) {
  FiberSpec f;
  f.length_km = km;
  f.attenuation.excess_loss_db = excess;
  return f;
}

ClassicalLinkSpec sfp(double sensitivity_dbm) {
  ClassicalLinkSpec c;
  c.launch_power_dbm = -3.0;
  c.receiver_sensitivity_dbm = sensitivity_dbm;
  return c;
}

}  // namespace

TEST(Attenuation, LinearInLengthPlusExcess) {
  EXPECT_DOUBLE_EQ(attenuation_db(fiber(25.0), Band::C), 25.0 * 0.20 + 3.0);
  EXPECT_DOUBLE_EQ(attenuation_db(fiber(25.0), Band::O), 25.0 * 0.33 + 3.0);
  EXPECT_DOUBLE_EQ(attenuation_db(fiber(0.0), Band::O), 3.0);
}

TEST(Attenuation, TransmissionIsDecibelInverse) {
  EXPECT_NEAR(transmission(10.0), 0.1, 1e-15);
  EXPECT_NEAR(transmission(3.0), 0.501187233627272, 1e-12);
  EXPECT_NEAR(transmission(fiber(50.0), Band::C), std::pow(10.0, -(50 * 0.2 + 3) / 10.0), 1e-15);
}

TEST(Attenuation, OBandNeverBelowCBandAndStrictlyIncreasing) {
  double prev = -1.0;
  for (double L = 0.0; L <= 200.0; L += 7.5) {
    const FiberSpec f = fiber(L);
    EXPECT_GE(attenuation_db(f, Band::O), attenuation_db(f, Band::C));
    EXPECT_GT(attenuation_db(f, Band::O), prev);
    prev = attenuation_db(f, Band::O);
  }
}

TEST(Attenuation, RejectsOBandBelowCBand) {
  FiberSpec f = fiber(1.0);
  f.attenuation.o_band_db_per_km = 0.1;
  EXPECT_THROW(f.validate(), ConfigError);
}

// Margins by hand: launch - (L * 0.33 + 3) - sensitivity.
TEST(LinkBudget, Margin25kmWithMinus17IsUp) {
  const double m = classical_link_margin(sfp(-17.0), fiber(25.0));
  EXPECT_NEAR(m, -3.0 - 8.25 - 3.0 + 17.0, 1e-12);
  EXPECT_NEAR(m, 2.75, 1e-12);
  EXPECT_TRUE(classical_link_up(sfp(-17.0), fiber(25.0)));
}

TEST(LinkBudget, Margin50kmWithMinus17IsDown) {
  const double m = classical_link_margin(sfp(-17.0), fiber(50.0));
  EXPECT_NEAR(m, -3.0 - 16.5 - 3.0 + 17.0, 1e-12);
  EXPECT_LT(m, 0.0);
  EXPECT_FALSE(classical_link_up(sfp(-17.0), fiber(50.0)));
}

TEST(LinkBudget, Margin100kmWithMinus41IsUp) {
  const double m = classical_link_margin(sfp(-41.0), fiber(100.0));
  EXPECT_NEAR(m, 2.0, 1e-12);
  EXPECT_TRUE(classical_link_up(sfp(-41.0), fiber(100.0)));
}

TEST(LinkBudget, MonotoneWithUniqueBreakEven) {
  for (double sens : {-17.0, -28.0, -41.0}) {
    const ClassicalLinkSpec c = sfp(sens);
    const double be = classical_break_even_km(c, fiber(0.0).attenuation);
    EXPECT_NEAR(classical_link_margin(c, fiber(be)), 0.0, 1e-9);
    double prev = 1e9;
    int sign_changes = 0;
    bool was_up = true;
    for (double L = 0.0; L <= 200.0; L += 0.5) {
      const double m = classical_link_margin(c, fiber(L));
      EXPECT_LT(m, prev);
      prev = m;
      const bool up = m >= 0.0;
      if (up != was_up) ++sign_changes;
      was_up = up;
    }
    EXPECT_EQ(sign_changes, 1);
  }
}

TEST(LinkBudget, ValidateRejectsWavelengthsOutsideOBand) {
  ClassicalLinkSpec c;
  c.tx_wavelength_nm = 1550.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Raman, TwoPointCalibrationClosedForm) {
  const std::vector<NoisePoint> pts{{50.0, 8500.0}, {100.0, 32600.0}};
  const RamanNoiseModel m = calibrate_raman(pts);
  const double b = std::log(32600.0 / 8500.0) / 50.0;
  EXPECT_NEAR(m.growth_per_km, b, 1e-12);
  EXPECT_NEAR(m.growth_per_km, 0.02690, 5e-5);
  EXPECT_NEAR(m.amplitude_cps, 8500.0 / std::exp(50.0 * b), 1e-6);
  EXPECT_NEAR(m.amplitude_cps, 2216.0, 1.0);
}

TEST(Raman, RoundTripReproducesAnchors) {
  const std::vector<NoisePoint> pts{{50.0, 8500.0}, {100.0, 32600.0}};
  const RamanNoiseModel m = calibrate_raman(pts);
  EXPECT_NEAR(raman_noise_rate(m, 50.0, 1290.0) / 8500.0 - 1.0, 0.0, 1e-9);
  EXPECT_NEAR(raman_noise_rate(m, 100.0, 1290.0) / 32600.0 - 1.0, 0.0, 1e-9);
}

TEST(Raman, DoublingLengthQuadruplesRate) {
  const std::vector<NoisePoint> pts{{50.0, 8500.0}, {100.0, 34000.0}};
  EXPECT_NEAR(calibrate_raman(pts).growth_per_km, std::log(4.0) / 50.0, 1e-14);
}

TEST(Raman, ZeroLengthGivesAmplitude) {
  RamanNoiseModel m;
  m.amplitude_cps = 1234.5;
  EXPECT_DOUBLE_EQ(raman_noise_rate(m, 0.0, 1290.0), 1234.5);
}

TEST(Raman, LongerTxWavelengthScalesByRelativeFactor) {
  const std::vector<NoisePoint> pts{{50.0, 8500.0}, {100.0, 32600.0}};
  const RamanNoiseModel m = calibrate_raman(pts);
  EXPECT_NEAR(raman_noise_rate(m, 100.0, 1310.0), 32600.0 * 10.0, 1e-6);
  EXPECT_NEAR(raman_noise_rate(m, 100.0, 1300.0), 32600.0 * 10.0, 1e-6);
  EXPECT_NEAR(raman_noise_rate(m, 100.0, 1299.9), 32600.0, 1e-6);
}

TEST(Raman, StrictlyIncreasingInLength) {
  const RamanNoiseModel m;
  double prev = 0.0;
  for (double L = 0.0; L <= 200.0; L += 1.0) {
    const double r = raman_noise_rate(m, L, 1290.0);
    EXPECT_GT(r, prev);
    prev = r;
  }
}

TEST(Raman, LeastSquaresInLogSpaceWithMorePoints) {
  // Points on an exact exponential are recovered exactly.
  std::vector<NoisePoint> pts;
  for (double L : {10.0, 40.0, 70.0, 130.0}) pts.push_back({L, 500.0 * std::exp(0.03 * L)});
  const RamanNoiseModel m = calibrate_raman(pts);
  EXPECT_NEAR(m.growth_per_km, 0.03, 1e-12);
  EXPECT_NEAR(m.amplitude_cps, 500.0, 1e-8);
}

TEST(Raman, DegenerateInputsAreRejected) {
  const std::vector<NoisePoint> same{{50.0, 8500.0}, {50.0, 9000.0}};
  EXPECT_THROW(calibrate_raman(same), CalibrationError);
  const std::vector<NoisePoint> one{{50.0, 8500.0}};
  EXPECT_THROW(calibrate_raman(one), CalibrationError);
  const std::vector<NoisePoint> zero{{50.0, 0.0}, {100.0, 9000.0}};
  EXPECT_THROW(calibrate_raman(zero), CalibrationError);
  const std::vector<NoisePoint> falling{{50.0, 9000.0}, {100.0, 8000.0}};
  EXPECT_THROW(calibrate_raman(falling), CalibrationError);
}
