#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "atomcount/trap.hpp"

using namespace atomcount;

TEST(Trap, DefaultsAreValid) {
  TrapConfig t;
  EXPECT_NO_THROW(t.validate());
  EXPECT_GE(t.r0, 7e-6);
  EXPECT_LE(t.r0, 24e-6);
  EXPECT_DOUBLE_EQ(t.gradient, 3.75);
}

TEST(Trap, ValidationRejects) {
  auto bad = [](auto edit) {
    TrapConfig t;
    edit(t);
    return t;
  };
  EXPECT_THROW(bad([](TrapConfig& t) { t.r0 = 0; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](TrapConfig& t) { t.gradient = -1; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](TrapConfig& t) { t.depth_anisotropy = 0.5; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](TrapConfig& t) { t.repump_sat = -1; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](TrapConfig& t) { t.bg_lifetime = 0; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](TrapConfig& t) { t.load_rate = -0.1; }).validate(), std::invalid_argument);
}

TEST(Trap, SaturationParameter) {
  TrapConfig t;  // 42 mW/cm^2 at -3.35 gamma
  EXPECT_NEAR(saturation_parameter(t, 11.0), (42.0 / 1.1) / (1.0 + 6.7 * 6.7), 1e-12);
  EXPECT_NEAR(saturation_parameter(t, 11.0), 0.83, 0.01);
  t.detuning = -1e6;
  EXPECT_LT(saturation_parameter(t, 11.0), 1e-10);
  t.detuning = 0.0;
  t.intensity_total = 11.0;
  EXPECT_DOUBLE_EQ(saturation_parameter(t, 11.0), 1.0);
  EXPECT_THROW(saturation_parameter(t, 0.0), std::invalid_argument);
}

TEST(Trap, SaturationMonotone) {
  TrapConfig t;
  double prev = INFINITY;
  for (double d = 0.0; d >= -10.0; d -= 0.25) {
    t.detuning = d;
    const double s = saturation_parameter(t, 11.0);
    EXPECT_LT(s, prev);
    prev = s;
  }
  t.detuning = -3.35;
  const double s1 = saturation_parameter(t, 11.0);
  t.intensity_total *= 3.0;
  EXPECT_NEAR(saturation_parameter(t, 11.0), 3.0 * s1, 1e-12);
}

TEST(Trap, EffectiveVolume) {
  EXPECT_NEAR(effective_volume(1e-3), 1.97e-9, 0.01e-9);  // r0 = 10 um in cm
  EXPECT_NEAR(effective_volume(2e-3) / effective_volume(1e-3), 8.0, 1e-12);
  TrapConfig t;
  EXPECT_NEAR(effective_volume_cm3(t), 1.97e-9, 0.01e-9);
  double prev = 0.0;
  for (double r = 7e-4; r <= 24e-4; r += 1e-4) {
    EXPECT_GT(effective_volume(r), prev);
    prev = effective_volume(r);
  }
  EXPECT_LT(effective_volume(7e-4), effective_volume(1e-3));
  EXPECT_GT(effective_volume(24e-4), effective_volume(1e-3));
}

TEST(Trap, GradientScaling) {
  EXPECT_DOUBLE_EQ(pair_rate_gradient_scaling(3.75, 3.75), 1.0);
  EXPECT_NEAR(pair_rate_gradient_scaling(3.75, 7.5), 8.0, 1e-12);
  EXPECT_NEAR(pair_rate_gradient_scaling(3.75, 8.0), std::pow(800.0 / 375.0, 3), 1e-12);
  EXPECT_NEAR(pair_rate_gradient_scaling(3.75, 8.0), 9.7, 0.05);
  EXPECT_NEAR(density_gradient_scaling(3.75, 7.5), std::pow(2.0, 1.5), 1e-12);
}

TEST(Trap, ModelDepth) {
  const double s = 0.87;
  const double d = model_depth_min(s, 3.75);
  EXPECT_LT(d, 0.22);
  EXPECT_NEAR(d, 0.15, 0.005);
  EXPECT_NEAR(model_depth_min(s, 7.5), 0.5 * d, 1e-12);
}

TEST(Trap, DepthAnisotropy) {
  TrapConfig t;
  EXPECT_NEAR(trap_depth(t, std::numbers::pi / 2) / trap_depth(t, 0.0), 0.25, 1e-12);
  double lo = INFINITY, hi = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double th = std::numbers::pi * i / 1000.0;
    const double u = trap_depth(t, th);
    EXPECT_NEAR(u, trap_depth(t, std::numbers::pi - th), 1e-12);
    EXPECT_NEAR(u, trap_depth_cos(t, std::cos(th)), 1e-12);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  EXPECT_NEAR(hi / lo, t.depth_anisotropy, 1e-9);
  EXPECT_DOUBLE_EQ(lo, t.depth_min);
  EXPECT_NEAR(trap_depth(t, 0.0, false) / trap_depth(t, std::numbers::pi / 2, false), 0.25, 1e-12);
  EXPECT_THROW(trap_depth(t, -0.1), std::invalid_argument);
}

TEST(Trap, PhotonsToStop) {
  EXPECT_NEAR(photons_to_stop(0.1), 1000.0, 50.0);
  EXPECT_EQ(photons_to_stop(0.0), 0.0);
  EXPECT_NEAR(photons_to_stop(0.4), 2.0 * photons_to_stop(0.1), 1e-9);
  EXPECT_THROW(photons_to_stop(-1.0), std::invalid_argument);
}
