#pragma once

// One MOT operating point and the geometric / mechanical quantities derived
// from it: saturation parameter, effective volume, gradient scalings, the
// direction-dependent trap depth and the photon budget of an escaping atom.

#include <cmath>
#include <numbers>

#include "atomcount/constants.hpp"
#include "atomcount/errors.hpp"

namespace atomcount {

struct TrapConfig {
  double detuning = -3.35;                                       // units of gamma
  double intensity_total = 42.0 * units::kMilliwattPerCm2ToSI;   // W/m^2, all six beams
  double repump_sat = 4.0;                                       // s0
  double gradient = 375.0 * units::kGaussPerCmToTeslaPerM;       // dBz/dz, T/m
  double r0 = 10e-6;                                             // 1/e^2 radius, m
  double temperature = 316e-6;                                   // K
  double depth_min = 0.15;                                       // K, shallowest direction
  double depth_anisotropy = 4.0;                                 // deepest / shallowest
  double load_rate = 0.1;                                        // atoms/s
  double bg_lifetime = 50.0;                                     // s

  void validate() const {
    detail::require(r0 > 0.0, "trap: r0 must be positive");
    detail::require(gradient > 0.0, "trap: gradient must be positive");
    detail::require(depth_anisotropy >= 1.0, "trap: depth_anisotropy must be >= 1");
    detail::require(repump_sat >= 0.0, "trap: repump_sat must be >= 0");
    detail::require(bg_lifetime > 0.0, "trap: bg_lifetime must be positive");
    detail::require(load_rate >= 0.0, "trap: load_rate must be >= 0");
    detail::require(depth_min > 0.0, "trap: depth_min must be positive");
    detail::require(temperature >= 0.0, "trap: temperature must be >= 0");
    detail::require(intensity_total >= 0.0, "trap: intensity must be >= 0");
  }
};

/// Parameters of the closed-form depth model
///   depth_min = kappa * F_max * d_eff,
///   F_max = (hbar k gamma / 2) s / (1 + s),
///   d_eff = hbar gamma sqrt(1 + s) / (moment * B'_eff).
/// B'_eff is the gradient along the shallow direction: B'/2 (radial) when the
/// deep axis is z, B' otherwise. kappa is calibrated so that the default
/// operating point (375 G/cm, s = 0.87) gives 0.15 K.
struct DepthModel {
  double kappa_geom = 1.2936;
  double moment = codata::kBohrMagneton;  // J/T
  bool deep_axis_z = true;
};

/// (I / I_S) / (1 + (2 delta / gamma)^2) with the total intensity.
inline double saturation_parameter(const TrapConfig& trap, double i_sat) {
  detail::require(i_sat > 0.0, "saturation_parameter: i_sat must be positive");
  const double two_delta = 2.0 * trap.detuning;
  return (trap.intensity_total / i_sat) / (1.0 + two_delta * two_delta);
}

/// (pi/2)^{3/2} r0^3, in the cube of r0's unit.
inline double effective_volume(double r0) {
  detail::require(r0 > 0.0, "effective_volume: r0 must be positive");
  return std::pow(std::numbers::pi / 2.0, 1.5) * r0 * r0 * r0;
}

inline double effective_volume_cm3(const TrapConfig& trap) {
  return effective_volume(trap.r0 * 100.0);
}

/// Peak-density multiplier when the gradient goes from g1 to g2.
inline double density_gradient_scaling(double g1, double g2) {
  detail::require(g1 > 0.0 && g2 > 0.0, "gradients must be positive");
  return std::pow(g2 / g1, 1.5);
}

/// Two-body event-rate multiplier when the gradient goes from g1 to g2.
inline double pair_rate_gradient_scaling(double g1, double g2) {
  detail::require(g1 > 0.0 && g2 > 0.0, "gradients must be positive");
  const double r = g2 / g1;
  return r * r * r;
}

/// Shallowest-direction depth (K) from the parametric force x distance model.
inline double model_depth_min(double saturation, double gradient,
                              const PhysConstants& pc = cesium(),
                              const DepthModel& dm = {}) {
  detail::require(saturation >= 0.0, "model_depth_min: negative saturation");
  detail::require(gradient > 0.0, "model_depth_min: gradient must be positive");
  const double f_max =
      0.5 * pc.hbar * pc.wavenumber() * pc.gamma * saturation / (1.0 + saturation);
  const double b_eff = dm.deep_axis_z ? 0.5 * gradient : gradient;
  const double d_eff = pc.hbar * pc.gamma * std::sqrt(1.0 + saturation) / (dm.moment * b_eff);
  return dm.kappa_geom * f_max * d_eff / pc.kB;
}

inline double model_depth_min(const TrapConfig& trap, const PhysConstants& pc = cesium(),
                              const DepthModel& dm = {}) {
  return model_depth_min(saturation_parameter(trap, pc.i_sat), trap.gradient, pc, dm);
}

/// Depth (K) seen by an atom leaving along polar angle theta. Symmetric under
/// theta -> pi - theta; max/min ratio equals depth_anisotropy.
inline double trap_depth(const TrapConfig& trap, double polar_angle, bool deep_axis_z = true) {
  detail::require(polar_angle >= 0.0 && polar_angle <= std::numbers::pi,
                  "trap_depth: polar angle outside [0, pi]");
  const double c = std::cos(polar_angle);
  const double w = deep_axis_z ? c * c : 1.0 - c * c;
  return trap.depth_min * (1.0 + (trap.depth_anisotropy - 1.0) * w);
}

/// Same, from a unit direction vector's z component.
inline double trap_depth_cos(const TrapConfig& trap, double cos_theta, bool deep_axis_z = true) {
  const double c2 = cos_theta * cos_theta;
  const double w = deep_axis_z ? c2 : 1.0 - c2;
  return trap.depth_min * (1.0 + (trap.depth_anisotropy - 1.0) * w);
}

/// Number of recoils needed to stop an atom carrying `energy_per_atom` (K).
inline double photons_to_stop(double energy_per_atom, const PhysConstants& pc = cesium()) {
  detail::require(energy_per_atom >= 0.0, "photons_to_stop: negative energy");
  const double v = std::sqrt(2.0 * pc.kB * energy_per_atom / pc.mass);
  return v / pc.recoil_speed();
}

}  // namespace atomcount
