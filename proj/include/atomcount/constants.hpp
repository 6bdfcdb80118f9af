#pragma once

// Physical constants for cesium and the few unit conversions used across the
// library. Everything is SI internally; per-atom energies are carried as
// temperatures (K) and multiplied by kB where an energy is needed.

#include <cmath>
#include <numbers>

#include "atomcount/errors.hpp"

namespace atomcount {

namespace codata {
inline constexpr double kBoltzmann = 1.380649e-23;       // J/K
inline constexpr double kHbar = 1.054571817e-34;         // J s
inline constexpr double kPlanck = 6.62607015e-34;        // J s
inline constexpr double kHartree = 4.3597447222071e-18;  // J
inline constexpr double kBohrRadius = 5.29177210903e-11; // m
inline constexpr double kBohrMagneton = 9.2740100783e-24;  // J/T
}  // namespace codata

namespace units {
inline constexpr double kGaussPerCmToTeslaPerM = 1e-2;  // 1 G/cm = 1e-4 T / 1e-2 m
inline constexpr double kMilliwattPerCm2ToSI = 10.0;    // 1 mW/cm^2 = 10 W/m^2
inline constexpr double kCm3PerM3 = 1e6;

inline double kelvin_to_joule(double t) { return t * codata::kBoltzmann; }
inline double joule_to_kelvin(double e) { return e / codata::kBoltzmann; }

inline double hartree_bohr3_to_si(double c3_au) {
  return c3_au * codata::kHartree * std::pow(codata::kBohrRadius, 3);
}
inline double si_to_hartree_bohr3(double c3_si) {
  return c3_si / (codata::kHartree * std::pow(codata::kBohrRadius, 3));
}
}  // namespace units

/// C3 in atomic units (E_h a0^3) to J m^3.
inline double c3_to_si(double c3_au) {
  detail::require(c3_au > 0.0, "c3_to_si: C3 must be positive");
  return units::hartree_bohr3_to_si(c3_au);
}

/// Immutable constant table. Defaults describe the Cs D2 line.
struct PhysConstants {
  double gamma = 2.0 * std::numbers::pi * 5.2e6;  // natural linewidth, rad/s
  double lambda = 852.35e-9;                      // m
  double mass = 2.20694657e-25;                   // kg, 133Cs
  double kB = codata::kBoltzmann;
  double hbar = codata::kHbar;
  double e_hcc_per_atom = 0.22;                   // K
  double e_fcc_per_atom = 400.0;                  // K
  double c3 = units::hartree_bohr3_to_si(12.0);   // J m^3
  double i_sat = 1.1 * units::kMilliwattPerCm2ToSI;  // W/m^2

  /// hbar * gamma / (2 kB); about 125 uK for Cs.
  double doppler_temp() const { return hbar * gamma / (2.0 * kB); }

  double wavenumber() const { return 2.0 * std::numbers::pi / lambda; }

  /// Single-photon recoil velocity hbar k / m.
  double recoil_speed() const { return hbar * wavenumber() / mass; }

  /// Most probable relative speed sqrt(2 kB T / mu) of an identical pair,
  /// mu = m/2.
  double thermal_speed(double temperature) const {
    detail::require(temperature >= 0.0, "thermal_speed: negative temperature");
    const double reduced_mass = 0.5 * mass;
    return std::sqrt(2.0 * kB * temperature / reduced_mass);
  }

  double reduced_mass() const { return 0.5 * mass; }
};

inline const PhysConstants& cesium() {
  static const PhysConstants table{};
  return table;
}

}  // namespace atomcount
