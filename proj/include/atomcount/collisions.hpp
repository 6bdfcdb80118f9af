#pragma once

// Exoergic two-body loss channels (HCC, RE, FCC), optical shielding of HCC by
// the blue-detuned repump field, and the mapping of a single collision to the
// number of atoms it ejects from a trap of finite, anisotropic depth.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>
#include <vector>

#include "atomcount/constants.hpp"
#include "atomcount/errors.hpp"
#include "atomcount/rng.hpp"
#include "atomcount/trap.hpp"

namespace atomcount {

enum class Channel { hcc, re, fcc };
enum class Outcome { none = 0, one_atom = 1, two_atoms = 2 };

inline constexpr std::array<Channel, 3> kAllChannels{Channel::hcc, Channel::re, Channel::fcc};

inline std::string_view to_string(Channel c) {
  switch (c) {
    case Channel::hcc: return "hcc";
    case Channel::re: return "re";
    case Channel::fcc: return "fcc";
  }
  return "?";
}

/// Intrinsic rate coefficients (cm^3/s) and the energy / perturbation models
/// of the three channels.
struct ChannelSet {
  double beta_hcc = 4.1e-11;
  double beta_re = 3.0e-11;
  double beta_fcc = 0.5e-11;
  double re_energy_scale = 0.43;  // K, mean of the exponential RE energy law
  double depth_jitter = 0.03;     // relative depth fluctuation per atom
  double angular_spread = 0.35;   // rad, deviation from back-to-back escape

  double beta(Channel c) const {
    switch (c) {
      case Channel::hcc: return beta_hcc;
      case Channel::re: return beta_re;
      case Channel::fcc: return beta_fcc;
    }
    return 0.0;
  }

  void validate() const {
    detail::require(beta_hcc >= 0.0 && beta_re >= 0.0 && beta_fcc >= 0.0,
                    "channels: rate coefficients must be >= 0");
    detail::require(re_energy_scale > 0.0, "channels: re_energy_scale must be positive");
    detail::require(depth_jitter >= 0.0 && depth_jitter < 0.2,
                    "channels: depth_jitter must lie in [0, 0.2)");
    detail::require(angular_spread >= 0.0 && angular_spread < std::numbers::pi / 2.0,
                    "channels: angular_spread must lie in [0, pi/2)");
  }
};

/// How HCC suppression by the repump field is evaluated.
///  landau_zener: thermal average of the single-crossing Landau-Zener model.
///  scaling_law:  exp(-s0 / A(T)) with A(T) = 1 + 0.5 (T/T_D)^2.
enum class SuppressionModel { landau_zener, scaling_law };

struct ShieldingParams {
  double repump_detuning = 9e9;                       // Hz, blue
  double c3 = units::hartree_bohr3_to_si(12.0);       // J m^3
  double rabi_coeff = 1.0 / std::numbers::sqrt2;      // Omega = chi gamma sqrt(s0)
  SuppressionModel model = SuppressionModel::scaling_law;

  void validate() const {
    detail::require(repump_detuning > 0.0, "shielding: repump_detuning must be positive");
    detail::require(c3 > 0.0, "shielding: c3 must be positive");
    detail::require(rabi_coeff > 0.0, "shielding: rabi_coeff must be positive");
  }
};

/// Radius where +C3/R^3 equals the repump photon-energy offset h * detuning.
inline double condon_radius(const ShieldingParams& p) {
  detail::require(p.c3 > 0.0 && p.repump_detuning > 0.0, "condon_radius: non-positive input");
  return std::cbrt(p.c3 / (codata::kPlanck * p.repump_detuning));
}

/// Rabi frequency (rad/s) of the repump dressing at saturation s0.
inline double rabi_frequency(double s0, const ShieldingParams& p,
                             const PhysConstants& pc = cesium()) {
  detail::require(s0 >= 0.0, "rabi_frequency: s0 must be >= 0");
  return p.rabi_coeff * pc.gamma * std::sqrt(s0);
}

/// Probability of crossing the Condon point diabatically (staying on the
/// ground-state curve) at relative speed v_rel.
inline double lz_pass_probability(double v_rel, double omega, const ShieldingParams& p,
                                  const PhysConstants& pc = cesium()) {
  detail::require(v_rel > 0.0, "lz_pass_probability: v_rel must be positive");
  detail::require(omega >= 0.0, "lz_pass_probability: omega must be >= 0");
  const double rc = condon_radius(p);
  const double slope = 3.0 * p.c3 / std::pow(rc, 4);
  const double coupling = 0.5 * pc.hbar * omega;
  return std::exp(-2.0 * std::numbers::pi * coupling * coupling / (pc.hbar * v_rel * slope));
}

namespace detail {

template <class F>
double adaptive_simpson_step(const F& f, double a, double b, double fa, double fm, double fb,
                             double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return adaptive_simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

template <class F>
double integrate(const F& f, double a, double b, double tol = 1e-13, int max_depth = 40) {
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

}  // namespace detail

/// Thermal Landau-Zener estimate of the fraction of ground-state pairs that
/// still reach short range with the repump at saturation s0.
///
/// The relative speed along the collision axis follows the 1D Maxwell-Boltzmann
/// law exp(-mu v^2 / 2 kB T) (v > 0). Pairs whose kinetic energy is below the
/// avoided-crossing barrier hbar Omega / 2 are reflected; the rest pass with
/// lz_pass_probability.
inline double landau_zener_suppression(double s0, double temperature, const ShieldingParams& p,
                                       const PhysConstants& pc = cesium()) {
  detail::require(s0 >= 0.0, "suppression_ratio: s0 must be >= 0");
  detail::require(temperature > 0.0, "suppression_ratio: temperature must be positive");
  if (s0 == 0.0) return 1.0;
  const double omega = rabi_frequency(s0, p, pc);
  const double mu = pc.reduced_mass();
  const double v_scale = std::sqrt(2.0 * pc.kB * temperature / mu);
  const double barrier = 0.5 * pc.hbar * omega;
  // x = v / v_scale, weight exp(-x^2), barrier at x_b^2 = barrier / kB T
  const double x_b = std::sqrt(barrier / (pc.kB * temperature));
  const auto integrand = [&](double x) {
    if (x <= 0.0) return 0.0;
    return std::exp(-x * x) * lz_pass_probability(x * v_scale, omega, p, pc);
  };
  const double upper = x_b + 9.0;
  const double value = detail::integrate(integrand, x_b, upper);
  const double p_hcc = 2.0 / std::sqrt(std::numbers::pi) * value;
  return std::clamp(p_hcc, 0.0, 1.0);
}

/// A(T) = 1 + 0.5 (T / T_D)^2.
inline double scaling_constant(double temperature, const PhysConstants& pc = cesium()) {
  detail::require(temperature >= 0.0, "scaling_constant: negative temperature");
  const double r = temperature / pc.doppler_temp();
  return 1.0 + 0.5 * r * r;
}

inline double scaling_law_suppression(double s0, double temperature,
                                      const PhysConstants& pc = cesium()) {
  detail::require(s0 >= 0.0, "scaling_law_suppression: s0 must be >= 0");
  return std::exp(-s0 / scaling_constant(temperature, pc));
}

/// P_HCC(s0, T) in [0, 1]; P_HCC(0, T) = 1.
inline double suppression_ratio(double s0, double temperature, const ShieldingParams& p,
                                const PhysConstants& pc = cesium()) {
  if (p.model == SuppressionModel::scaling_law) {
    detail::require(temperature > 0.0, "suppression_ratio: temperature must be positive");
    return scaling_law_suppression(s0, temperature, pc);
  }
  return landau_zener_suppression(s0, temperature, p, pc);
}

/// Least-squares slope of ln P against s0 (with intercept); returns A = -1/slope.
inline double fit_decay_constant(std::span<const double> s0, std::span<const double> p_hcc) {
  detail::require(s0.size() == p_hcc.size() && s0.size() >= 2,
                  "fit_decay_constant: need >= 2 matched points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(s0.size());
  for (std::size_t i = 0; i < s0.size(); ++i) {
    detail::require(p_hcc[i] > 0.0, "fit_decay_constant: P must be positive");
    const double y = std::log(p_hcc[i]);
    sx += s0[i];
    sy += y;
    sxx += s0[i] * s0[i];
    sxy += s0[i] * y;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  if (!(slope < 0.0)) throw NumericalError("fit_decay_constant: non-decreasing suppression");
  return -1.0 / slope;
}

/// s0 grid on [lo, hi] with the given step.
inline std::vector<double> s0_grid(double lo = 2.0, double hi = 50.0, double step = 1.0) {
  std::vector<double> g;
  for (int k = 0; lo + k * step <= hi + 1e-9; ++k) g.push_back(lo + k * step);
  return g;
}

/// Decay constant A fitted to the suppression curve of `p.model` at temperature T.
inline double fitted_decay_constant(double temperature, const ShieldingParams& p,
                                    const PhysConstants& pc = cesium(),
                                    std::span<const double> grid = {}) {
  std::vector<double> s = grid.empty() ? s0_grid() : std::vector<double>(grid.begin(), grid.end());
  std::vector<double> ps;
  ps.reserve(s.size());
  for (double x : s) ps.push_back(suppression_ratio(x, temperature, p, pc));
  return fit_decay_constant(s, ps);
}

/// Per-atom kinetic energy (K) released in a radiative-escape event,
/// exponential with mean e0.
inline double re_energy_sample(Rng& rng, double e0) {
  detail::require(e0 > 0.0, "re_energy_sample: e0 must be positive");
  return rng.exponential(1.0 / e0);
}

namespace detail {

struct Vec3 {
  double x, y, z;
};

inline Vec3 isotropic_direction(Rng& rng) {
  const double cz = 2.0 * rng.uniform() - 1.0;
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  const double sz = std::sqrt(std::max(0.0, 1.0 - cz * cz));
  return {sz * std::cos(phi), sz * std::sin(phi), cz};
}

/// Rotate unit vector d by polar deviation alpha about a random azimuth.
inline Vec3 tilt(const Vec3& d, double alpha, Rng& rng) {
  // orthonormal basis (e1, e2) perpendicular to d
  Vec3 a = std::abs(d.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
  Vec3 e1{a.y * d.z - a.z * d.y, a.z * d.x - a.x * d.z, a.x * d.y - a.y * d.x};
  const double n1 = std::sqrt(e1.x * e1.x + e1.y * e1.y + e1.z * e1.z);
  e1 = {e1.x / n1, e1.y / n1, e1.z / n1};
  const Vec3 e2{d.y * e1.z - d.z * e1.y, d.z * e1.x - d.x * e1.z, d.x * e1.y - d.y * e1.x};
  const double psi = 2.0 * std::numbers::pi * rng.uniform();
  const double ca = std::cos(alpha), sa = std::sin(alpha);
  const double cp = std::cos(psi), sp = std::sin(psi);
  return {ca * d.x + sa * (cp * e1.x + sp * e2.x), ca * d.y + sa * (cp * e1.y + sp * e2.y),
          ca * d.z + sa * (cp * e1.z + sp * e2.z)};
}

}  // namespace detail

/// Per-atom energy (K) released by one collision in `channel`.
inline double channel_energy(Channel channel, const ChannelSet& set, Rng& rng,
                             const PhysConstants& pc = cesium()) {
  switch (channel) {
    case Channel::hcc: return pc.e_hcc_per_atom;
    case Channel::fcc: return pc.e_fcc_per_atom;
    case Channel::re: return re_energy_sample(rng, set.re_energy_scale);
  }
  return 0.0;
}

/// Number of atoms one collision ejects. Atom 1 leaves isotropically, atom 2
/// back-to-back with a Gaussian angular deviation of width angular_spread; each
/// escapes iff its energy exceeds the local depth times (1 + eps), eps ~ N(0,
/// depth_jitter).
inline Outcome classify_outcome(Channel channel, const TrapConfig& trap, const ChannelSet& set,
                                Rng& rng, const PhysConstants& pc = cesium(),
                                bool deep_axis_z = true) {
  const double energy = channel_energy(channel, set, rng, pc);
  const detail::Vec3 d1 = detail::isotropic_direction(rng);
  const detail::Vec3 back{-d1.x, -d1.y, -d1.z};
  const double alpha = set.angular_spread > 0.0 ? std::abs(rng.normal(0.0, set.angular_spread)) : 0.0;
  const detail::Vec3 d2 = alpha > 0.0 ? detail::tilt(back, alpha, rng) : back;
  const double eps1 = set.depth_jitter > 0.0 ? rng.normal(0.0, set.depth_jitter) : 0.0;
  const double eps2 = set.depth_jitter > 0.0 ? rng.normal(0.0, set.depth_jitter) : 0.0;
  const double u1 = trap_depth_cos(trap, d1.z, deep_axis_z) * (1.0 + eps1);
  const double u2 = trap_depth_cos(trap, d2.z, deep_axis_z) * (1.0 + eps2);
  const int escaped = (energy > u1 ? 1 : 0) + (energy > u2 ? 1 : 0);
  return static_cast<Outcome>(escaped);
}

struct OutcomeFractions {
  double none = 0.0;
  double one_atom = 0.0;
  double two_atoms = 0.0;

  /// Share of one-atom outcomes among loss-producing ones.
  double one_atom_share() const {
    const double loss = one_atom + two_atoms;
    return loss > 0.0 ? one_atom / loss : 0.0;
  }
};

inline OutcomeFractions outcome_fractions(Channel channel, const TrapConfig& trap,
                                          const ChannelSet& set, std::int64_t trials, Rng& rng,
                                          const PhysConstants& pc = cesium(),
                                          bool deep_axis_z = true) {
  detail::require(trials > 0, "outcome_fractions: trials must be positive");
  std::array<std::int64_t, 3> n{0, 0, 0};
  for (std::int64_t i = 0; i < trials; ++i)
    ++n[static_cast<int>(classify_outcome(channel, trap, set, rng, pc, deep_axis_z))];
  const double t = static_cast<double>(trials);
  return {n[0] / t, n[1] / t, n[2] / t};
}

/// Effective loss coefficients (cm^3/s) for one-atom and two-atom loss events.
/// beta1 = sum_c f1(c) beta_c, beta2 = sum_c f2(c) beta_c, with beta_hcc scaled
/// by suppression_ratio(s0, T). The repump does not touch RE or FCC.
struct EffectiveBetas {
  double beta1 = 0.0;
  double beta2 = 0.0;
  double total() const { return beta1 + beta2; }
};

inline EffectiveBetas effective_betas(const TrapConfig& trap, const ChannelSet& set,
                                      const ShieldingParams& p, std::uint64_t seed,
                                      std::int64_t trials = 200000,
                                      const PhysConstants& pc = cesium(),
                                      bool deep_axis_z = true) {
  EffectiveBetas out;
  const Rng root(seed);
  for (Channel c : kAllChannels) {
    double beta = set.beta(c);
    if (c == Channel::hcc && beta > 0.0)
      beta *= suppression_ratio(trap.repump_sat, trap.temperature, p, pc);
    if (beta <= 0.0) continue;
    Rng rng = root.split(static_cast<std::uint64_t>(c));
    const OutcomeFractions f = outcome_fractions(c, trap, set, trials, rng, pc, deep_axis_z);
    out.beta1 += f.one_atom * beta;
    out.beta2 += f.two_atoms * beta;
  }
  return out;
}

}  // namespace atomcount
