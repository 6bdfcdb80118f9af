#pragma once

// From an EventLog to the measurables: per-N event rates with Poisson errors,
// the weighted quadratic fits for R, tau, beta_1atom/V and beta_2atoms/V, the
// exponential repump-suppression fit, and what follows from it (temperature,
// extrapolated beta_HCC).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "atomcount/collisions.hpp"
#include "atomcount/constants.hpp"
#include "atomcount/errors.hpp"
#include "atomcount/markov.hpp"
#include "atomcount/trap.hpp"

namespace atomcount {

struct RateRow {
  int n = 0;
  double occupancy = 0.0;  // s
  std::int64_t n_load = 0;
  std::int64_t n_loss1 = 0;
  std::int64_t n_loss2 = 0;

  static double rate(std::int64_t count, double occ) { return occ > 0.0 ? count / occ : 0.0; }
  /// sqrt(count) / T, or 1/T for an empty row so it still constrains a fit.
  static double error(std::int64_t count, double occ) {
    if (occ <= 0.0) return INFINITY;
    return count > 0 ? std::sqrt(static_cast<double>(count)) / occ : 1.0 / occ;
  }
  double load_rate() const { return rate(n_load, occupancy); }
  double loss1_rate() const { return rate(n_loss1, occupancy); }
  double loss2_rate() const { return rate(n_loss2, occupancy); }
  double load_error() const { return error(n_load, occupancy); }
  double loss1_error() const { return error(n_loss1, occupancy); }
  double loss2_error() const { return error(n_loss2, occupancy); }
};

struct EventRateTable {
  std::vector<RateRow> rows;  // rows[N]
  double duration = 0.0;

  double mean_n() const {
    double m = 0.0;
    for (const auto& r : rows) m += r.n * r.occupancy;
    return duration > 0.0 ? m / duration : 0.0;
  }
  std::size_t populated_rows() const {
    std::size_t k = 0;
    for (const auto& r : rows) k += r.occupancy > 0.0 ? 1 : 0;
    return k;
  }
};

/// Exact occupancy and event bookkeeping of the N(t) staircase.
inline EventRateTable tabulate(const EventLog& log) {
  detail::require(log.duration > 0.0, "tabulate: log has no duration");
  EventRateTable table;
  table.duration = log.duration;
  const std::vector<double> occ = occupancy_times(log);
  int top = static_cast<int>(occ.size()) - 1;
  for (const auto& e : log.events) top = std::max(top, e.n_before);
  table.rows.resize(static_cast<std::size_t>(top) + 1);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    table.rows[i].n = static_cast<int>(i);
    table.rows[i].occupancy = i < occ.size() ? occ[i] : 0.0;
  }
  for (const auto& e : log.events) {
    RateRow& row = table.rows[static_cast<std::size_t>(e.n_before)];
    switch (e.kind) {
      case EventKind::load: ++row.n_load; break;
      case EventKind::loss1: ++row.n_loss1; break;
      case EventKind::loss2: ++row.n_loss2; break;
    }
  }
  return table;
}

struct LinearFit {
  Eigen::VectorXd params;
  Eigen::MatrixXd cov;
  double chi2 = 0.0;
  int dof = 0;
};

/// Weighted least squares y ~ X p with per-point sigma; covariance from the
/// normal equations.
inline LinearFit weighted_lsq(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                              const Eigen::VectorXd& sigma) {
  detail::require(x.rows() == y.size() && y.size() == sigma.size(), "weighted_lsq: size mismatch");
  const Eigen::VectorXd w = sigma.array().square().inverse();
  const Eigen::MatrixXd normal = x.transpose() * w.asDiagonal() * x;
  const Eigen::VectorXd rhs = x.transpose() * w.asDiagonal() * y;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(normal);
  if (lu.rank() < normal.rows()) throw NumericalError("weighted_lsq: degenerate design");
  LinearFit f;
  f.params = lu.solve(rhs);
  f.cov = lu.inverse();
  const Eigen::VectorXd res = (y - x * f.params).cwiseQuotient(sigma);
  f.chi2 = res.squaredNorm();
  f.dof = static_cast<int>(y.size() - x.cols());
  return f;
}

struct Estimate {
  double value = 0.0;
  double error = 0.0;

  double pull(double truth) const { return error > 0.0 ? (value - truth) / error : INFINITY; }
};

struct FitResult {
  Estimate load_rate;        // R, 1/s
  Estimate bg_lifetime;      // tau, s
  Estimate b1;               // beta_1atom / V, 1/s
  Estimate b2_event;         // two-atom event coefficient, 1/s
  Estimate beta2_over_v;     // beta_2atoms / V = 2 b2_event
  Estimate beta_total_over_v;  // b1 + 2 b2_event
  double chi2 = 0.0;
  int dof = 0;
  bool clipped = false;      // a parameter hit the non-negativity bound
};

struct FitOptions {
  std::size_t min_rows = 3;
};

namespace detail {

struct RowData {
  std::vector<double> n, y, s;
};

inline RowData collect(const EventRateTable& t, double (RateRow::*rate)() const,
                       double (RateRow::*err)() const, int min_n) {
  RowData d;
  for (const auto& r : t.rows) {
    if (r.occupancy <= 0.0 || r.n < min_n) continue;
    d.n.push_back(r.n);
    d.y.push_back((r.*rate)());
    d.s.push_back((r.*err)());
  }
  return d;
}

inline LinearFit fit_basis(const RowData& d, const std::vector<int>& basis) {
  // basis codes: 0 -> 1, 1 -> N, 2 -> N(N-1)
  Eigen::MatrixXd x(static_cast<long>(d.n.size()), static_cast<long>(basis.size()));
  for (std::size_t i = 0; i < d.n.size(); ++i)
    for (std::size_t j = 0; j < basis.size(); ++j) {
      const double n = d.n[i];
      x(static_cast<long>(i), static_cast<long>(j)) = basis[j] == 0 ? 1.0 : basis[j] == 1 ? n : n * (n - 1.0);
    }
  return weighted_lsq(x, Eigen::Map<const Eigen::VectorXd>(d.y.data(), static_cast<long>(d.y.size())),
                      Eigen::Map<const Eigen::VectorXd>(d.s.data(), static_cast<long>(d.s.size())));
}

}  // namespace detail

/// Weighted fits: load ~ R, loss1 ~ N/tau + b1 N(N-1), loss2 ~ b2 N(N-1).
inline FitResult fit_rates(const EventRateTable& table, const FitOptions& opt = {}) {
  if (table.populated_rows() < opt.min_rows)
    throw NumericalError("fit_rates: need >= " + std::to_string(opt.min_rows) +
                         " populated N rows, have " + std::to_string(table.populated_rows()));
  FitResult out;

  const auto load = detail::collect(table, &RateRow::load_rate, &RateRow::load_error, 0);
  const LinearFit fl = detail::fit_basis(load, {0});
  out.load_rate = {fl.params(0), std::sqrt(fl.cov(0, 0))};

  const auto loss1 = detail::collect(table, &RateRow::loss1_rate, &RateRow::loss1_error, 1);
  if (loss1.n.size() < 2) throw NumericalError("fit_rates: loss1 needs >= 2 rows with N >= 1");
  LinearFit f1 = detail::fit_basis(loss1, {1, 2});
  double inv_tau = f1.params(0), b1 = f1.params(1);
  double inv_tau_err = std::sqrt(f1.cov(0, 0)), b1_err = std::sqrt(f1.cov(1, 1));
  if (b1 < 0.0) {
    out.clipped = true;
    f1 = detail::fit_basis(loss1, {1});
    inv_tau = f1.params(0);
    inv_tau_err = std::sqrt(f1.cov(0, 0));
    b1 = 0.0;
  } else if (inv_tau < 0.0) {
    out.clipped = true;
    f1 = detail::fit_basis(loss1, {2});
    b1 = f1.params(0);
    b1_err = std::sqrt(f1.cov(0, 0));
    inv_tau = 0.0;
  }
  if (inv_tau > 0.0)
    out.bg_lifetime = {1.0 / inv_tau, inv_tau_err / (inv_tau * inv_tau)};
  else
    out.bg_lifetime = {INFINITY, INFINITY};
  out.b1 = {std::max(b1, 0.0), b1_err};

  const auto loss2 = detail::collect(table, &RateRow::loss2_rate, &RateRow::loss2_error, 2);
  double b2 = 0.0, b2_err = INFINITY;
  LinearFit f2;
  if (!loss2.n.empty()) {
    f2 = detail::fit_basis(loss2, {2});
    b2 = f2.params(0);
    b2_err = std::sqrt(f2.cov(0, 0));
    if (b2 < 0.0) {
      out.clipped = true;
      b2 = 0.0;
    }
  }
  out.b2_event = {b2, b2_err};
  out.beta2_over_v = {2.0 * b2, 2.0 * b2_err};
  out.beta_total_over_v = {out.b1.value + 2.0 * b2, std::hypot(b1_err, 2.0 * b2_err)};
  out.chi2 = fl.chi2 + f1.chi2 + f2.chi2;
  out.dof = fl.dof + f1.dof + f2.dof;
  return out;
}

/// loss2 ~ c N + b2 N(N-1); a pure pair process has c consistent with zero.
struct QuadraticCheck {
  Estimate linear;
  Estimate quadratic;
};

inline QuadraticCheck fit_loss2_with_linear_term(const EventRateTable& table) {
  const auto loss2 = detail::collect(table, &RateRow::loss2_rate, &RateRow::loss2_error, 1);
  if (loss2.n.size() < 3) throw NumericalError("fit_loss2_with_linear_term: need >= 3 rows");
  const LinearFit f = detail::fit_basis(loss2, {1, 2});
  return {{f.params(0), std::sqrt(f.cov(0, 0))}, {f.params(1), std::sqrt(f.cov(1, 1))}};
}

/// T = T_D sqrt(2 (A - 1)), inverse of scaling_constant.
inline double infer_temperature(double decay_constant, const PhysConstants& pc = cesium()) {
  detail::require(decay_constant >= 1.0, "infer_temperature: A must be >= 1");
  return pc.doppler_temp() * std::sqrt(2.0 * (decay_constant - 1.0));
}

struct RatePoint {
  double s0 = 0.0;
  double rate = 0.0;   // loss-rate density, 1/s
  double sigma = 0.0;
};

struct SuppressionFit {
  Estimate offset;        // light-induced floor c
  Estimate amplitude;     // HCC loss-rate density at s0 = 0
  Estimate decay;         // A
  Estimate temperature;   // K, from A
  double chi2 = 0.0;
  int dof = 0;
  int iterations = 0;
  bool offset_pinned = false;  // offset hit zero and was held there

  double model(double s0) const { return offset.value + amplitude.value * std::exp(-s0 / decay.value); }
};

struct DecayFitOptions {
  int max_iterations = 500;
  double tolerance = 1e-12;
};

namespace detail {

struct DecayState {
  double c, amp, a;
};

/// Levenberg-Marquardt on (c, amp, A) with c optionally held at zero.
inline DecayState lm_decay(std::span<const RatePoint> pts, DecayState p, bool free_offset,
                           const DecayFitOptions& opt, int& iterations, double& chi2,
                           Eigen::MatrixXd& cov) {
  const int np = free_offset ? 3 : 2;
  auto residual_chi2 = [&](const DecayState& q) {
    double s = 0.0;
    for (const auto& pt : pts) {
      const double r = (pt.rate - (q.c + q.amp * std::exp(-pt.s0 / q.a))) / pt.sigma;
      s += r * r;
    }
    return s;
  };
  auto build = [&](const DecayState& q, Eigen::MatrixXd& jtj, Eigen::VectorXd& jtr) {
    jtj = Eigen::MatrixXd::Zero(np, np);
    jtr = Eigen::VectorXd::Zero(np);
    for (const auto& pt : pts) {
      const double e = std::exp(-pt.s0 / q.a);
      const double r = pt.rate - (q.c + q.amp * e);
      Eigen::VectorXd g(np);
      int k = 0;
      if (free_offset) g(k++) = 1.0;
      g(k++) = e;
      g(k) = q.amp * e * pt.s0 / (q.a * q.a);
      const double w = 1.0 / (pt.sigma * pt.sigma);
      jtj += w * g * g.transpose();
      jtr += w * r * g;
    }
  };
  double lambda = 1e-3;
  chi2 = residual_chi2(p);
  Eigen::MatrixXd jtj;
  Eigen::VectorXd jtr;
  bool converged = false;
  for (iterations = 0; iterations < opt.max_iterations; ++iterations) {
    build(p, jtj, jtr);
    Eigen::MatrixXd damped = jtj;
    damped.diagonal() *= (1.0 + lambda);
    const Eigen::VectorXd step = damped.ldlt().solve(jtr);
    DecayState trial = p;
    int k = 0;
    if (free_offset) trial.c += step(k++);
    trial.amp += step(k++);
    trial.a += step(k);
    if (!(trial.a > 0.0) || !std::isfinite(trial.a)) {
      lambda *= 10.0;
      if (lambda > 1e12) break;
      continue;
    }
    const double trial_chi2 = residual_chi2(trial);
    if (trial_chi2 <= chi2) {
      const double change = chi2 - trial_chi2;
      const bool small_step = std::abs(trial.a - p.a) <= opt.tolerance * std::abs(p.a) &&
                              std::abs(trial.amp - p.amp) <= opt.tolerance * std::abs(p.amp) + 1e-300;
      p = trial;
      chi2 = trial_chi2;
      lambda = std::max(lambda * 0.1, 1e-15);
      if (small_step || change <= opt.tolerance * std::max(chi2, 1e-300)) {
        converged = true;
        break;
      }
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) {
        converged = true;  // no downhill step left: at the minimum to round-off
        break;
      }
    }
  }
  if (!converged)
    throw NumericalError("fit_repump_decay: no convergence after " + std::to_string(iterations) +
                         " iterations, chi2 = " + std::to_string(chi2));
  build(p, jtj, jtr);
  cov = jtj.inverse();
  return p;
}

}  // namespace detail

/// Weighted nonlinear fit of rate(s0) = c + amp exp(-s0 / A).
inline SuppressionFit fit_repump_decay(std::span<const RatePoint> points,
                                       const PhysConstants& pc = cesium(),
                                       const DecayFitOptions& opt = {}) {
  detail::require(points.size() >= 4, "fit_repump_decay: need >= 4 points");
  double lo = INFINITY, hi = 0.0, y_min = INFINITY;
  for (const auto& p : points) {
    detail::require(p.sigma > 0.0, "fit_repump_decay: sigma must be positive");
    detail::require(p.s0 >= 0.0, "fit_repump_decay: s0 must be >= 0");
    lo = std::min(lo, p.s0);
    hi = std::max(hi, p.s0);
    y_min = std::min(y_min, p.rate);
  }
  detail::require(lo > 0.0 ? hi >= 5.0 * lo : hi > 0.0, "fit_repump_decay: s0 must span a factor >= 5");

  // start: scan the offset below the smallest rate, log-linear fit of the rest
  detail::DecayState best{0.0, 0.0, 1.0};
  double best_chi2 = INFINITY;
  const double c_top = std::max(y_min, 0.0);
  for (int k = 0; k < 20; ++k) {
    const double c0 = c_top * k / 20.0;
    double s00 = 0, s01 = 0, s11 = 0, r0 = 0, r1 = 0;
    int used = 0;
    for (const auto& p : points) {
      const double d = p.rate - c0;
      if (d <= 0.0) continue;
      const double w = d * d / (p.sigma * p.sigma);  // var(ln d) ~ (sigma/d)^2
      const double y = std::log(d);
      s00 += w; s01 += w * p.s0; s11 += w * p.s0 * p.s0; r0 += w * y; r1 += w * y * p.s0;
      ++used;
    }
    if (used < 2) continue;
    const double det = s00 * s11 - s01 * s01;
    if (!(det > 0.0)) continue;
    const double slope = (s00 * r1 - s01 * r0) / det;
    if (!(slope < 0.0)) continue;
    const detail::DecayState st{c0, std::exp((s11 * r0 - s01 * r1) / det), -1.0 / slope};
    double chi2 = 0.0;
    for (const auto& p : points) {
      const double r = (p.rate - (st.c + st.amp * std::exp(-p.s0 / st.a))) / p.sigma;
      chi2 += r * r;
    }
    if (chi2 < best_chi2) { best_chi2 = chi2; best = st; }
  }
  if (!std::isfinite(best_chi2)) throw NumericalError("fit_repump_decay: rates show no decay");

  SuppressionFit out;
  Eigen::MatrixXd cov;
  detail::DecayState p = detail::lm_decay(points, best, true, opt, out.iterations, out.chi2, cov);
  if (p.c < 0.0) {
    p.c = 0.0;
    p = detail::lm_decay(points, p, false, opt, out.iterations, out.chi2, cov);
    out.offset_pinned = true;
    out.offset = {0.0, 0.0};
    out.amplitude = {p.amp, std::sqrt(cov(0, 0))};
    out.decay = {p.a, std::sqrt(cov(1, 1))};
    out.dof = static_cast<int>(points.size()) - 2;
  } else {
    out.offset = {p.c, std::sqrt(cov(0, 0))};
    out.amplitude = {p.amp, std::sqrt(cov(1, 1))};
    out.decay = {p.a, std::sqrt(cov(2, 2))};
    out.dof = static_cast<int>(points.size()) - 3;
  }
  if (out.decay.value >= 1.0) {
    const double t = infer_temperature(out.decay.value, pc);
    const double dtda = t > 0.0 ? pc.doppler_temp() * pc.doppler_temp() / t : INFINITY;
    out.temperature = {t, dtda * out.decay.error};
  }
  return out;
}

/// beta_HCC (cm^3/s) = amplitude x V, with the amplitude error and a relative
/// volume error added in quadrature.
inline Estimate extrapolate_beta_hcc(const SuppressionFit& fit, double volume_cm3,
                                     double volume_rel_error = 0.0) {
  detail::require(volume_cm3 > 0.0, "extrapolate_beta_hcc: volume must be positive");
  const double beta = fit.amplitude.value * volume_cm3;
  const double err = std::hypot(fit.amplitude.error * volume_cm3, beta * volume_rel_error);
  return {beta, err};
}

/// Same with V from r0 (m); the radius uncertainty dr0 enters as 3 dr0 / r0.
inline Estimate extrapolate_beta_hcc_r0(const SuppressionFit& fit, double r0,
                                        double dr0 = 2e-6) {
  detail::require(r0 > 0.0 && dr0 >= 0.0, "extrapolate_beta_hcc: bad trap radius");
  return extrapolate_beta_hcc(fit, effective_volume(r0 * 100.0), 3.0 * dr0 / r0);
}

}  // namespace atomcount
