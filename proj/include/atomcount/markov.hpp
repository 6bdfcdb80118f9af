#pragma once

// Atom-number dynamics as a continuous-time Markov chain on N >= 0:
//   load         N -> N+1  at R
//   background   N -> N-1  at N / tau
//   one-atom     N -> N-1  at b1 N(N-1)
//   two-atom     N -> N-2  at b2 N(N-1)   (one event, two atoms)
// Atom flux therefore reads dN/dt = R - N/tau - (b1 + 2 b2) N(N-1), i.e.
// beta_1atom / V = b1 and beta_2atoms / V = 2 b2.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "atomcount/errors.hpp"
#include "atomcount/rng.hpp"

namespace atomcount {

struct RateModel {
  double load_rate = 0.0;  // R, 1/s
  double bg_rate = 0.0;    // 1/tau, 1/s
  double b1 = 0.0;         // one-atom collisional coefficient, 1/s
  double b2 = 0.0;         // two-atom event coefficient, 1/s

  double pairs(int n) const { return static_cast<double>(n) * (n - 1); }
  double loss1_rate(int n) const { return n * bg_rate + b1 * pairs(n); }
  double loss2_rate(int n) const { return n >= 2 ? b2 * pairs(n) : 0.0; }
  double total_rate(int n) const { return load_rate + loss1_rate(n) + loss2_rate(n); }

  void validate() const {
    detail::require(load_rate >= 0.0 && bg_rate >= 0.0 && b1 >= 0.0 && b2 >= 0.0,
                    "rate model: all rates must be >= 0");
  }
};

enum class EventKind { load, loss1, loss2 };

inline int delta_n(EventKind k) {
  switch (k) {
    case EventKind::load: return +1;
    case EventKind::loss1: return -1;
    case EventKind::loss2: return -2;
  }
  return 0;
}

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::load: return "load";
    case EventKind::loss1: return "loss1";
    case EventKind::loss2: return "loss2";
  }
  return "?";
}

struct Event {
  double time = 0.0;  // s
  EventKind kind = EventKind::load;
  int n_before = 0;

  int n_after() const { return n_before + delta_n(kind); }
  bool operator==(const Event&) const = default;
};

/// Time-ordered events plus the initial atom number; N(t) is the staircase
/// they define on [0, duration).
struct EventLog {
  std::vector<Event> events;
  double duration = 0.0;
  std::uint64_t seed = 0;
  int n0 = 0;

  bool operator==(const EventLog&) const = default;

  int final_n() const { return events.empty() ? n0 : events.back().n_after(); }

  std::size_t count(EventKind k) const {
    std::size_t c = 0;
    for (const auto& e : events) c += e.kind == k ? 1 : 0;
    return c;
  }

  /// Throws std::logic_error if the log violates ordering or N bookkeeping.
  void check() const {
    int n = n0;
    double last = -1.0;
    if (n0 < 0) throw std::logic_error("event log: negative initial N");
    for (const auto& e : events) {
      if (!(e.time > last) || e.time < 0.0 || e.time >= duration)
        throw std::logic_error("event log: times not strictly increasing within duration");
      if (e.n_before != n) throw std::logic_error("event log: n_before does not chain");
      if (e.kind == EventKind::loss1 && n < 1) throw std::logic_error("event log: loss1 from N=0");
      if (e.kind == EventKind::loss2 && n < 2) throw std::logic_error("event log: loss2 from N<2");
      n = e.n_after();
      last = e.time;
    }
  }
};

/// Exact next-event simulation of the chain. Deterministic in (model, n0,
/// duration, seed).
inline EventLog simulate(const RateModel& model, int n0, double duration, std::uint64_t seed) {
  model.validate();
  detail::require(duration > 0.0, "simulate: duration must be positive");
  detail::require(n0 >= 0, "simulate: n0 must be >= 0");
  EventLog log;
  log.duration = duration;
  log.seed = seed;
  log.n0 = n0;
  Rng rng(seed);
  double t = 0.0;
  int n = n0;
  for (;;) {
    const double load = model.load_rate;
    const double l1 = model.loss1_rate(n);
    const double l2 = model.loss2_rate(n);
    const double total = load + l1 + l2;
    if (total <= 0.0) break;
    t += rng.exponential(total);
    if (t >= duration) break;
    const double pick = rng.uniform() * total;
    EventKind kind = pick < load ? EventKind::load
                     : pick < load + l1 ? EventKind::loss1
                                        : EventKind::loss2;
    // guard against round-off selecting an impossible transition
    if (kind == EventKind::loss2 && n < 2) kind = n >= 1 ? EventKind::loss1 : EventKind::load;
    if (kind == EventKind::loss1 && n < 1) kind = EventKind::load;
    log.events.push_back({t, kind, n});
    n += delta_n(kind);
  }
  return log;
}

/// Time spent at each N over the log (index = N).
inline std::vector<double> occupancy_times(const EventLog& log) {
  std::vector<double> occ;
  auto add = [&occ](int n, double dt) {
    if (static_cast<std::size_t>(n) >= occ.size()) occ.resize(static_cast<std::size_t>(n) + 1, 0.0);
    occ[static_cast<std::size_t>(n)] += dt;
  };
  double t = 0.0;
  int n = log.n0;
  for (const auto& e : log.events) {
    add(n, e.time - t);
    t = e.time;
    n = e.n_after();
  }
  add(n, log.duration - t);
  return occ;
}

/// occupancy_times normalised to a probability vector.
inline std::vector<double> occupancy_distribution(const EventLog& log) {
  std::vector<double> occ = occupancy_times(log);
  for (double& x : occ) x /= log.duration;
  return occ;
}

inline double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  const std::size_t n = std::max(p.size(), q.size());
  double tv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = i < p.size() ? p[i] : 0.0;
    const double b = i < q.size() ? q[i] : 0.0;
    tv += std::abs(a - b);
  }
  return 0.5 * tv;
}

inline double mean_of(const std::vector<double>& p) {
  double m = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) m += static_cast<double>(i) * p[i];
  return m;
}

struct StationaryResult {
  std::vector<double> p;  // p[N], N = 0..n_max
  int n_max = 0;
  double boundary_mass = 0.0;
};

/// Stationary law of the chain truncated at n_max (no loads out of n_max),
/// from the global-balance equations Q^T p = 0, sum p = 1. n_max doubles until
/// the boundary mass falls below `boundary_tol`.
inline StationaryResult master_stationary(const RateModel& model, int n_max = 64,
                                          double boundary_tol = 1e-12, int n_limit = 4096) {
  model.validate();
  detail::require(n_max >= 2, "master_stationary: n_max must be >= 2");
  for (;;) {
    const int size = n_max + 1;
    // Q^T, banded: column n holds the rates out of n. Row n_max carries the
    // normalisation instead of its balance equation.
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(6 * size));
    auto put = [&](int row, int col, double v) {
      if (row < n_max && v != 0.0) t.emplace_back(row, col, v);
    };
    for (int n = 0; n <= n_max; ++n) {
      const double up = n < n_max ? model.load_rate : 0.0;
      const double l1 = n >= 1 ? model.loss1_rate(n) : 0.0;
      const double l2 = n >= 2 ? model.loss2_rate(n) : 0.0;
      if (up > 0.0) put(n + 1, n, up);
      if (l1 > 0.0) put(n - 1, n, l1);
      if (l2 > 0.0) put(n - 2, n, l2);
      put(n, n, -(up + l1 + l2));
      t.emplace_back(n_max, n, 1.0);
    }
    Eigen::SparseMatrix<double> a(size, size);
    a.setFromTriplets(t.begin(), t.end());
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(size);
    rhs(size - 1) = 1.0;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(a);
    if (lu.info() != Eigen::Success) throw NumericalError("master_stationary: singular balance system");
    const Eigen::VectorXd sol = lu.solve(rhs);
    if (!sol.allFinite()) throw NumericalError("master_stationary: singular balance system");
    StationaryResult r;
    r.n_max = n_max;
    r.p.resize(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) r.p[static_cast<std::size_t>(i)] = std::max(0.0, sol(i));
    double s = 0.0;
    for (double x : r.p) s += x;
    for (double& x : r.p) x /= s;
    r.boundary_mass = r.p.back();
    if (r.boundary_mass < boundary_tol) return r;
    if (n_max * 2 > n_limit)
      throw NumericalError("master_stationary: truncation too small, boundary mass " +
                           std::to_string(r.boundary_mass) + " at n_max " +
                           std::to_string(n_max));
    n_max *= 2;
  }
}

struct EventRateRow {
  int n = 0;
  double probability = 0.0;
  double load = 0.0;
  double loss1 = 0.0;
  double loss2 = 0.0;
};

/// Conditional event rates at each N of a stationary vector.
inline std::vector<EventRateRow> expected_event_rates(const std::vector<double>& p,
                                                      const RateModel& model) {
  std::vector<EventRateRow> rows;
  rows.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const int n = static_cast<int>(i);
    rows.push_back({n, p[i], model.load_rate, model.loss1_rate(n), model.loss2_rate(n)});
  }
  return rows;
}

}  // namespace atomcount
