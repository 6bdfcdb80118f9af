#pragma once

// Binned photon-count fluorescence traces synthesized from an EventLog.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "atomcount/errors.hpp"
#include "atomcount/markov.hpp"
#include "atomcount/rng.hpp"

namespace atomcount {

struct FluorescenceTrace {
  double bin_width = 0.1;       // s
  std::vector<std::int64_t> counts;
  double per_atom_rate = 1e4;   // counts/s per atom
  double bg_rate = 500.0;       // counts/s stray light
  std::uint64_t seed = 0;

  double duration() const { return bin_width * static_cast<double>(counts.size()); }
  double bin_start(std::size_t i) const { return bin_width * static_cast<double>(i); }
};

inline std::size_t bin_count(double duration, double bin_width) {
  const double ratio = duration / bin_width;
  const double r = std::round(ratio);
  // exact multiples must not gain a spurious extra bin from round-off
  if (std::abs(ratio - r) < 1e-9 * std::max(1.0, ratio)) return static_cast<std::size_t>(r);
  return static_cast<std::size_t>(std::ceil(ratio));
}

/// Time-weighted mean atom number in each bin of width bin_width.
inline std::vector<double> binned_mean_n(const EventLog& log, double bin_width) {
  detail::require(bin_width > 0.0, "binned_mean_n: bin_width must be positive");
  const std::size_t nbins = bin_count(log.duration, bin_width);
  std::vector<double> area(nbins, 0.0);
  // integrate the staircase segment [t0, t1) at level n into the bins it covers
  auto deposit = [&](double t0, double t1, int n) {
    if (n == 0 || t1 <= t0) return;
    std::size_t b = static_cast<std::size_t>(std::floor(t0 / bin_width));
    while (b < nbins && t0 < t1) {
      const double edge = bin_width * static_cast<double>(b + 1);
      const double end = std::min(edge, t1);
      area[b] += n * (end - t0);
      t0 = end;
      ++b;
    }
  };
  double t = 0.0;
  int n = log.n0;
  for (const auto& e : log.events) {
    deposit(t, e.time, n);
    t = e.time;
    n = e.n_after();
  }
  deposit(t, bin_width * static_cast<double>(nbins), n);
  for (double& a : area) a /= bin_width;
  return area;
}

/// Poisson counts with mean bin_width * (bg_rate + per_atom_rate * mean N).
inline FluorescenceTrace synthesize(const EventLog& log, double per_atom_rate, double bg_rate,
                                    double bin_width, std::uint64_t seed) {
  detail::require(per_atom_rate >= 0.0 && bg_rate >= 0.0, "synthesize: rates must be >= 0");
  detail::require(bin_width > 0.0, "synthesize: bin_width must be positive");
  detail::require(log.duration > 0.0, "synthesize: log has no duration");
  FluorescenceTrace trace;
  trace.bin_width = bin_width;
  trace.per_atom_rate = per_atom_rate;
  trace.bg_rate = bg_rate;
  trace.seed = seed;
  Rng rng(seed);
  const std::vector<double> nbar = binned_mean_n(log, bin_width);
  trace.counts.reserve(nbar.size());
  for (double x : nbar) trace.counts.push_back(rng.poisson(bin_width * (bg_rate + per_atom_rate * x)));
  return trace;
}

/// Shot-noise limited level separation at atom number n: one atom's counts
/// per bin over the Poisson width of the level.
inline double level_snr(double per_atom_rate, double bg_rate, double bin_width, int n) {
  const double mean = bin_width * (bg_rate + per_atom_rate * n);
  if (mean <= 0.0) return INFINITY;
  return per_atom_rate * bin_width / std::sqrt(mean);
}

}  // namespace atomcount
