#pragma once

// Composed stages: physics -> rate model, and the closed-loop
// simulate -> synthesize -> detect -> tabulate -> fit experiment.

#include <cstdint>
#include <optional>
#include <vector>

#include "atomcount/collisions.hpp"
#include "atomcount/detect.hpp"
#include "atomcount/fit.hpp"
#include "atomcount/markov.hpp"
#include "atomcount/trace.hpp"
#include "atomcount/trap.hpp"

namespace atomcount {

/// Stream numbers split off the top-level seed, one per stage.
enum class Stage : std::uint64_t { channels = 1, simulate = 2, synthesize = 3, scan = 4 };

inline std::uint64_t stage_seed(std::uint64_t seed, Stage s) {
  return stream_seed(seed, static_cast<std::uint64_t>(s));
}

/// Chain rates for a trap: b1 = beta1 / V, b2 = beta2 / (2 V) (each two-atom
/// event removes two atoms).
inline RateModel rate_model_from(const TrapConfig& trap, const EffectiveBetas& betas) {
  const double v = effective_volume_cm3(trap);
  return {trap.load_rate, 1.0 / trap.bg_lifetime, betas.beta1 / v, betas.beta2 / (2.0 * v)};
}

/// Load rate giving stationary mean `target_mean` for the other rates of `m`.
inline double load_rate_for_mean(RateModel m, double target_mean) {
  detail::require(target_mean > 0.0, "load_rate_for_mean: target must be positive");
  double lo = 0.0, hi = 1.0;
  auto mean_at = [&](double r) {
    m.load_rate = r;
    return mean_of(master_stationary(m).p);
  };
  while (mean_at(hi) < target_mean) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-14 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (mean_at(mid) < target_mean ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct SynthParams {
  double per_atom_rate = 1e4;
  double bg_rate = 500.0;
  double bin_width = 0.1;
};

struct Recovery {
  RateModel injected;
  EventLog truth;
  FluorescenceTrace trace;
  Calibration calibration;
  Detection detection;
  EventRateTable table;
  FitResult fit;

  double pull_load() const { return fit.load_rate.pull(injected.load_rate); }
  double pull_tau() const { return fit.bg_lifetime.pull(1.0 / injected.bg_rate); }
  double pull_b1() const { return fit.b1.pull(injected.b1); }
  double pull_b2() const { return fit.b2_event.pull(injected.b2); }
};

/// Full closed loop; detection errors propagate as DetectionError.
inline Recovery closed_loop(const RateModel& model, int n0, double duration, const SynthParams& sp,
                            std::uint64_t seed, const DetectOptions& dopt = {}) {
  Recovery r;
  r.injected = model;
  r.truth = simulate(model, n0, duration, stage_seed(seed, Stage::simulate));
  r.trace = synthesize(r.truth, sp.per_atom_rate, sp.bg_rate, sp.bin_width,
                       stage_seed(seed, Stage::synthesize));
  r.calibration = calibrate(r.trace);
  r.detection = detect(r.trace, r.calibration, dopt);
  r.table = tabulate(r.detection.log);
  r.fit = fit_rates(r.table);
  return r;
}

/// Two-atom loss-rate density beta_2atoms / V (1/s) measured at each repump
/// saturation s0 by simulating `duration` seconds and fitting the event table.
inline std::vector<RatePoint> repump_scan(TrapConfig trap, const ChannelSet& channels,
                                          const ShieldingParams& shielding,
                                          const std::vector<double>& s0_values, double duration,
                                          std::uint64_t seed, std::int64_t mc_trials = 200000) {
  std::vector<RatePoint> pts;
  pts.reserve(s0_values.size());
  for (std::size_t i = 0; i < s0_values.size(); ++i) {
    trap.repump_sat = s0_values[i];
    const std::uint64_t point_seed = stream_seed(stage_seed(seed, Stage::scan), i);
    const EffectiveBetas betas =
        effective_betas(trap, channels, shielding, stage_seed(point_seed, Stage::channels), mc_trials);
    const RateModel model = rate_model_from(trap, betas);
    const EventLog log = simulate(model, 0, duration, stage_seed(point_seed, Stage::simulate));
    const FitResult fit = fit_rates(tabulate(log));
    pts.push_back({s0_values[i], fit.beta2_over_v.value, fit.beta2_over_v.error});
  }
  return pts;
}

}  // namespace atomcount
