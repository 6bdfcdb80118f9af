#pragma once

// Recovery of the atom-number staircase and the load / loss events from a
// binned fluorescence trace.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "atomcount/errors.hpp"
#include "atomcount/markov.hpp"
#include "atomcount/trace.hpp"

namespace atomcount {

struct Calibration {
  double per_atom_rate = 0.0;  // counts/s
  double bg_rate = 0.0;        // counts/s
  double per_atom_rate_err = 0.0;
  double bg_rate_err = 0.0;
  int levels = 0;              // distinct occupancy levels used
};

struct CalibrateOptions {
  double stabilized_bin = 0.25;  // histogram bin in Anscombe units (level width ~ 1)
  int min_mode_bins = 5;         // a mode needs this many trace bins
  double min_mode_share = 0.005; // ... and this fraction of the largest mode
  int max_iterations = 25;
};

namespace detail {

/// Peaks of the count histogram in variance-stabilised units y = 2 sqrt(c),
/// where every level has unit width. Returned in count units, ascending.
inline std::vector<double> count_modes(const std::vector<std::int64_t>& counts,
                                       const CalibrateOptions& opt) {
  if (counts.empty()) return {};
  std::vector<double> y(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i)
    y[i] = 2.0 * std::sqrt(static_cast<double>(std::max<std::int64_t>(counts[i], 0)));
  const auto [lo_it, hi_it] = std::minmax_element(y.begin(), y.end());
  const double lo = *lo_it - 2.0;
  const double h = opt.stabilized_bin;
  const std::size_t nb = static_cast<std::size_t>((*hi_it + 2.0 - lo) / h) + 1;
  std::vector<double> hist(nb, 0.0);
  for (double v : y) hist[static_cast<std::size_t>((v - lo) / h)] += 1.0;
  // Gaussian smoothing with sigma = 1 (one level width)
  const int half = static_cast<int>(std::ceil(3.0 / h));
  std::vector<double> smooth(nb, 0.0);
  for (std::size_t i = 0; i < nb; ++i) {
    if (hist[i] == 0.0) continue;
    for (int k = -half; k <= half; ++k) {
      const long j = static_cast<long>(i) + k;
      if (j < 0 || j >= static_cast<long>(nb)) continue;
      const double d = k * h;
      smooth[static_cast<std::size_t>(j)] += hist[i] * std::exp(-0.5 * d * d);
    }
  }
  // mass of one isolated level after smoothing peaks at ~ n h / sqrt(2 pi)
  const double min_height = opt.min_mode_bins * h / std::sqrt(2.0 * std::numbers::pi);
  std::vector<std::size_t> peaks;
  for (std::size_t i = 1; i + 1 < nb; ++i)
    if (smooth[i] > smooth[i - 1] && smooth[i] >= smooth[i + 1] && smooth[i] >= min_height)
      peaks.push_back(i);
  // drop peaks not separated from a taller neighbour by a real dip
  std::vector<std::size_t> kept;
  for (std::size_t p : peaks) {
    if (!kept.empty()) {
      const std::size_t q = kept.back();
      const double dip = *std::min_element(smooth.begin() + static_cast<long>(q),
                                           smooth.begin() + static_cast<long>(p) + 1);
      if (dip > 0.6 * std::min(smooth[p], smooth[q])) {
        if (smooth[p] > smooth[q]) kept.back() = p;
        continue;
      }
    }
    kept.push_back(p);
  }
  // Bins caught mid-transition spread thinly between levels; a real level
  // holds a sizeable share of the bins near its centre.
  std::vector<double> centres, mass;
  for (std::size_t p : kept) {
    const double yc = lo + (static_cast<double>(p) + 0.5) * h;
    double m = 0.0;
    for (double v : y) m += std::abs(v - yc) < 2.0 ? 1.0 : 0.0;
    centres.push_back(yc);
    mass.push_back(m);
  }
  const double top = mass.empty() ? 0.0 : *std::max_element(mass.begin(), mass.end());
  std::vector<double> modes;
  for (std::size_t i = 0; i < centres.size(); ++i)
    if (mass[i] >= std::max<double>(opt.min_mode_bins, opt.min_mode_share * top))
      modes.push_back(0.25 * centres[i] * centres[i]);
  return modes;
}

}  // namespace detail

/// Background and per-atom rates from the equally spaced levels of the count
/// histogram. Assumes stray light below 3/4 of one atom's signal, so the
/// lowest visible level can be numbered.
inline Calibration calibrate(const FluorescenceTrace& trace, const CalibrateOptions& opt = {}) {
  detail::require(trace.bin_width > 0.0, "calibrate: bin_width must be positive");
  const std::vector<double> modes = detail::count_modes(trace.counts, opt);
  if (modes.size() < 2) throw DetectionError("calibrate: fewer than 2 resolvable levels");
  double spacing = INFINITY;
  for (std::size_t i = 1; i < modes.size(); ++i) spacing = std::min(spacing, modes[i] - modes[i - 1]);
  if (!(spacing > 0.0)) throw DetectionError("calibrate: degenerate level spacing");
  const double k_low = std::floor(modes.front() / spacing + 0.25);
  double bg = modes.front() - k_low * spacing;  // counts per bin
  double a = spacing;                            // counts per bin per atom

  Calibration cal;
  std::vector<int> last_k;
  for (int it = 0; it < opt.max_iterations; ++it) {
    // weighted fit c = bg + a k over bins lying within 3 sigma of their level
    double s00 = 0, s01 = 0, s11 = 0, r0 = 0, r1 = 0;
    std::vector<int> ks;
    ks.reserve(trace.counts.size());
    std::map<int, int> populated;
    for (std::int64_t c64 : trace.counts) {
      const double c = static_cast<double>(c64);
      const int k = std::max(0, static_cast<int>(std::lround((c - bg) / a)));
      ks.push_back(k);
      const double level = bg + a * k;
      const double var = std::max(level, 1.0);
      if (std::abs(c - level) > 3.0 * std::sqrt(var) + 0.5) continue;
      const double w = 1.0 / var;
      s00 += w;
      s01 += w * k;
      s11 += w * k * k;
      r0 += w * c;
      r1 += w * c * k;
      ++populated[k];
    }
    int levels = 0;
    for (const auto& [k, n] : populated) levels += n >= 2 ? 1 : 0;
    if (levels < 2) throw DetectionError("calibrate: fewer than 2 populated levels");
    const double det = s00 * s11 - s01 * s01;
    if (!(det > 0.0)) throw DetectionError("calibrate: singular level fit");
    bg = (s11 * r0 - s01 * r1) / det;
    a = (s00 * r1 - s01 * r0) / det;
    if (!(a > 0.0)) throw DetectionError("calibrate: non-positive level spacing");
    cal.bg_rate = bg / trace.bin_width;
    cal.per_atom_rate = a / trace.bin_width;
    cal.bg_rate_err = std::sqrt(s11 / det) / trace.bin_width;
    cal.per_atom_rate_err = std::sqrt(s00 / det) / trace.bin_width;
    cal.levels = levels;
    if (ks == last_k) break;
    last_k = std::move(ks);
  }
  return cal;
}

/// Probability that another event falls into the same bin as a given one.
inline double coincidence_probability(double event_rate, double bin_width) {
  detail::require(event_rate >= 0.0 && bin_width >= 0.0,
                  "coincidence_probability: inputs must be >= 0");
  return -std::expm1(-event_rate * bin_width);
}

struct DetectOptions {
  double min_snr = 6.0;  // per-atom step over shot noise at the highest level
  // A bin deviating from its plateau by more than max(excursion_sigma * noise,
  // excursion_floor) atoms marks a hidden excursion (see detect()).
  double excursion_sigma = 5.0;
  double excursion_floor = 0.1;
  double guard_sigma = 3.0;  // outliers closer than 0.5 + guard_sigma * noise are flattened
  bool reconstruct_excursions = true;
  // a two-atom step whose window holds two bins this far off-integer is split
  // into two one-atom losses
  double split_sigma = 3.0;
  double split_floor = 0.1;
};

struct DetectionReport {
  std::size_t bins = 0;
  std::size_t spikes_suppressed = 0;    // single-bin excursions removed by the median guard
  std::size_t merged_transitions = 0;   // intermediate bins folded into one step
  std::size_t multi_step = 0;           // |dN| > 2 or two loads in one step
  std::size_t excursions = 0;           // sub-bin load/loss pairs rebuilt from plateau bins
  std::size_t split_pairs = 0;          // dN = -2 steps resolved as two one-atom losses
  int max_level = 0;
  double snr = 0.0;
  double misclassification_estimate = 0.0;

  std::size_t ambiguous() const {
    return (spikes_suppressed > excursions ? spikes_suppressed - excursions : 0) + multi_step;
  }
};

struct Detection {
  EventLog log;
  DetectionReport report;
};

namespace detail {

struct Run {
  int level;
  std::size_t start;
  std::size_t length;
};

}  // namespace detail

/// Rounding-based level assignment with a 3-bin median guard; steps between
/// plateaus become load / loss1 / loss2 events at bin boundaries.
inline Detection detect(const FluorescenceTrace& trace, const Calibration& cal,
                        const DetectOptions& opt = {}) {
  detail::require(cal.per_atom_rate > 0.0, "detect: per_atom_rate must be positive");
  detail::require(trace.bin_width > 0.0, "detect: bin_width must be positive");
  Detection out;
  DetectionReport& rep = out.report;
  const std::size_t nb = trace.counts.size();
  const double bw = trace.bin_width;
  rep.bins = nb;
  out.log.duration = trace.duration();
  out.log.seed = trace.seed;
  if (nb == 0) return out;

  std::vector<double> x(nb);
  std::vector<int> raw(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    x[i] = (static_cast<double>(trace.counts[i]) / bw - cal.bg_rate) / cal.per_atom_rate;
    raw[i] = std::max(0, static_cast<int>(std::lround(x[i])));
  }
  auto noise = [&](std::size_t i) {
    const double c = std::max(static_cast<double>(trace.counts[i]), 1.0);
    return std::sqrt(c) / (cal.per_atom_rate * bw);
  };
  // 3-bin median guard. A bin that leaves and returns to the same level is
  // always flattened (the excursion pass below rebuilds it when significant);
  // any other outlier is flattened only if it sits within noise of the
  // rounding threshold.
  std::vector<int> lvl = raw;
  for (std::size_t i = 1; i + 1 < nb; ++i) {
    const int a = raw[i - 1], b = raw[i], c = raw[i + 1];
    const int med = std::max(std::min(a, b), std::min(std::max(a, b), c));
    if (med == b) continue;
    const bool spike = a == c;
    const bool marginal = std::abs(x[i] - med) < 0.5 + opt.guard_sigma * noise(i);
    if (spike || marginal) {
      lvl[i] = med;
      ++rep.spikes_suppressed;
    }
  }
  rep.max_level = *std::max_element(lvl.begin(), lvl.end());
  rep.snr = level_snr(cal.per_atom_rate, std::max(cal.bg_rate, 0.0), bw, rep.max_level);
  if (rep.snr < opt.min_snr)
    throw DetectionError("detect: level SNR " + std::to_string(rep.snr) + " below threshold " +
                         std::to_string(opt.min_snr));

  std::vector<detail::Run> runs;
  for (std::size_t i = 0; i < nb; ++i) {
    if (runs.empty() || runs.back().level != lvl[i]) runs.push_back({lvl[i], i, 0});
    ++runs.back().length;
  }

  struct Pending {
    double time;
    EventKind kind;
  };
  std::vector<Pending> pending;
  auto emit = [&](std::size_t boundary, int delta) {
    const double t = bw * static_cast<double>(boundary);
    if (delta > 1 || delta < -2) ++rep.multi_step;
    int j = 0;
    // split steps share the boundary; keep times strictly increasing
    auto push = [&](EventKind k) { pending.push_back({t + (j++) * 1e-6 * bw, k}); };
    while (delta > 0) { push(EventKind::load); --delta; }
    while (delta <= -2) { push(EventKind::loss2); delta += 2; }
    if (delta == -1) push(EventKind::loss1);
  };

  std::size_t r = 0;
  while (r + 1 < runs.size()) {
    const detail::Run& from = runs[r];
    // collapse single-bin runs that lie monotonically between two plateaus
    std::size_t s = r + 1;
    while (s + 1 < runs.size() && runs[s].length == 1) {
      const int prev = runs[s - 1].level, cur = runs[s].level, next = runs[s + 1].level;
      if ((prev - cur) * (cur - next) <= 0) break;
      ++s;
    }
    const detail::Run& to = runs[s];
    if (to.level - from.level == -2) {
      // one event leaves at most one fractional bin; two means two losses
      std::vector<std::size_t> frac;
      for (std::size_t b = from.start + from.length - 1; b <= to.start; ++b) {
        const double off = std::abs(x[b] - std::round(x[b]));
        if (off > std::max(opt.split_sigma * noise(b), opt.split_floor)) frac.push_back(b);
      }
      if (frac.size() >= 2) {
        auto at = [&](std::size_t b, int upper) {
          const double f = std::clamp(static_cast<double>(upper) - x[b], 0.0, 1.0);
          return bw * (static_cast<double>(b) + 1.0 - f);
        };
        const double t1 = at(frac.front(), from.level);
        const double t2 = std::max(at(frac.back(), from.level - 1), t1 + 1e-6 * bw);
        pending.push_back({t1, EventKind::loss1});
        pending.push_back({t2, EventKind::loss1});
        ++rep.split_pairs;
        rep.merged_transitions += s - r - 1;
        r = s;
        continue;
      }
    }
    if (s == r + 1) {
      emit(to.start, to.level - from.level);
    } else {
      // boundary where the staircase crosses, from the fractional bins
      double at_from = 0.0;
      for (std::size_t k = r + 1; k < s; ++k) {
        const std::size_t bin = runs[k].start;
        at_from += std::clamp((x[bin] - to.level) / static_cast<double>(from.level - to.level), 0.0, 1.0);
      }
      const std::size_t first = runs[r + 1].start;
      const std::size_t boundary = first + static_cast<std::size_t>(std::lround(at_from));
      rep.merged_transitions += s - r - 1;
      emit(std::max<std::size_t>(boundary, 1), to.level - from.level);
    }
    r = s;
  }

  if (opt.reconstruct_excursions) {
    // Inside a plateau at level a, a group of bins all displaced the same way
    // from a, flanked by clean bins, is a one-atom excursion shorter than the
    // median guard can keep: a load then loss1 (above a) or loss1 then load
    // (below a). Its excess area gives the dwell time.
    for (const detail::Run& run : runs) {
      if (run.length < 3) continue;
      const int a = run.level;
      auto deviation = [&](std::size_t i) {
        const double d = x[i] - a;
        return std::abs(d) > std::max(opt.excursion_sigma * noise(i), opt.excursion_floor) ? d : 0.0;
      };
      std::size_t i = run.start + 1;
      const std::size_t stop = run.start + run.length - 1;  // last bin must stay clean
      while (i < stop) {
        const double d0 = deviation(i);
        if (d0 == 0.0 || deviation(i - 1) != 0.0) { ++i; continue; }
        std::size_t j = i;
        double area = 0.0;
        while (j < stop && deviation(j) != 0.0 && (deviation(j) > 0.0) == (d0 > 0.0)) {
          area += x[j] - a;
          ++j;
        }
        const std::size_t len = j - i;
        const bool flanked = j < stop + 1 && j <= stop && deviation(j) == 0.0;
        const bool upward = d0 > 0.0;
        const double dwell = std::abs(area);
        if (flanked && dwell <= static_cast<double>(len) + 0.5 && (upward || a >= 1)) {
          const double lead = std::clamp(1.0 - std::min(std::abs(x[i] - a), 1.0), 0.0, 1.0);
          const double t1 = bw * (static_cast<double>(i) + lead);
          const double t2 = std::min(t1 + dwell * bw, bw * static_cast<double>(j) - 1e-6 * bw);
          if (t2 > t1) {
            pending.push_back({t1, upward ? EventKind::load : EventKind::loss1});
            pending.push_back({t2, upward ? EventKind::loss1 : EventKind::load});
            ++rep.excursions;
          }
        }
        i = std::max(j, i + 1);
      }
    }
  }

  std::stable_sort(pending.begin(), pending.end(),
                   [](const Pending& l, const Pending& r2) { return l.time < r2.time; });
  EventLog& log = out.log;
  log.n0 = runs.front().level;
  int n = log.n0;
  for (const Pending& p : pending) {
    log.events.push_back({p.time, p.kind, n});
    n += delta_n(p.kind);
  }
  const double rate = log.events.size() / std::max(log.duration, bw);
  rep.misclassification_estimate = coincidence_probability(rate, bw);
  return out;
}

}  // namespace atomcount
