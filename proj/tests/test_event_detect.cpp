#include <gtest/gtest.h>

#include <cmath>

#include "atomcount/detect.hpp"
#include "atomcount/pipeline.hpp"

using namespace atomcount;

namespace {

// Expected counts without noise, rounded to integers.
FluorescenceTrace noiseless(const EventLog& log, double a, double bg, double bw) {
  FluorescenceTrace tr;
  tr.bin_width = bw;
  tr.per_atom_rate = a;
  tr.bg_rate = bg;
  for (double x : binned_mean_n(log, bw)) tr.counts.push_back(std::llround(bw * (bg + a * x)));
  return tr;
}

// Staircase with steps on bin boundaries and plateaus of several bins.
EventLog staircase() {
  EventLog log;
  log.n0 = 1;
  log.duration = 200.0;
  const std::vector<std::pair<double, EventKind>> steps{
      {3.0, EventKind::load},  {7.5, EventKind::load},  {9.0, EventKind::loss2}, {15.2, EventKind::load},
      {20.0, EventKind::loss1}, {30.0, EventKind::loss1}, {41.3, EventKind::load}, {55.0, EventKind::load},
      {60.0, EventKind::load},  {70.0, EventKind::loss2}, {90.0, EventKind::loss1}, {120.0, EventKind::load},
      {150.0, EventKind::loss1}, {151.0, EventKind::load}, {165.0, EventKind::load},
      {180.0, EventKind::loss2}};
  int n = log.n0;
  for (auto [t, k] : steps) {
    log.events.push_back({t, k, n});
    n += delta_n(k);
  }
  log.check();
  return log;
}

// Share of true events matched by a detected event of the same kind within
// `window` seconds.
double recovered_share(const EventLog& truth, const EventLog& found, double window) {
  std::vector<bool> used(found.events.size(), false);
  std::size_t lo = 0, hit = 0;
  for (const auto& e : truth.events) {
    while (lo < found.events.size() && found.events[lo].time < e.time - window) ++lo;
    for (std::size_t j = lo; j < found.events.size() && found.events[j].time <= e.time + window; ++j) {
      if (!used[j] && found.events[j].kind == e.kind) {
        used[j] = true;
        ++hit;
        break;
      }
    }
  }
  return static_cast<double>(hit) / static_cast<double>(truth.events.size());
}

// Events with no neighbour closer than `gap` seconds.
EventLog isolated(const EventLog& log, double gap) {
  EventLog out = log;
  out.events.clear();
  for (std::size_t i = 0; i < log.events.size(); ++i) {
    const double prev = i > 0 ? log.events[i].time - log.events[i - 1].time : INFINITY;
    const double next = i + 1 < log.events.size() ? log.events[i + 1].time - log.events[i].time : INFINITY;
    if (std::min(prev, next) > gap) out.events.push_back(log.events[i]);
  }
  return out;
}

}  // namespace

TEST(Calibrate, NoiselessExact) {
  const auto tr = noiseless(staircase(), 1e4, 500.0, 0.1);
  const auto cal = calibrate(tr);
  EXPECT_NEAR(cal.per_atom_rate, 1e4, 1e-6);
  EXPECT_NEAR(cal.bg_rate, 500.0, 1e-6);
}

TEST(Calibrate, RecoversRatesFromNoisyDwell) {
  EventLog log;
  log.duration = 3000.0;
  log.n0 = 0;
  log.events = {{1000.0, EventKind::load, 0}, {2000.0, EventKind::load, 1}};
  const auto tr = synthesize(log, 1e4, 500.0, 0.1, 17);
  const auto cal = calibrate(tr);
  EXPECT_NEAR(cal.per_atom_rate, 1e4, 0.02 * 1e4);
  EXPECT_NEAR(cal.bg_rate, 500.0, 50.0);
  EXPECT_EQ(cal.levels, 3);
}

TEST(Calibrate, ConstantTraceFails) {
  EventLog log;
  log.n0 = 2;
  log.duration = 500.0;
  EXPECT_THROW(calibrate(synthesize(log, 1e4, 500.0, 0.1, 1)), DetectionError);
}

TEST(Detect, NoiselessRoundTrip) {
  const EventLog truth = staircase();
  const auto tr = noiseless(truth, 1e4, 500.0, 0.1);
  const auto d = detect(tr, calibrate(tr));
  ASSERT_EQ(d.log.events.size(), truth.events.size());
  for (std::size_t i = 0; i < truth.events.size(); ++i) {
    EXPECT_NEAR(d.log.events[i].time, truth.events[i].time, 1e-9) << i;
    EXPECT_EQ(d.log.events[i].kind, truth.events[i].kind) << i;
    EXPECT_EQ(d.log.events[i].n_before, truth.events[i].n_before) << i;
  }
  EXPECT_EQ(d.log.n0, truth.n0);
  EXPECT_NO_THROW(d.log.check());
}

TEST(Detect, TwoLossesInOneBinReadAsPairLoss) {
  EventLog truth;
  truth.n0 = 3;
  truth.duration = 100.0;
  truth.events = {{10.0, EventKind::load, 3}, {50.02, EventKind::loss1, 4}, {50.07, EventKind::loss1, 3}};
  const auto tr = noiseless(truth, 1e4, 500.0, 0.1);
  const auto d = detect(tr, calibrate(tr));
  ASSERT_EQ(d.log.events.size(), 2u);
  EXPECT_EQ(d.log.events[1].kind, EventKind::loss2);
  EXPECT_EQ(d.log.events[1].n_before, 4);
}

TEST(Detect, LossesInNeighbouringBinsStaySeparate) {
  EventLog truth;
  truth.n0 = 3;
  truth.duration = 100.0;
  truth.events = {{10.0, EventKind::load, 3}, {50.03, EventKind::loss1, 4}, {50.16, EventKind::loss1, 3}};
  const auto tr = noiseless(truth, 1e4, 500.0, 0.1);
  const auto d = detect(tr, calibrate(tr));
  ASSERT_EQ(d.log.events.size(), 3u);
  EXPECT_EQ(d.log.events[1].kind, EventKind::loss1);
  EXPECT_EQ(d.log.events[2].kind, EventKind::loss1);
  EXPECT_NEAR(d.log.events[1].time, 50.03, 0.1);
  EXPECT_NEAR(d.log.events[2].time, 50.16, 0.1);
}

TEST(Detect, ShortExcursionRebuilt) {
  EventLog truth;
  truth.n0 = 2;
  truth.duration = 100.0;
  truth.events = {{5.0, EventKind::load, 2}, {40.02, EventKind::load, 3}, {40.09, EventKind::loss1, 4}};
  const auto tr = noiseless(truth, 1e4, 500.0, 0.1);
  const auto d = detect(tr, calibrate(tr));
  EXPECT_EQ(d.report.excursions, 1u);
  ASSERT_EQ(d.log.events.size(), 3u);
  EXPECT_EQ(d.log.events[1].kind, EventKind::load);
  EXPECT_EQ(d.log.events[2].kind, EventKind::loss1);
  EXPECT_NEAR(d.log.events[2].time - d.log.events[1].time, 0.07, 1e-3);
}

TEST(Detect, LowRateRoundTrip) {
  // ~0.05 events/s, 10 kHz per atom, 100 ms bins
  RateModel m{0.0, 1.0 / 120.0, 0.0015, 0.003};
  m.load_rate = load_rate_for_mean(m, 1.5);
  const EventLog truth = simulate(m, 2, 1e5, stage_seed(5, Stage::simulate));
  ASSERT_LT(truth.events.size() / 1e5, 0.06);
  const auto tr = synthesize(truth, 1e4, 500.0, 0.1, stage_seed(5, Stage::synthesize));
  const auto d = detect(tr, calibrate(tr));
  // pairs inside one bin are below resolution; everything else must come back
  const double rate = truth.events.size() / truth.duration;
  EXPECT_GE(recovered_share(truth, d.log, 0.2), 1.0 - 3.0 * coincidence_probability(rate, 0.1));
  EXPECT_GE(recovered_share(isolated(truth, 0.3), d.log, 0.2), 0.998);
  EXPECT_NO_THROW(d.log.check());
}

TEST(Detect, LowSnrRejected) {
  const RateModel m{0.05, 0.02, 0.0, 0.0};
  const EventLog truth = simulate(m, 2, 2000.0, 3);
  const auto tr = synthesize(truth, 1e3, 500.0, 0.01, 4);
  EXPECT_THROW(
      {
        const auto cal = calibrate(tr);
        detect(tr, cal);
      },
      DetectionError);
}

TEST(Detect, CoincidenceProbability) {
  EXPECT_NEAR(coincidence_probability(0.05, 0.1), 0.005, 0.0001);
  EXPECT_EQ(coincidence_probability(0.0, 0.1), 0.0);
  EXPECT_NEAR(coincidence_probability(0.1, 0.1), 0.01, 0.0001);
}

TEST(Detect, Deterministic) {
  const RateModel m{0.08, 0.02, 0.004, 0.004};
  const auto truth = simulate(m, 1, 20000.0, 8);
  const auto tr = synthesize(truth, 1e4, 500.0, 0.1, 9);
  EXPECT_EQ(detect(tr, calibrate(tr)).log, detect(tr, calibrate(tr)).log);
}
