#include <gtest/gtest.h>

#include <cmath>

#include "atomcount/fit.hpp"
#include "atomcount/pipeline.hpp"

using namespace atomcount;

namespace {

RateModel fig2_model() {
  RateModel m{0.0, 1.0 / 90.0, 0.007, 0.0012};
  m.load_rate = load_rate_for_mean(m, 2.6);
  return m;
}

}  // namespace

TEST(Tabulate, SingleLoad) {
  EventLog log;
  log.duration = 10.0;
  log.events = {{5.0, EventKind::load, 0}};
  const auto t = tabulate(log);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_DOUBLE_EQ(t.rows[0].occupancy, 5.0);
  EXPECT_DOUBLE_EQ(t.rows[1].occupancy, 5.0);
  EXPECT_EQ(t.rows[0].n_load, 1);
  EXPECT_EQ(t.rows[1].n_load, 0);
  EXPECT_DOUBLE_EQ(t.mean_n(), 0.5);
}

TEST(Tabulate, Bookkeeping) {
  const auto log = simulate({0.2, 0.02, 0.005, 0.005}, 0, 20000.0, 4);
  const auto t = tabulate(log);
  double occ = 0.0;
  std::int64_t loads = 0, l1 = 0, l2 = 0;
  for (const auto& r : t.rows) {
    occ += r.occupancy;
    loads += r.n_load;
    l1 += r.n_loss1;
    l2 += r.n_loss2;
  }
  EXPECT_NEAR(occ, log.duration, 1e-6);
  EXPECT_EQ(static_cast<std::size_t>(loads), log.count(EventKind::load));
  EXPECT_EQ(static_cast<std::size_t>(l1), log.count(EventKind::loss1));
  EXPECT_EQ(static_cast<std::size_t>(l2), log.count(EventKind::loss2));
  EXPECT_EQ(t.rows[0].n_loss1, 0);
  EXPECT_EQ(t.rows[1].n_loss2, 0);
}

TEST(FitRates, OracleTableExact) {
  const RateModel m{0.09, 1.0 / 70.0, 0.004, 0.002};
  const auto st = master_stationary(m);
  EventRateTable t;
  t.duration = 0.0;
  for (const auto& r : expected_event_rates(st.p, m)) {
    if (r.probability < 1e-6) break;
    RateRow row;
    row.n = r.n;
    row.occupancy = 1e12 * r.probability;
    row.n_load = std::llround(r.load * row.occupancy);
    row.n_loss1 = std::llround(r.loss1 * row.occupancy);
    row.n_loss2 = std::llround(r.loss2 * row.occupancy);
    t.duration += row.occupancy;
    t.rows.push_back(row);
  }
  const auto f = fit_rates(t);
  EXPECT_NEAR(f.load_rate.value, m.load_rate, 1e-6 * m.load_rate);
  EXPECT_NEAR(f.bg_lifetime.value, 70.0, 1e-4);
  EXPECT_NEAR(f.b1.value, m.b1, 1e-6 * m.b1);
  EXPECT_NEAR(f.b2_event.value, m.b2, 1e-6 * m.b2);
  EXPECT_NEAR(f.beta2_over_v.value, 2.0 * m.b2, 2e-6 * m.b2);
}

TEST(FitRates, TruthLogRecovery) {
  const RateModel m = fig2_model();
  const auto f = fit_rates(tabulate(simulate(m, 2, 1e5, 31)));
  EXPECT_LT(std::abs(f.load_rate.pull(m.load_rate)), 3.0);
  EXPECT_LT(std::abs(f.bg_lifetime.pull(90.0)), 3.0);
  EXPECT_LT(std::abs(f.b1.pull(m.b1)), 3.0);
  EXPECT_LT(std::abs(f.b2_event.pull(m.b2)), 3.0);
  EXPECT_LT(std::abs(f.load_rate.value / m.load_rate - 1.0), 0.1);
  EXPECT_LT(std::abs(f.bg_lifetime.value / 90.0 - 1.0), 0.1);
  EXPECT_LT(std::abs(f.b1.value / m.b1 - 1.0), 0.1);
  EXPECT_LT(std::abs(f.b2_event.value / m.b2 - 1.0), 0.1);
}

TEST(FitRates, PullsAreUnitNormal) {
  const RateModel m = fig2_model();
  const int runs = 40;
  double s = 0.0, s2 = 0.0;
  for (int k = 0; k < runs; ++k) {
    const auto f = fit_rates(tabulate(simulate(m, 2, 2e4, 100 + k)));
    const double p = f.b2_event.pull(m.b2);
    s += p;
    s2 += p * p;
  }
  const double mean = s / runs, sd = std::sqrt(s2 / runs - mean * mean);
  EXPECT_LT(std::abs(mean), 3.0 / std::sqrt(runs) * 1.2);
  EXPECT_GT(sd, 0.6);
  EXPECT_LT(sd, 1.4);
}

TEST(FitRates, RelativeErrorsFollowEventCounts) {
  const RateModel m = fig2_model();
  const auto t = tabulate(simulate(m, 2, 1e5, 32));
  const auto f = fit_rates(t);
  std::int64_t l2 = 0;
  for (const auto& r : t.rows) l2 += r.n_loss2;
  // the pair-loss term is fitted from the loss2 rows alone
  EXPECT_NEAR(f.b2_event.error / f.b2_event.value, 1.0 / std::sqrt(static_cast<double>(l2)), 0.2 / std::sqrt(static_cast<double>(l2)));
  const auto longer = fit_rates(tabulate(simulate(m, 2, 4e5, 32)));
  EXPECT_NEAR(longer.b1.error / f.b1.error, 0.5, 0.05);
  EXPECT_NEAR(longer.b2_event.error / f.b2_event.error, 0.5, 0.05);
}

TEST(FitRates, LoadFlatAndPairLossQuadratic) {
  const RateModel m = fig2_model();
  const auto t = tabulate(simulate(m, 2, 1e5, 33));
  // load rate: constant describes the rows
  const double r = fit_rates(t).load_rate.value;
  double chi2 = 0.0;
  int rows = 0;
  for (const auto& row : t.rows) {
    if (row.occupancy < 100.0) continue;
    const double z = (row.load_rate() - r) / row.load_error();
    chi2 += z * z;
    ++rows;
  }
  EXPECT_LT(chi2, rows + 4.0 * std::sqrt(2.0 * rows));
  const auto q = fit_loss2_with_linear_term(t);
  EXPECT_LT(std::abs(q.linear.value), 3.0 * q.linear.error);
}

TEST(FitRates, ZeroCollisions) {
  const RateModel m{0.052, 0.02, 0.0, 0.0};
  const auto f = fit_rates(tabulate(simulate(m, 2, 1e5, 12)));
  EXPECT_LT(f.b1.value, 3.0 * f.b1.error);
  EXPECT_LT(std::abs(f.b2_event.value), 3.0 * f.b2_event.error);
}

TEST(Temperature, Inverse) {
  EXPECT_EQ(infer_temperature(1.0), 0.0);
  EXPECT_NEAR(infer_temperature(4.2), 316e-6, 0.05 * 316e-6);
  EXPECT_NEAR(infer_temperature(9.2), 506e-6, 0.05 * 506e-6);
  EXPECT_NEAR(infer_temperature(16.9), 705e-6, 0.05 * 705e-6);
  for (double t : {50e-6, 316e-6, 1e-3}) EXPECT_NEAR(infer_temperature(scaling_constant(t)), t, 1e-12);
  EXPECT_THROW(infer_temperature(0.5), std::invalid_argument);
}

TEST(RepumpFit, NoiselessExact) {
  std::vector<RatePoint> pts;
  for (double s0 : {0.0, 1.0, 2.0, 4.0, 8.0, 12.0, 20.0, 30.0})
    pts.push_back({s0, 5e-3 * std::exp(-s0 / 4.2), 1e-4});
  const auto f = fit_repump_decay(pts);
  EXPECT_NEAR(f.decay.value, 4.2, 1e-6);
  EXPECT_NEAR(f.amplitude.value, 5e-3, 1e-9);
  EXPECT_NEAR(f.offset.value, 0.0, 1e-9);
}

TEST(RepumpFit, NoisyRecoveryAndCoverage) {
  const double c = 1e-3, amp = 5e-3, a = 9.2;
  const std::vector<double> s0{0, 1, 2, 3, 4, 6, 8, 10, 12, 16, 20, 25, 30, 40, 50};
  int covered = 0;
  const int trials = 200;
  for (int k = 0; k < trials; ++k) {
    Rng rng(1000 + k);
    std::vector<RatePoint> pts;
    for (double s : s0) {
      const double y = c + amp * std::exp(-s / a);
      pts.push_back({s, y + rng.normal(0.0, 0.1 * y), 0.1 * y});
    }
    const auto f = fit_repump_decay(pts);
    if (k == 0) {
      EXPECT_LT(std::abs(f.decay.value - a), 3.0 * f.decay.error);
    }
    covered += std::abs(f.decay.value - a) < f.decay.error ? 1 : 0;
  }
  const double share = static_cast<double>(covered) / trials;
  EXPECT_GT(share, 0.55);
  EXPECT_LT(share, 0.80);
}

TEST(RepumpFit, HotterTrapDecaysSlower) {
  double prev = 0.0;
  for (double t : {316e-6, 506e-6, 705e-6}) {
    std::vector<RatePoint> pts;
    for (double s0 : {0.0, 2.0, 4.0, 8.0, 16.0, 32.0, 50.0})
      pts.push_back({s0, 1e-3 + 4e-3 * std::exp(-s0 / scaling_constant(t)), 5e-5});
    const double a = fit_repump_decay(pts).decay.value;
    EXPECT_GT(a, prev);
    prev = a;
  }
}

TEST(RepumpFit, NeedsSpan) {
  std::vector<RatePoint> pts{{2, 1, 0.1}, {3, 0.9, 0.1}, {4, 0.8, 0.1}, {5, 0.7, 0.1}};
  EXPECT_THROW(fit_repump_decay(pts), std::invalid_argument);
}

TEST(Extrapolate, Volume) {
  SuppressionFit f;
  f.amplitude = {0.0, 1e-3};
  EXPECT_EQ(extrapolate_beta_hcc(f, 2e-9).value, 0.0);
  f.amplitude = {0.02, 0.001};
  const auto b = extrapolate_beta_hcc_r0(f, 10e-6, 2e-6);
  const double v = effective_volume(1e-3);
  EXPECT_NEAR(b.value, 0.02 * v, 1e-20);
  EXPECT_NEAR(b.error, std::hypot(0.001 * v, 0.02 * v * 0.6), 1e-20);
}

TEST(Extrapolate, ScanRecoversInjectedWhenEveryHccEjectsBoth) {
  // depth below 0.22 K in every direction
  TrapConfig trap;
  trap.depth_anisotropy = 1.4;
  const std::vector<double> s0{0, 1, 2, 3, 4, 6, 8, 10, 12, 16, 20, 25, 30};
  const auto pts = repump_scan(trap, ChannelSet{}, ShieldingParams{}, s0, 2e4, 3, 50000);
  const auto f = fit_repump_decay(pts);
  const auto b = extrapolate_beta_hcc_r0(f, trap.r0, 2e-6);
  EXPECT_LT(std::abs(b.value - 4.1e-11), 3.0 * b.error);
  EXPECT_LT(std::abs(f.decay.value - scaling_constant(trap.temperature)), 3.0 * f.decay.error);
}
