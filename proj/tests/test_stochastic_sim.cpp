#include <gtest/gtest.h>

#include <cmath>

#include "atomcount/markov.hpp"

using namespace atomcount;

namespace {

std::vector<double> poisson_pmf(double mean, std::size_t n) {
  std::vector<double> p(n);
  for (std::size_t k = 0; k < n; ++k)
    p[k] = std::exp(-mean + k * std::log(mean) - std::lgamma(static_cast<double>(k) + 1.0));
  return p;
}

// N(t) from a log at time t
int n_at(const EventLog& log, double t) {
  int n = log.n0;
  for (const auto& e : log.events) {
    if (e.time > t) break;
    n = e.n_after();
  }
  return n;
}

}  // namespace

TEST(Simulate, EmptyWhenAllRatesZero) {
  const EventLog log = simulate({0, 0, 0, 0}, 3, 100.0, 1);
  EXPECT_TRUE(log.events.empty());
  EXPECT_EQ(log.final_n(), 3);
}

TEST(Simulate, DeterministicPerSeed) {
  const RateModel m{0.2, 0.05, 0.01, 0.01};
  EXPECT_EQ(simulate(m, 1, 5000.0, 9), simulate(m, 1, 5000.0, 9));
  EXPECT_NE(simulate(m, 1, 5000.0, 9).events, simulate(m, 1, 5000.0, 10).events);
}

TEST(Simulate, LogInvariants) {
  const RateModel m{0.5, 0.02, 0.01, 0.02};
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const EventLog log = simulate(m, 0, 2000.0, seed);
    EXPECT_NO_THROW(log.check());
    double last = -1.0;
    for (const auto& e : log.events) {
      EXPECT_GT(e.time, last);
      EXPECT_LT(e.time, log.duration);
      EXPECT_GE(e.n_after(), 0);
      if (e.kind == EventKind::loss2) {
        EXPECT_GE(e.n_before, 2);
      }
      EXPECT_EQ(e.n_after() - e.n_before, delta_n(e.kind));
      last = e.time;
    }
  }
}

TEST(Simulate, PureDeathMean) {
  const double tau = 10.0;
  const RateModel m{0.0, 1.0 / tau, 0.0, 0.0};
  const int seeds = 20000;
  for (double t : {5.0, 10.0, 20.0}) {
    double s = 0.0, s2 = 0.0;
    for (int k = 0; k < seeds; ++k) {
      const int n = n_at(simulate(m, 5, 30.0, static_cast<std::uint64_t>(k) + 1), t);
      s += n;
      s2 += n * n;
    }
    const double mean = s / seeds;
    const double sd = std::sqrt((s2 / seeds - mean * mean) / seeds);
    EXPECT_NEAR(mean, 5.0 * std::exp(-t / tau), 3.0 * sd) << "t = " << t;
  }
}

TEST(Simulate, PoissonStationaryLaw) {
  const double tau = 50.0;
  const RateModel m{2.6 / tau, 1.0 / tau, 0.0, 0.0};
  // 1e6 events need ~ 1e6 / (2 R) s
  const EventLog log = simulate(m, 3, 1e6 / (2.0 * m.load_rate), 77);
  ASSERT_GE(log.events.size(), 1000000u * 99 / 100);
  const auto occ = occupancy_distribution(log);
  EXPECT_LT(total_variation(occ, poisson_pmf(2.6, occ.size() + 20)), 0.01);
}

TEST(Master, PoissonWhenNoCollisions) {
  const RateModel m{0.052, 0.02, 0.0, 0.0};
  const auto st = master_stationary(m);
  const auto ref = poisson_pmf(2.6, st.p.size());
  for (std::size_t k = 0; k < st.p.size(); ++k) EXPECT_NEAR(st.p[k], ref[k], 1e-12);
  EXPECT_NEAR(mean_of(st.p), 2.6, 1e-10);
}

TEST(Master, AbsorbingAtZero) {
  const auto st = master_stationary({0.0, 0.1, 0.01, 0.01});
  EXPECT_NEAR(st.p[0], 1.0, 1e-14);
}

TEST(Master, DetailedBalanceWithoutPairs) {
  // pure birth-death: p(n+1) loss(n+1) = p(n) R
  const RateModel m{0.3, 0.05, 0.02, 0.0};
  const auto st = master_stationary(m);
  for (int n = 0; n + 1 < 20; ++n)
    EXPECT_NEAR(st.p[n + 1] * m.loss1_rate(n + 1), st.p[n] * m.load_rate, 1e-13);
}

TEST(Master, MatchesMonteCarlo) {
  const RateModel m{0.08, 1.0 / 60.0, 0.002, 0.004};
  const auto st = master_stationary(m);
  const EventLog log = simulate(m, 2, 7.5e6, 1234);
  ASSERT_GE(log.events.size(), 1000000u);
  EXPECT_LT(total_variation(occupancy_distribution(log), st.p), 0.02);
}

TEST(Master, TruncationFailure) {
  EXPECT_THROW(master_stationary({1e3, 1.0, 0.0, 0.0}, 64, 1e-12, 256), NumericalError);
  EXPECT_NO_THROW(master_stationary({1e3, 1.0, 0.0, 0.0}, 64, 1e-12, 2048));
}

TEST(Master, ExpectedEventRates) {
  const RateModel m{0.1, 0.02, 0.0, 0.003};
  const auto rows = expected_event_rates(master_stationary(m).p, m);
  EXPECT_EQ(rows[0].loss2, 0.0);
  EXPECT_EQ(rows[1].loss2, 0.0);
  EXPECT_NEAR(rows[4].loss2 / rows[2].loss2, 6.0, 1e-12);
  for (std::size_t n = 1; n < 10; ++n) EXPECT_NEAR(rows[n].loss1, n * m.bg_rate, 1e-15);
  for (const auto& r : rows) EXPECT_EQ(r.load, m.load_rate);
}

TEST(RateModel, Validate) {
  EXPECT_THROW((RateModel{-1, 0, 0, 0}).validate(), std::invalid_argument);
  EXPECT_THROW((RateModel{0, 0, -1, 0}).validate(), std::invalid_argument);
  EXPECT_THROW(simulate({0.1, 0.1, 0, 0}, -1, 10.0, 1), std::invalid_argument);
}
