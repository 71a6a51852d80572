#include <gtest/gtest.h>

#include <sstream>

#include "freqalign/scheduler.hpp"
#include "oracles.hpp"

using namespace freqalign;

namespace {

SchedulerConfig small(int bands, int interval, int warmup, int radius = 1) {
  SchedulerConfig c;
  c.grid_cells = 16;
  c.window = 4;
  c.bands = bands;
  c.interval = interval;
  c.warmup_end = warmup;
  c.radius = radius;
  return c.resolved();
}

std::vector<int> run(FrequencyScheduler& s, const std::vector<double>& eps) {
  std::vector<int> bands;
  for (double e : eps) {
    bands.push_back(s.band());
    s.step(e);
  }
  return bands;
}

}  // namespace

TEST(SchedulerConfig, Validation) {
  EXPECT_NO_THROW(SchedulerConfig{}.resolved().validate());
  SchedulerConfig c = small(3, 2, 4);
  c.movement_end = c.warmup_end;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small(3, 2, 4);
  c.movement_end = c.warmup_end + 5;  // < n_bands * T
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("n_bands * T"), std::string::npos);
  }
  c = small(3, 2, 4);
  c.window = 17;
  EXPECT_THROW(c.validate(), ConfigError);
  SchedulerConfig full;
  full.window = 64;
  full = full.resolved();
  EXPECT_EQ(full.bands, 1);
  EXPECT_NO_THROW(full.validate());
}

TEST(Scheduler, InitialState) {
  FrequencyScheduler s(SchedulerConfig{});
  EXPECT_EQ(s.phase(), Phase::warmup);
  EXPECT_EQ(s.band(), 0);
  EXPECT_EQ(s.iteration(), 0);
  EXPECT_EQ(s.state().direction, 1);
  EXPECT_TRUE(s.state().history.empty());
}

TEST(Scheduler, WarmupStaysOnBandZero) {
  FrequencyScheduler s(small(3, 2, 7));
  for (int t = 0; t < 7; ++t) {
    EXPECT_EQ(s.phase(), Phase::warmup);
    EXPECT_EQ(s.band(), 0);
    s.step(1.0 + t);
  }
  EXPECT_EQ(s.phase(), Phase::movement);
}

TEST(Scheduler, HandExampleSelectsBandOne) {
  FrequencyScheduler s(small(3, 2, 2));
  run(s, {9, 9, 0.1, 0.1, 0.5, 0.5, 0.2, 0.2});
  EXPECT_EQ(s.state().history, (std::vector<double>{0.1, 0.5, 0.2}));
  EXPECT_EQ(s.j_star(), 1);
  EXPECT_EQ(s.phase(), Phase::perturbation);
  EXPECT_EQ(s.band(), 1);
}

TEST(Scheduler, ReversesAtRadiusEdge) {
  SchedulerConfig c = small(6, 1, 1, 1);
  FrequencyScheduler s(c);
  // movement picks j* = 2
  run(s, {0, 0.1, 0.2, 0.9, 0.3, 0.2, 0.1});
  ASSERT_EQ(s.j_star(), 2);
  ASSERT_EQ(s.phase(), Phase::perturbation);
  s.step(0.0);  // at j* with an improvement: keep d = +1
  EXPECT_EQ(s.band(), 3);
  EXPECT_EQ(s.state().direction, 1);
  s.step(0.0);  // j = j* + k: reverse
  EXPECT_EQ(s.state().direction, -1);
  EXPECT_EQ(s.band(), 2);
}

TEST(Scheduler, ZeroRadiusHoldsAtOptimum) {
  FrequencyScheduler s(small(4, 2, 2, 0));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  while (!s.complete()) {
    if (s.phase() == Phase::perturbation) {
      EXPECT_EQ(s.band(), s.j_star());
    }
    s.step(u(rng));
  }
}

TEST(Scheduler, StepAfterCompletionThrows) {
  FrequencyScheduler s(small(2, 1, 1, 0));
  while (!s.complete()) s.step(0.5);
  EXPECT_EQ(s.iteration(), s.config().total);
  EXPECT_THROW(s.step(0.5), StateError);
}

TEST(Scheduler, MatchesHandSimulationOnRandomStreams) {
  std::mt19937_64 rng(20240);
  for (int trial = 0; trial < 300; ++trial) {
    SchedulerConfig c;
    c.grid_cells = 16;
    c.window = 1 + static_cast<int>(rng() % 8);
    c.bands = 1 + static_cast<int>(rng() % c.max_bands());
    c.interval = 1 + static_cast<int>(rng() % 4);
    c.warmup_end = 1 + static_cast<int>(rng() % 6);
    c.radius = static_cast<int>(rng() % 4);
    c.selection = rng() % 2 ? Selection::argmax : Selection::argmin;
    c.movement_end = c.warmup_end + c.bands * c.interval + static_cast<int>(rng() % 3);
    c.total = c.movement_end + static_cast<int>(rng() % 25);
    if (c.total == c.movement_end && rng() % 2) c.total += 1;
    c = c.resolved();
    std::vector<double> eps(c.total);
    for (double& e : eps) e = trial % 3 == 0 ? static_cast<double>(rng() % 3) : std::ldexp(double(rng() >> 11), -53);
    FrequencyScheduler s(c);
    const auto bands = run(s, eps);
    const auto ref = oracle::simulate_schedule(c, eps);
    ASSERT_EQ(bands, ref.bands) << "trial " << trial;
    ASSERT_EQ(s.j_star(), ref.j_star);
    ASSERT_EQ(s.state().history, ref.history);
    EXPECT_TRUE(s.complete());
  }
}

TEST(Scheduler, PerturbationStaysInRange) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    SchedulerConfig c = small(1 + static_cast<int>(rng() % 13), 1 + static_cast<int>(rng() % 3), 2,
                              static_cast<int>(rng() % 5));
    c.total = c.movement_end + 40;
    FrequencyScheduler s(c);
    std::uniform_real_distribution<double> u(0, 1);
    while (!s.complete()) {
      if (s.phase() == Phase::perturbation) {
        ASSERT_GE(s.band(), std::max(0, s.j_star() - c.radius));
        ASSERT_LE(s.band(), std::min(c.bands - 1, s.j_star() + c.radius));
      }
      s.step(u(rng));
    }
  }
}

TEST(Scheduler, MovementVisitsEachBandForOneInterval) {
  const SchedulerConfig c = small(5, 3, 4, 2);
  FrequencyScheduler s(c);
  std::vector<int> count(c.bands, 0), order;
  while (!s.complete()) {
    if (s.phase() == Phase::movement && s.iteration() < c.warmup_end + c.bands * c.interval) {
      ++count[s.band()];
      if (order.empty() || order.back() != s.band()) order.push_back(s.band());
    }
    s.step(0.1 * s.band());
  }
  for (int n : count) EXPECT_EQ(n, c.interval);
  EXPECT_EQ(order, (std::vector<int>{0, 1, 2, 3, 4}));
}

TEST(Scheduler, ReplayIsBitExactAndRestorable) {
  const SchedulerConfig c = small(6, 2, 3, 2);
  std::vector<double> eps(c.total);
  std::mt19937_64 rng(5);
  for (double& e : eps) e = std::ldexp(double(rng() >> 11), -53);
  FrequencyScheduler a(c), b(c);
  EXPECT_EQ(run(a, eps), run(b, eps));

  FrequencyScheduler first(c);
  const std::vector<double> head(eps.begin(), eps.begin() + 11), tail(eps.begin() + 11, eps.end());
  run(first, head);
  FrequencyScheduler resumed(c, first.state());
  FrequencyScheduler whole(c);
  run(whole, head);
  EXPECT_EQ(run(resumed, tail), run(whole, tail));
}

TEST(SelectOptimal, Examples) {
  EXPECT_EQ(select_optimal(std::vector<double>{0.1, 0.5, 0.2}, Selection::argmax), 1);
  EXPECT_EQ(select_optimal(std::vector<double>{0.4, 0.4, 0.1}, Selection::argmax), 0);
  EXPECT_EQ(select_optimal(std::vector<double>{0.1, 0.5, 0.2}, Selection::argmin), 0);
  EXPECT_THROW(select_optimal(std::vector<double>{}), InvalidArgument);
}

TEST(Scheduler, IntervalCsv) {
  FrequencyScheduler s(small(2, 2, 2, 0));
  while (!s.complete()) s.step(0.25);
  std::ostringstream os;
  write_interval_csv(os, s.intervals());
  const std::string text = os.str();
  EXPECT_EQ(text.rfind("t,phase,j,epsilon_bar\n", 0), 0u);
  EXPECT_NE(text.find("2,warmup,0,0.25"), std::string::npos);
  EXPECT_NE(text.find(",movement,1,0.25"), std::string::npos);
}
