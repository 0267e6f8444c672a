#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

#include "discl/schedule.hpp"

using namespace discl;

TEST(Schedule, SingleStep) {
  const auto s = VarianceSchedule::linear(1, 0.5, 0.5);
  EXPECT_DOUBLE_EQ(s.beta(1), 0.5);
  EXPECT_DOUBLE_EQ(s.alpha_bar(0), 1.0);
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.5);
}

TEST(Schedule, TwoSteps) {
  const auto s = VarianceSchedule::linear(2, 0.1, 0.3);
  EXPECT_DOUBLE_EQ(s.beta(1), 0.1);
  EXPECT_DOUBLE_EQ(s.beta(2), 0.3);
  EXPECT_NEAR(s.alpha_bar(1), 0.9, 1e-15);
  EXPECT_NEAR(alpha_bar_at(s, 2), 0.63, 1e-15);
  EXPECT_EQ(alpha_bar_at(s, 0), 1.0);
}

TEST(Schedule, LinearInterpolation) {
  const auto s = VarianceSchedule::linear(5, 0.1, 0.5);
  for (int t = 1; t <= 5; ++t) EXPECT_NEAR(s.beta(t), 0.1 + 0.1 * (t - 1), 1e-15);
}

TEST(Schedule, LogSpaceOracle) {
  for (int steps : {50, 200, 1000}) {
    const auto s = VarianceSchedule::linear(steps, 1e-4, 0.02);
    double log_sum = 0.0;
    for (int t = 1; t <= steps; ++t) {
      const double beta = steps == 1 ? 1e-4 : 1e-4 + (0.02 - 1e-4) * (t - 1) / (steps - 1);
      log_sum += std::log1p(-beta);
      const double oracle = std::exp(log_sum);
      ASSERT_LE(std::abs(s.alpha_bar(t) - oracle) / oracle, 1e-10) << "T=" << steps << " t=" << t;
    }
  }
}

TEST(Schedule, Monotone) {
  const auto s = VarianceSchedule::linear(200, 1e-4, 0.02);
  for (int t = 1; t <= 200; ++t) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
}

TEST(Schedule, RejectsBadArguments) {
  EXPECT_THROW(VarianceSchedule::linear(0, 0.1, 0.2), std::invalid_argument);
  EXPECT_THROW(VarianceSchedule::linear(10, 0.0, 0.2), std::invalid_argument);
  EXPECT_THROW(VarianceSchedule::linear(10, 0.1, 1.0), std::invalid_argument);
  EXPECT_THROW(VarianceSchedule::linear(10, 0.3, 0.2), std::invalid_argument);
  const auto s = VarianceSchedule::linear(10, 0.1, 0.2);
  EXPECT_THROW(s.alpha_bar(11), std::out_of_range);
  EXPECT_THROW(s.alpha_bar(-1), std::out_of_range);
}

TEST(StartStep, Examples) {
  EXPECT_EQ(start_step(GuidanceLevel(0.0), 1000), 1000);
  EXPECT_EQ(start_step(GuidanceLevel(0.5), 1000), 500);
  EXPECT_EQ(start_step(GuidanceLevel(0.9), 50), 5);
  EXPECT_EQ(start_step(GuidanceLevel(1.0), 200), 0);
}

TEST(StartStep, NonIncreasing) {
  int prev = start_step(GuidanceLevel(0.0), 200);
  for (int i = 1; i <= 1000; ++i) {
    const int t = start_step(GuidanceLevel(i / 1000.0), 200);
    EXPECT_LE(t, prev);
    prev = t;
  }
}

TEST(GuidanceLevel, Range) {
  EXPECT_THROW(GuidanceLevel(-0.01), std::invalid_argument);
  EXPECT_THROW(GuidanceLevel(1.01), std::invalid_argument);
  EXPECT_NO_THROW(GuidanceLevel(1.0));
}
