#include "discl/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace discl {

VarianceSchedule VarianceSchedule::linear(int steps, double beta_min, double beta_max) {
  if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
  if (!(beta_min > 0.0 && beta_min < 1.0 && beta_max > 0.0 && beta_max < 1.0)) {
    throw std::invalid_argument("beta bounds must lie in (0, 1)");
  }
  if (beta_min > beta_max) throw std::invalid_argument("beta_min must not exceed beta_max");

  VarianceSchedule s;
  s.steps_ = steps;
  s.beta_min_ = beta_min;
  s.beta_max_ = beta_max;
  s.beta_.assign(steps + 1, 0.0);
  s.alpha_.assign(steps + 1, 1.0);
  s.alpha_bar_.assign(steps + 1, 1.0);
  for (int t = 1; t <= steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
    s.beta_[t] = beta_min + (beta_max - beta_min) * frac;
    s.alpha_[t] = 1.0 - s.beta_[t];
    s.alpha_bar_[t] = s.alpha_bar_[t - 1] * s.alpha_[t];
  }
  return s;
}

namespace {
void check_step(int t, int lo, int hi) {
  if (t < lo || t > hi) {
    throw std::out_of_range("step " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                            std::to_string(hi) + "]");
  }
}
}  // namespace

double VarianceSchedule::beta(int t) const {
  check_step(t, 1, steps_);
  return beta_[t];
}

double VarianceSchedule::alpha(int t) const {
  check_step(t, 1, steps_);
  return alpha_[t];
}

double VarianceSchedule::alpha_bar(int t) const {
  check_step(t, 0, steps_);
  return alpha_bar_[t];
}

int start_step(GuidanceLevel lambda, int steps) {
  if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
  const double raw = (1.0 - lambda.value()) * steps + 1e-9;
  const int t = static_cast<int>(std::floor(raw));
  return t > steps ? steps : t;
}

}  // namespace discl
