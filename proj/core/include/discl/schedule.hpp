#pragma once

#include <vector>

#include "discl/image.hpp"

namespace discl {

/// Discrete variance schedule. Index 0 of alpha_bar is the clean image
/// (alpha_bar[0] == 1); beta and alpha are stored 1-based with a dummy slot 0
/// so that every table reads with the natural step index.
class VarianceSchedule {
 public:
  static VarianceSchedule linear(int steps, double beta_min, double beta_max);

  int steps() const noexcept { return steps_; }
  double beta_min() const noexcept { return beta_min_; }
  double beta_max() const noexcept { return beta_max_; }

  double beta(int t) const;
  double alpha(int t) const;
  /// Cumulative product of alpha over 1..t. t == 0 gives 1.
  double alpha_bar(int t) const;

 private:
  VarianceSchedule() = default;

  int steps_ = 0;
  double beta_min_ = 0.0;
  double beta_max_ = 0.0;
  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
};

inline VarianceSchedule make_linear_schedule(int steps, double beta_min, double beta_max) {
  return VarianceSchedule::linear(steps, beta_min, beta_max);
}

inline double alpha_bar_at(const VarianceSchedule& schedule, int t) { return schedule.alpha_bar(t); }

/// Diffusion start step for a guidance level: floor((1 - lambda) * T) with a
/// small guard so exact rationals like 0.9 * 50 do not round down.
int start_step(GuidanceLevel lambda, int steps);

inline constexpr int kDefaultSteps = 200;
inline constexpr double kDefaultBetaMin = 1e-4;
inline constexpr double kDefaultBetaMax = 0.02;

}  // namespace discl
