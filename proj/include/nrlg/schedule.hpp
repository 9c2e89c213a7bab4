#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "nrlg/errors.hpp"

namespace nrlg {

// Discrete DDPM noise schedule. Timesteps are 1-based (t in [1, T]) with
// the convention alpha_bar(0) = 1, so reverse updates can reference the
// previous level all the way down to t = 1.
class DiffusionSchedule {
 public:
  DiffusionSchedule(int num_steps, std::vector<double> betas)
      : T_(num_steps), betas_(std::move(betas)) {
    if (T_ < 1 || static_cast<int>(betas_.size()) != T_)
      throw domain_error("schedule: need one beta per step");
    alphas_.resize(T_);
    alpha_bars_.resize(T_ + 1);
    alpha_bars_[0] = 1.0;
    for (int t = 1; t <= T_; ++t) {
      double b = betas_[t - 1];
      if (!(b > 0.0 && b < 1.0))
        throw domain_error("schedule: beta out of (0,1)");
      alphas_[t - 1] = 1.0 - b;
      alpha_bars_[t] = alpha_bars_[t - 1] * alphas_[t - 1];
    }
  }

  int num_steps() const { return T_; }

  double beta(int t) const { return betas_[check(t) - 1]; }
  double alpha(int t) const { return alphas_[check(t) - 1]; }

  // Valid for t in [0, T]; alpha_bar(0) == 1.
  double alpha_bar(int t) const {
    if (t < 0 || t > T_) throw domain_error("schedule: timestep out of range");
    return alpha_bars_[t];
  }

  double sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar(t)); }
  double sqrt_one_minus_alpha_bar(int t) const {
    return std::sqrt(1.0 - alpha_bar(t));
  }

 private:
  int check(int t) const {
    if (t < 1 || t > T_) throw domain_error("schedule: timestep out of range");
    return t;
  }

  int T_;
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

// Betas interpolated affinely over T points, both endpoints included.
// T = 1 degenerates to the single value beta_start.
inline DiffusionSchedule linear_schedule(int num_steps, double beta_start = 1e-4,
                                         double beta_end = 0.02) {
  if (num_steps < 1) throw domain_error("linear_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw domain_error("linear_schedule: need 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(num_steps);
  for (int i = 0; i < num_steps; ++i) {
    betas[i] = num_steps == 1
                   ? beta_start
                   : beta_start + (beta_end - beta_start) * i / (num_steps - 1);
  }
  return DiffusionSchedule(num_steps, std::move(betas));
}

// Strictly decreasing DDIM visiting order. Each entry pairs a timestep
// with the level the update lands on (0 for the final step).
struct TimestepPlan {
  struct Step {
    int t;
    int t_prev;
  };
  std::vector<Step> steps;

  std::size_t size() const { return steps.size(); }
};

// Evenly spaced subsequence of {1..T}. Endpoints are always included:
// the plan starts at T and (for more than one step) ends at 1, so the
// full-length plan is exactly (T, T-1, ..., 1). Spacing >= 1 guarantees
// strict monotonicity after rounding.
inline TimestepPlan uniform_timestep_plan(const DiffusionSchedule& schedule,
                                          int num_sampling_steps) {
  const int T = schedule.num_steps();
  if (num_sampling_steps < 1 || num_sampling_steps > T)
    throw domain_error("timestep plan: need 1 <= steps <= T");
  std::vector<int> ts(num_sampling_steps);
  if (num_sampling_steps == 1) {
    ts[0] = T;
  } else {
    double span = static_cast<double>(T - 1) / (num_sampling_steps - 1);
    for (int j = 0; j < num_sampling_steps; ++j)
      ts[j] = static_cast<int>(std::lround(T - j * span));
  }
  TimestepPlan plan;
  plan.steps.reserve(ts.size());
  for (std::size_t j = 0; j < ts.size(); ++j) {
    int t_prev = (j + 1 < ts.size()) ? ts[j + 1] : 0;
    plan.steps.push_back({ts[j], t_prev});
  }
  return plan;
}

}  // namespace nrlg
