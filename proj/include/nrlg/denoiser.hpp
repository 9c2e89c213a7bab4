#pragma once

#include <memory>

#include "nrlg/errors.hpp"
#include "nrlg/schedule.hpp"
#include "nrlg/tensor.hpp"

namespace nrlg {

// Noise predictor abstraction: estimates the standard-normal noise that
// produced x_t from the clean image. Deterministic for fixed (x_t, t).
class DenoiserInterface {
 public:
  virtual ~DenoiserInterface() = default;

  virtual Tensor predict_noise(const Tensor& x_t, int t) = 0;

  virtual bool has_exact_jacobian() const { return false; }

  // Diagonal of d eps / d x_t, constant in x_t for affine predictors.
  virtual Tensor noise_jacobian_diag(int /*t*/) const {
    throw capability_error("denoiser does not expose an exact Jacobian");
  }
};

// Elementwise Gaussian prior N(mean, diag(variance)) in pixel basis. The
// verification lab: under it the optimal denoiser, its Jacobian, the
// marginal score and the posterior are all closed form.
struct GaussianPrior {
  Tensor mean;
  Tensor variance;

  GaussianPrior(Tensor mean_, Tensor variance_)
      : mean(std::move(mean_)), variance(std::move(variance_)) {
    if (!mean.same_shape(variance))
      throw shape_error("gaussian prior: mean/variance shape mismatch");
    for (std::size_t i = 0; i < variance.size(); ++i)
      if (!(variance[i] > 0.0))
        throw domain_error("gaussian prior: variances must be positive");
  }

  static GaussianPrior constant(const std::vector<std::size_t>& dims,
                                double mean, double variance) {
    return GaussianPrior(Tensor::full(dims, mean), Tensor::full(dims, variance));
  }
};

// Exact conditional mean of x0 given x_t = sqrt(ab)*x0 + sqrt(1-ab)*eps:
//   E[x0|x_t]_i = (sqrt(ab) c_i x_i + (1-ab) mu_i) / (ab c_i + 1-ab)
inline Tensor gaussian_posterior_x0_mean(const GaussianPrior& prior,
                                         const DiffusionSchedule& schedule,
                                         const Tensor& x_t, int t) {
  if (!x_t.same_shape(prior.mean))
    throw shape_error("posterior mean: x_t does not match prior shape");
  const double ab = schedule.alpha_bar(t);
  const double sab = std::sqrt(ab);
  Tensor m(x_t.dims());
  for (std::size_t i = 0; i < m.size(); ++i) {
    double c = prior.variance[i];
    m[i] = (sab * c * x_t[i] + (1.0 - ab) * prior.mean[i]) / (ab * c + 1.0 - ab);
  }
  return m;
}

// MMSE-optimal noise prediction, obtained by inverting the posterior-mean
// relation: eps* = (x_t - sqrt(ab) E[x0|x_t]) / sqrt(1-ab). Affine in x_t.
inline Tensor analytic_predict_noise(const GaussianPrior& prior,
                                     const DiffusionSchedule& schedule,
                                     const Tensor& x_t, int t) {
  const double ab = schedule.alpha_bar(t);
  const double somab = std::sqrt(1.0 - ab);
  if (!(somab > 0.0))
    throw domain_error("analytic_predict_noise: t must satisfy alpha_bar(t) < 1");
  Tensor m = gaussian_posterior_x0_mean(prior, schedule, x_t, t);
  Tensor eps(x_t.dims());
  const double sab = std::sqrt(ab);
  for (std::size_t i = 0; i < eps.size(); ++i)
    eps[i] = (x_t[i] - sab * m[i]) / somab;
  return eps;
}

// d eps*_i / d x_i = sqrt(1-ab) / (ab c_i + 1-ab); constant in x_t.
inline Tensor analytic_noise_jacobian(const GaussianPrior& prior,
                                      const DiffusionSchedule& schedule, int t) {
  const double ab = schedule.alpha_bar(t);
  Tensor jac(prior.mean.dims());
  for (std::size_t i = 0; i < jac.size(); ++i)
    jac[i] = std::sqrt(1.0 - ab) / (ab * prior.variance[i] + 1.0 - ab);
  return jac;
}

// Marginal of x_t under the lab prior: N(sqrt(ab) mu, ab c + (1-ab)).
// Its score is the reference for the score/noise conversion checks.
inline Tensor analytic_marginal_score(const GaussianPrior& prior,
                                      const DiffusionSchedule& schedule,
                                      const Tensor& x_t, int t) {
  const double ab = schedule.alpha_bar(t);
  const double sab = std::sqrt(ab);
  Tensor s(x_t.dims());
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = -(x_t[i] - sab * prior.mean[i]) / (ab * prior.variance[i] + 1.0 - ab);
  return s;
}

class AnalyticDenoiser final : public DenoiserInterface {
 public:
  AnalyticDenoiser(GaussianPrior prior, DiffusionSchedule schedule)
      : prior_(std::move(prior)), schedule_(std::move(schedule)) {}

  Tensor predict_noise(const Tensor& x_t, int t) override {
    return analytic_predict_noise(prior_, schedule_, x_t, t);
  }

  bool has_exact_jacobian() const override { return true; }

  Tensor noise_jacobian_diag(int t) const override {
    return analytic_noise_jacobian(prior_, schedule_, t);
  }

  const GaussianPrior& prior() const { return prior_; }

 private:
  GaussianPrior prior_;
  DiffusionSchedule schedule_;
};

}  // namespace nrlg
