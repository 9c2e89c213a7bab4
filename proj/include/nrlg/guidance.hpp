#pragma once

#include "nrlg/linop.hpp"
#include "nrlg/schedule.hpp"
#include "nrlg/tensor.hpp"

namespace nrlg {

// Knobs of the likelihood-guided refinement.
//   mu               - refinement strength applied to the predicted noise
//   zeta             - stochastic/deterministic mix of re-injected noise,
//                      in [0, 1] (0 fully deterministic, 1 fully stochastic)
//   sigma_y          - measurement noise level
//   mean_correction  - use the denoiser posterior mean inside the score
//                      (off reproduces the uncorrected forward-process mean)
//   jacobian_term    - keep the denoiser Jacobian factor (analytic
//                      denoisers only)
struct GuidanceConfig {
  double mu = 1.0;
  double zeta = 1.0;
  double sigma_y = 0.0;
  bool mean_correction = true;
  bool jacobian_term = false;

  void validate() const {
    if (!(mu >= 0.0)) throw domain_error("guidance: mu must be >= 0");
    if (!(zeta >= 0.0 && zeta <= 1.0))
      throw domain_error("guidance: zeta must be in [0,1]");
    if (!(sigma_y >= 0.0)) throw domain_error("guidance: sigma_y must be >= 0");
  }
};

// Ridge added to sigma_y^2 = 0 when the operator only has the iterative
// kernel solve, to keep the system well posed.
inline constexpr double kNoiselessRidge = 1e-10;

// Per-step products of a guided update, kept for inspection.
struct GuidanceStep {
  Tensor x0_pred;
  Tensor likelihood_score;
  Tensor refined_noise;
  Tensor x0_refined;
};

// Posterior-mean estimate of the clean image from the predicted noise:
//   x0|t = (x_t - sqrt(1-ab_t) * eps) / sqrt(ab_t)
// Accepts t = 0 (ab = 1) where it degenerates to the identity.
inline Tensor tweedie_x0(const DiffusionSchedule& schedule, const Tensor& x_t,
                         const Tensor& eps, int t) {
  if (x_t.size() != eps.size()) throw shape_error("tweedie_x0: size mismatch");
  const double ab = schedule.alpha_bar(t);
  const double sab = std::sqrt(ab);
  const double somab = std::sqrt(1.0 - ab);
  Tensor x0(x_t.dims());
  for (std::size_t i = 0; i < x0.size(); ++i)
    x0[i] = (x_t[i] - somab * eps[i]) / sab;
  return x0;
}

// Inverse of the relation above; eps consistent with a given x0 estimate.
inline Tensor noise_from_x0(const DiffusionSchedule& schedule, const Tensor& x_t,
                            const Tensor& x0, int t) {
  if (x_t.size() != x0.size()) throw shape_error("noise_from_x0: size mismatch");
  const double ab = schedule.alpha_bar(t);
  const double somab = std::sqrt(1.0 - ab);
  if (!(somab > 0.0))
    throw domain_error("noise_from_x0: alpha_bar(t) must be < 1");
  Tensor eps(x_t.dims());
  const double sab = std::sqrt(ab);
  for (std::size_t i = 0; i < eps.size(); ++i)
    eps[i] = (x_t[i] - sab * x0[i]) / somab;
  return eps;
}

inline double guidance_variance_scale(const DiffusionSchedule& schedule, int t) {
  const double ab = schedule.alpha_bar(t);
  return (1.0 - ab) / ab;
}

// Closed-form likelihood score:
//   (1/sqrt(ab_t)) A^T ((1-ab_t)/ab_t * A A^T + sigma_y^2 I)^-1 (y - A x0|t)
//
// The overall sign is fixed so the result is the true gradient of
// log N(y; A x0|t, ((1-ab_t)/ab_t) A A^T + sigma_y^2 I) with respect to
// x_t when the noise prediction inside x0|t is held fixed, i.e. it points
// along A^T (...)^-1 (y - A x0|t), toward data consistency.
inline Tensor likelihood_score(const LinearOperator& op,
                               const DiffusionSchedule& schedule,
                               const GuidanceConfig& cfg, const Tensor& x0_pred,
                               const Tensor& y, int t,
                               bool* ridge_applied = nullptr) {
  if (x0_pred.size() != op.shape().input_dim)
    throw shape_error("likelihood_score: x0_pred size != N");
  if (y.size() != op.shape().output_dim)
    throw shape_error("likelihood_score: y size != M");
  const double c = guidance_variance_scale(schedule, t);
  double sigma2 = cfg.sigma_y * cfg.sigma_y;
  if (sigma2 == 0.0 && !op.exact_kernel_solve()) {
    sigma2 = kNoiselessRidge;
    if (ridge_applied) *ridge_applied = true;
  }
  Tensor residual = y - op.apply(x0_pred);
  Tensor solved = op.kernel_solve(c, sigma2, residual);
  Tensor score = op.adjoint(solved);
  score *= 1.0 / std::sqrt(schedule.alpha_bar(t));
  return score;
}

// Same quantity through the SVD route:
//   (1/sqrt(ab)) V S ((c) S^2 + sigma_y^2 I)^-1 U^T (y - A x0|t)
inline Tensor likelihood_score_svd(const SvdFactors& factors,
                                   const DiffusionSchedule& schedule,
                                   const GuidanceConfig& cfg,
                                   const Tensor& x0_pred, const Tensor& y,
                                   int t) {
  const double c = guidance_variance_scale(schedule, t);
  const double sigma2 = cfg.sigma_y * cfg.sigma_y;
  Tensor residual = y - factors.reconstruct_apply(x0_pred);
  Tensor w = factors.u_adjoint(residual);
  if (w.size() != factors.singular_values.size())
    throw shape_error("likelihood_score_svd: factor coefficient size mismatch");
  for (std::size_t i = 0; i < w.size(); ++i) {
    double s = factors.singular_values[i];
    double denom = c * s * s + sigma2;
    w[i] = denom > 0.0 ? w[i] * s / denom : 0.0;
  }
  Tensor score = factors.v_apply(w);
  score *= 1.0 / std::sqrt(schedule.alpha_bar(t));
  return score;
}

// Variant keeping the denoiser Jacobian factor: the frozen-noise score is
// scaled elementwise by (1 - sqrt(1-ab_t) jac_i), which is exactly the
// chain rule through x0|t for an elementwise-affine denoiser.
inline Tensor likelihood_score_with_jacobian(const LinearOperator& op,
                                             const DiffusionSchedule& schedule,
                                             const GuidanceConfig& cfg,
                                             const Tensor& x0_pred,
                                             const Tensor& jac_diag,
                                             const Tensor& y, int t,
                                             bool* ridge_applied = nullptr) {
  Tensor score =
      likelihood_score(op, schedule, cfg, x0_pred, y, t, ridge_applied);
  if (score.size() != jac_diag.size())
    throw shape_error("likelihood_score_with_jacobian: jac size mismatch");
  const double somab = schedule.sqrt_one_minus_alpha_bar(t);
  for (std::size_t i = 0; i < score.size(); ++i)
    score[i] *= 1.0 - somab * jac_diag[i];
  return score;
}

// Noise refinement: eps_hat = eps - mu * sqrt(1-ab_t) * score. With mu = 1
// this realizes the conditional-score relation exactly.
inline Tensor refine_noise(const GuidanceConfig& cfg,
                           const DiffusionSchedule& schedule, const Tensor& eps,
                           const Tensor& score, int t) {
  if (eps.size() != score.size()) throw shape_error("refine_noise: size mismatch");
  Tensor out = eps;
  out.axpy(-cfg.mu * schedule.sqrt_one_minus_alpha_bar(t), score);
  return out;
}

// Score/noise conversion: s = -eps / sqrt(1-ab_t).
inline Tensor score_from_noise(const DiffusionSchedule& schedule,
                               const Tensor& eps, int t) {
  const double somab = schedule.sqrt_one_minus_alpha_bar(t);
  if (!(somab > 0.0))
    throw domain_error("score_from_noise: alpha_bar(t) must be < 1");
  return eps * (-1.0 / somab);
}

inline Tensor noise_from_score(const DiffusionSchedule& schedule,
                               const Tensor& score, int t) {
  return score * (-schedule.sqrt_one_minus_alpha_bar(t));
}

}  // namespace nrlg
