#pragma once

#include <memory>
#include <optional>
#include <string>

#include "nrlg/denoiser.hpp"
#include "nrlg/guidance.hpp"
#include "nrlg/linop.hpp"
#include "nrlg/rng.hpp"
#include "nrlg/schedule.hpp"

namespace nrlg {

enum class SamplerKind {
  dd_nrlg,       // sampling loop with refined-noise guidance
  id_nrlg,       // deterministic iterative loop, no noise re-injection
  ddim_uncond,   // unguided reference, zeta-mixed injection
  ddpm_uncond,   // unguided ancestral reference
  dps,           // residual-gradient baseline on DDPM stepping
  direct_adjust  // ablation: guidance added in sample space after DDPM step
};

inline const char* to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::dd_nrlg: return "dd_nrlg";
    case SamplerKind::id_nrlg: return "id_nrlg";
    case SamplerKind::ddim_uncond: return "ddim_uncond";
    case SamplerKind::ddpm_uncond: return "ddpm_uncond";
    case SamplerKind::dps: return "dps";
    case SamplerKind::direct_adjust: return "direct_adjust";
  }
  return "?";
}

inline SamplerKind sampler_kind_from_string(const std::string& s) {
  if (s == "dd_nrlg") return SamplerKind::dd_nrlg;
  if (s == "id_nrlg") return SamplerKind::id_nrlg;
  if (s == "ddim_uncond") return SamplerKind::ddim_uncond;
  if (s == "ddpm_uncond") return SamplerKind::ddpm_uncond;
  if (s == "dps") return SamplerKind::dps;
  if (s == "direct_adjust") return SamplerKind::direct_adjust;
  throw domain_error("unknown sampler kind: " + s);
}

// Complete description of one restoration run. The seed determines every
// stochastic draw; two runs with identical specs produce bit-identical
// trajectories.
struct RunSpec {
  DiffusionSchedule schedule;
  TimestepPlan plan;
  std::shared_ptr<const LinearOperator> op;
  Tensor y;
  double sigma_y = 0.0;
  std::shared_ptr<DenoiserInterface> denoiser;
  GuidanceConfig guidance;
  std::uint64_t seed = 0;
  SamplerKind kind = SamplerKind::dd_nrlg;
  double dps_rho = 1.0;
  std::size_t snapshot_stride = 0;      // 0 disables snapshots
  std::optional<Tensor> init_state;     // overrides the N(0,I) draw
};

struct Trajectory {
  struct Snapshot {
    std::size_t step;
    int t;
    Tensor x_t;
    Tensor x0_hat;
  };
  struct ResidualEntry {
    std::size_t step;
    int t;
    double residual;
  };

  Tensor final_x0;  // unclamped; value-range clamping happens at output
  std::vector<Snapshot> snapshots;
  std::vector<ResidualEntry> residuals;
  std::vector<std::string> notes;
};

// Gradient of ||y - A x0|t(x_t)||^2 with respect to x_t, using the exact
// chain rule through an elementwise-affine denoiser:
//   -2 diag((1 - sqrt(1-ab) jac)/sqrt(ab)) A^T (y - A x0|t)
inline Tensor dps_residual_gradient(const LinearOperator& op,
                                    const DiffusionSchedule& schedule,
                                    const Tensor& x0_pred,
                                    const Tensor& jac_diag, const Tensor& y,
                                    int t) {
  Tensor g = op.adjoint(y - op.apply(x0_pred));
  const double sab = schedule.sqrt_alpha_bar(t);
  const double somab = schedule.sqrt_one_minus_alpha_bar(t);
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] *= -2.0 * (1.0 - somab * jac_diag[i]) / sab;
  return g;
}

namespace detail {

struct SamplerState {
  Tensor x;
  Rng rng;
  Trajectory traj;
  bool ridge_noted = false;
};

inline void guard_finite(const Tensor& x, std::size_t step, int t) {
  if (!x.all_finite())
    throw numeric_error("sampler produced non-finite values", static_cast<int>(step), t);
}

inline void log_step(const RunSpec& spec, SamplerState& st, std::size_t step,
                     int t, const Tensor& x_before, const Tensor& x0_hat) {
  double res = (spec.y - spec.op->apply(x0_hat)).norm2();
  st.traj.residuals.push_back({step, t, res});
  if (spec.snapshot_stride > 0 && step % spec.snapshot_stride == 0)
    st.traj.snapshots.push_back({step, t, x_before, x0_hat});
}

// Generalized ancestral step over a (t -> t_prev) hop:
//   alpha_eff = ab(t)/ab(t_prev), beta_eff = 1 - alpha_eff
//   x' = (x - beta_eff/sqrt(1-ab_t) eps)/sqrt(alpha_eff) + sqrt(beta_eff) xi
// Stochastic noise is suppressed on the final hop (t_prev = 0).
inline Tensor ddpm_hop(const DiffusionSchedule& schedule, const Tensor& x,
                       const Tensor& eps, int t, int t_prev, Rng& rng) {
  const double alpha_eff = schedule.alpha_bar(t) / schedule.alpha_bar(t_prev);
  const double beta_eff = 1.0 - alpha_eff;
  const double somab = schedule.sqrt_one_minus_alpha_bar(t);
  Tensor next = x;
  next.axpy(-beta_eff / somab, eps);
  next *= 1.0 / std::sqrt(alpha_eff);
  if (t_prev > 0) {
    const double s = std::sqrt(beta_eff);
    for (std::size_t i = 0; i < next.size(); ++i) next[i] += s * rng.gaussian();
  }
  return next;
}

}  // namespace detail

// Runs the sampler selected by spec.kind and returns its trajectory.
inline Trajectory run_sampler(const RunSpec& spec) {
  spec.guidance.validate();
  if (!spec.op) throw domain_error("run_sampler: missing operator");
  if (!spec.denoiser) throw domain_error("run_sampler: missing denoiser");
  if (spec.plan.steps.empty()) throw domain_error("run_sampler: empty plan");
  if (spec.y.size() != spec.op->shape().output_dim)
    throw shape_error("run_sampler: measurement does not match operator");

  GuidanceConfig cfg = spec.guidance;
  cfg.sigma_y = spec.sigma_y;

  const bool wants_jacobian = cfg.jacobian_term || spec.kind == SamplerKind::dps;
  if (wants_jacobian && !spec.denoiser->has_exact_jacobian())
    throw capability_error(std::string(to_string(spec.kind)) +
                           ": denoiser has no exact Jacobian");

  detail::SamplerState st{Tensor(), Rng(spec.seed), Trajectory{}, false};
  const auto dims = spec.op->shape().geometry.dims();
  if (spec.init_state) {
    if (spec.init_state->size() != spec.op->shape().input_dim)
      throw shape_error("run_sampler: init state does not match operator input");
    st.x = *spec.init_state;
  } else {
    st.x = st.rng.gaussian_tensor(dims);
  }

  auto guided_score = [&](const Tensor& x0_for_score, int t) -> Tensor {
    bool ridge = false;
    Tensor score =
        cfg.jacobian_term
            ? likelihood_score_with_jacobian(*spec.op, spec.schedule, cfg,
                                             x0_for_score,
                                             spec.denoiser->noise_jacobian_diag(t),
                                             spec.y, t, &ridge)
            : likelihood_score(*spec.op, spec.schedule, cfg, x0_for_score,
                               spec.y, t, &ridge);
    if (ridge && !st.ridge_noted) {
      st.traj.notes.push_back("sigma_y=0 with iterative kernel solve: ridge 1e-10 applied");
      st.ridge_noted = true;
    }
    return score;
  };

  for (std::size_t step = 0; step < spec.plan.size(); ++step) {
    const auto [t, t_prev] = spec.plan.steps[step];
    const Tensor x_before = st.x;
    Tensor eps = spec.denoiser->predict_noise(st.x, t);
    Tensor x0_pred = tweedie_x0(spec.schedule, st.x, eps, t);

    switch (spec.kind) {
      case SamplerKind::dd_nrlg:
      case SamplerKind::id_nrlg: {
        Tensor eps_hat = eps;
        if (cfg.mu > 0.0) {
          Tensor x0_for_score =
              cfg.mean_correction ? x0_pred
                                  : st.x * (1.0 / spec.schedule.sqrt_alpha_bar(t));
          eps_hat = refine_noise(cfg, spec.schedule, eps,
                                 guided_score(x0_for_score, t), t);
        }
        Tensor x0_hat = tweedie_x0(spec.schedule, st.x, eps_hat, t);
        detail::log_step(spec, st, step, t, x_before, x0_hat);

        Tensor next = x0_hat * spec.schedule.sqrt_alpha_bar(t_prev);
        if (spec.kind == SamplerKind::dd_nrlg && t_prev > 0) {
          const double w = spec.schedule.sqrt_one_minus_alpha_bar(t_prev);
          next.axpy(w * std::sqrt(1.0 - cfg.zeta), eps_hat);
          if (cfg.zeta > 0.0) {
            const double wz = w * std::sqrt(cfg.zeta);
            for (std::size_t i = 0; i < next.size(); ++i)
              next[i] += wz * st.rng.gaussian();
          }
        }
        st.x = std::move(next);
        break;
      }

      case SamplerKind::ddim_uncond: {
        detail::log_step(spec, st, step, t, x_before, x0_pred);
        Tensor next = x0_pred * spec.schedule.sqrt_alpha_bar(t_prev);
        if (t_prev > 0) {
          const double w = spec.schedule.sqrt_one_minus_alpha_bar(t_prev);
          next.axpy(w * std::sqrt(1.0 - cfg.zeta), eps);
          if (cfg.zeta > 0.0) {
            const double wz = w * std::sqrt(cfg.zeta);
            for (std::size_t i = 0; i < next.size(); ++i)
              next[i] += wz * st.rng.gaussian();
          }
        }
        st.x = std::move(next);
        break;
      }

      case SamplerKind::ddpm_uncond: {
        detail::log_step(spec, st, step, t, x_before, x0_pred);
        st.x = detail::ddpm_hop(spec.schedule, st.x, eps, t, t_prev, st.rng);
        break;
      }

      case SamplerKind::dps: {
        detail::log_step(spec, st, step, t, x_before, x0_pred);
        Tensor next = detail::ddpm_hop(spec.schedule, st.x, eps, t, t_prev, st.rng);
        if (spec.dps_rho > 0.0) {
          Tensor grad = dps_residual_gradient(
              *spec.op, spec.schedule, x0_pred,
              spec.denoiser->noise_jacobian_diag(t), spec.y, t);
          next.axpy(-spec.dps_rho, grad);
        }
        st.x = std::move(next);
        break;
      }

      case SamplerKind::direct_adjust: {
        detail::log_step(spec, st, step, t, x_before, x0_pred);
        Tensor next = detail::ddpm_hop(spec.schedule, st.x, eps, t, t_prev, st.rng);
        if (cfg.mu > 0.0) {
          Tensor x0_for_score =
              cfg.mean_correction ? x0_pred
                                  : st.x * (1.0 / spec.schedule.sqrt_alpha_bar(t));
          // Sample-space correction scaled by the score-to-sample factor
          // (1-ab_t)/sqrt(ab_t).
          const double scale = (1.0 - spec.schedule.alpha_bar(t)) /
                               spec.schedule.sqrt_alpha_bar(t);
          next.axpy(cfg.mu * scale, guided_score(x0_for_score, t));
        }
        st.x = std::move(next);
        break;
      }
    }

    detail::guard_finite(st.x, step, t);
  }

  st.traj.final_x0 = std::move(st.x);
  return st.traj;
}

// Convenience wrappers matching the sampler names.
inline Trajectory dd_nrlg(RunSpec spec) {
  spec.kind = SamplerKind::dd_nrlg;
  return run_sampler(spec);
}
inline Trajectory id_nrlg(RunSpec spec) {
  spec.kind = SamplerKind::id_nrlg;
  return run_sampler(spec);
}
inline Trajectory ddim_uncond(RunSpec spec) {
  spec.kind = SamplerKind::ddim_uncond;
  return run_sampler(spec);
}
inline Trajectory ddpm_uncond(RunSpec spec) {
  spec.kind = SamplerKind::ddpm_uncond;
  return run_sampler(spec);
}
inline Trajectory dps_baseline(RunSpec spec, double rho) {
  spec.kind = SamplerKind::dps;
  spec.dps_rho = rho;
  return run_sampler(spec);
}
inline Trajectory direct_adjust(RunSpec spec) {
  spec.kind = SamplerKind::direct_adjust;
  return run_sampler(spec);
}

}  // namespace nrlg
