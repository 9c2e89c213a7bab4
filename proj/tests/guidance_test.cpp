#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "nrlg/denoiser.hpp"
#include "nrlg/guidance.hpp"
#include "nrlg/operators.hpp"
#include "test_util.hpp"

using namespace nrlg;
using nrlg_test::fd_gradient;
using nrlg_test::materialize;
using nrlg_test::to_eigen;

namespace {

DiffusionSchedule default_schedule() { return linear_schedule(100, 1e-4, 0.02); }

// Schedule with a single step and alpha_bar(1) = 0.75.
DiffusionSchedule quarter_schedule() {
  return DiffusionSchedule(1, std::vector<double>{0.25});
}

// Log-density of N(y; A x0(x_t), c A A^T + sigma^2 I) with the noise
// prediction frozen, evaluated entirely through Eigen.
struct FrozenDensityOracle {
  Eigen::MatrixXd A;
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::VectorXd y;
  Tensor eps_frozen;
  const DiffusionSchedule* sched;
  int t;

  FrozenDensityOracle(const LinearOperator& op, const DiffusionSchedule& s,
                      const Tensor& y_in, Tensor eps, int t_in, double sigma_y)
      : A(materialize(op)), y(to_eigen(y_in)), eps_frozen(std::move(eps)),
        sched(&s), t(t_in) {
    const double c = guidance_variance_scale(s, t_in);
    Eigen::MatrixXd M = c * A * A.transpose();
    M.diagonal().array() += sigma_y * sigma_y;
    llt.compute(M);
  }

  double operator()(const Tensor& x_t) const {
    Tensor x0 = tweedie_x0(*sched, x_t, eps_frozen, t);
    Eigen::VectorXd r = y - A * to_eigen(x0);
    return -0.5 * r.dot(llt.solve(r));
  }
};

}  // namespace

TEST(TweedieX0, ZeroNoisePrediction) {
  auto sched = default_schedule();
  Rng rng(1);
  Tensor x = rng.gaussian_tensor({5});
  Tensor zero({5});
  Tensor x0 = tweedie_x0(sched, x, zero, 40);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_DOUBLE_EQ(x0[i], x[i] / sched.sqrt_alpha_bar(40));
}

TEST(TweedieX0, IdentityAtTimeZero) {
  auto sched = default_schedule();
  Rng rng(2);
  Tensor x = rng.gaussian_tensor({5});
  Tensor eps = rng.gaussian_tensor({5});
  Tensor x0 = tweedie_x0(sched, x, eps, 0);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(x0[i], x[i]);
}

TEST(TweedieX0, ForwardProcessRoundTrip) {
  auto sched = default_schedule();
  Rng rng(3);
  for (int t : {1, 37, 100}) {
    Tensor x0 = rng.gaussian_tensor({8});
    Tensor eps = rng.gaussian_tensor({8});
    Tensor x_t = x0 * sched.sqrt_alpha_bar(t);
    x_t.axpy(sched.sqrt_one_minus_alpha_bar(t), eps);
    Tensor rec = tweedie_x0(sched, x_t, eps, t);
    for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(rec[i], x0[i], 1e-13);
  }
}

TEST(LikelihoodScore, ZeroWhenConsistent) {
  auto sched = default_schedule();
  ImageGeometry geom{6, 6, 1};
  BlockCsOperator op(geom, 6, 0.3, 4);
  Rng rng(4);
  Tensor x0 = rng.gaussian_tensor(geom.dims());
  Tensor y = op.apply(x0);
  GuidanceConfig cfg;
  cfg.sigma_y = 0.05;
  Tensor s = likelihood_score(op, sched, cfg, x0, y, 50);
  EXPECT_LE(s.norm_inf(), 1e-14);
}

TEST(LikelihoodScore, IdentityNoiselessReduction) {
  auto sched = default_schedule();
  ImageGeometry geom{4, 4, 1};
  IdentityOperator op(geom);
  Rng rng(5);
  Tensor x0 = rng.gaussian_tensor(geom.dims());
  Tensor y = rng.gaussian_tensor(geom.dims());
  GuidanceConfig cfg;  // sigma_y = 0
  const int t = 30;
  Tensor s = likelihood_score(op, sched, cfg, x0, y, t);
  const double ab = sched.alpha_bar(t);
  const double coeff = std::sqrt(ab) / (1.0 - ab);
  for (std::size_t i = 0; i < s.size(); ++i)
    EXPECT_NEAR(s[i], coeff * (y[i] - x0[i]), 1e-12 * std::abs(coeff));
}

TEST(LikelihoodScore, MatchesFiniteDifferencesOnDenseOperator) {
  auto sched = default_schedule();
  auto op = DenseOperator::random(12, 20, 99);
  Rng rng(6);
  Tensor x_t = rng.gaussian_tensor({20});
  Tensor eps = rng.gaussian_tensor({20});
  Tensor y({12});
  rng.fill_gaussian(y);
  GuidanceConfig cfg;
  cfg.sigma_y = 0.05;
  for (int t : {1, 50, 100}) {
    Tensor x0 = tweedie_x0(sched, x_t, eps, t);
    Tensor score = likelihood_score(*op, sched, cfg, x0, y, t);
    FrozenDensityOracle oracle(*op, sched, y, eps, t, cfg.sigma_y);
    Tensor fd = fd_gradient(oracle, x_t, 1e-4);
    EXPECT_LE(relative_l2_error(score, fd), 1e-5) << "t=" << t;
  }
}

TEST(LikelihoodScoreSvd, IdentityFactorsReduceToIdentityCase) {
  auto sched = default_schedule();
  ImageGeometry geom{4, 4, 1};
  IdentityOperator op(geom);
  Rng rng(7);
  Tensor x0 = rng.gaussian_tensor(geom.dims());
  Tensor y = rng.gaussian_tensor(geom.dims());
  GuidanceConfig cfg;
  cfg.sigma_y = 0.1;
  Tensor direct = likelihood_score(op, sched, cfg, x0, y, 20);
  Tensor via_svd = likelihood_score_svd(op.svd_factors(), sched, cfg, x0, y, 20);
  for (std::size_t i = 0; i < direct.size(); ++i)
    EXPECT_NEAR(via_svd[i], direct[i], 1e-13);
}

TEST(LikelihoodScoreSvd, AvgPoolAgreesWithDensePath) {
  auto sched = default_schedule();
  ImageGeometry geom{8, 8, 1};
  AvgPoolOperator op(geom, 2);
  Rng rng(8);
  Tensor x0 = rng.gaussian_tensor(geom.dims());
  Tensor y({op.shape().output_dim});
  rng.fill_gaussian(y);
  GuidanceConfig cfg;
  cfg.sigma_y = 0.05;
  const int t = 60;

  Tensor via_svd = likelihood_score_svd(op.svd_factors(), sched, cfg, x0, y, t);

  // dense-matrix oracle
  Eigen::MatrixXd A = materialize(op);
  const double c = guidance_variance_scale(sched, t);
  Eigen::MatrixXd M = c * A * A.transpose();
  M.diagonal().array() += cfg.sigma_y * cfg.sigma_y;
  Eigen::VectorXd r = to_eigen(y) - A * to_eigen(x0);
  Eigen::VectorXd want = A.transpose() * M.llt().solve(r) / sched.sqrt_alpha_bar(t);
  EXPECT_LE((to_eigen(via_svd) - want).norm() / want.norm(), 1e-10);
}

TEST(LikelihoodScoreSvd, DegenerateSpectrumGivesZeroScore) {
  auto sched = default_schedule();
  SvdFactors f;
  f.singular_values.assign(6, 0.0);
  f.u_apply = f.u_adjoint = f.v_apply = f.v_adjoint = [](const Tensor& v) {
    return v;
  };
  GuidanceConfig cfg;
  cfg.sigma_y = 0.3;
  Rng rng(9);
  Tensor x0 = rng.gaussian_tensor({6});
  Tensor y = rng.gaussian_tensor({6});
  Tensor s = likelihood_score_svd(f, sched, cfg, x0, y, 10);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(s[i], 0.0);
}

TEST(JacobianVariant, ZeroJacobianRecoversPlainScore) {
  auto sched = default_schedule();
  ImageGeometry geom{5, 5, 1};
  IdentityOperator op(geom);
  Rng rng(10);
  Tensor x0 = rng.gaussian_tensor(geom.dims());
  Tensor y = rng.gaussian_tensor(geom.dims());
  GuidanceConfig cfg;
  cfg.sigma_y = 0.1;
  Tensor plain = likelihood_score(op, sched, cfg, x0, y, 40);
  Tensor with_zero =
      likelihood_score_with_jacobian(op, sched, cfg, x0, Tensor(geom.dims()), y, 40);
  for (std::size_t i = 0; i < plain.size(); ++i)
    EXPECT_DOUBLE_EQ(with_zero[i], plain[i]);
}

TEST(JacobianVariant, FlatPriorLimitAgreesWithPlainScore) {
  auto sched = default_schedule();
  ImageGeometry geom{5, 5, 1};
  IdentityOperator op(geom);
  GaussianPrior prior = GaussianPrior::constant(geom.dims(), 0.5, 1e12);
  Rng rng(11);
  Tensor x0 = rng.gaussian_tensor(geom.dims());
  Tensor y = rng.gaussian_tensor(geom.dims());
  GuidanceConfig cfg;
  cfg.sigma_y = 0.1;
  const int t = 55;
  Tensor jac = analytic_noise_jacobian(prior, sched, t);
  Tensor plain = likelihood_score(op, sched, cfg, x0, y, t);
  Tensor corrected = likelihood_score_with_jacobian(op, sched, cfg, x0, jac, y, t);
  EXPECT_LE((corrected - plain).norm2(), 1e-9 * plain.norm2());
}

// With the analytic denoiser the Jacobian-corrected score is the exact
// gradient of the corrected-posterior surrogate log-density, now with the
// full x_t dependence of the posterior mean (nothing frozen).
TEST(JacobianVariant, ExactGradientOfSurrogateDensity) {
  auto sched = default_schedule();
  ImageGeometry geom{4, 4, 1};
  IdentityOperator op(geom);
  Rng rng(12);
  GuidanceConfig cfg;
  cfg.sigma_y = 0.1;
  for (int t : {10, 50, 90}) {
    const double ab = sched.alpha_bar(t);
    // matched prior variance: c0 = (1 - ab)/ab at this t
    GaussianPrior prior = GaussianPrior::constant(geom.dims(), 0.4, (1.0 - ab) / ab);
    Tensor x_t = rng.gaussian_tensor(geom.dims());
    Tensor y = rng.gaussian_tensor(geom.dims());
    Tensor x0 = gaussian_posterior_x0_mean(prior, sched, x_t, t);
    Tensor jac = analytic_noise_jacobian(prior, sched, t);
    Tensor score = likelihood_score_with_jacobian(op, sched, cfg, x0, jac, y, t);

    Eigen::MatrixXd A = materialize(op);
    const double c = guidance_variance_scale(sched, t);
    Eigen::MatrixXd M = c * A * A.transpose();
    M.diagonal().array() += cfg.sigma_y * cfg.sigma_y;
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    auto density = [&](const Tensor& xq) {
      Tensor mean = gaussian_posterior_x0_mean(prior, sched, xq, t);
      Eigen::VectorXd r = to_eigen(y) - A * to_eigen(mean);
      return -0.5 * r.dot(llt.solve(r));
    };
    Tensor fd = fd_gradient(density, x_t, 1e-5);
    EXPECT_LE(relative_l2_error(score, fd), 1e-6) << "t=" << t;
  }
}

TEST(RefineNoise, GuidanceOffAndZeroScore) {
  auto sched = default_schedule();
  Rng rng(13);
  Tensor eps = rng.gaussian_tensor({6});
  Tensor score = rng.gaussian_tensor({6});
  GuidanceConfig off;
  off.mu = 0.0;
  Tensor unchanged = refine_noise(off, sched, eps, score, 50);
  for (std::size_t i = 0; i < eps.size(); ++i) EXPECT_DOUBLE_EQ(unchanged[i], eps[i]);

  GuidanceConfig on;
  on.mu = 2.0;
  Tensor same = refine_noise(on, sched, eps, Tensor({6}), 50);
  for (std::size_t i = 0; i < eps.size(); ++i) EXPECT_DOUBLE_EQ(same[i], eps[i]);
}

TEST(RefineNoise, DirectSubstitution) {
  // alpha_bar = 0.75, mu = 1.6 (the SR x4 preset strength), eps = 0,
  // score = ones: eps_hat = -1.6 * 0.5 = -0.8
  auto sched = quarter_schedule();
  GuidanceConfig cfg;
  cfg.mu = 1.6;
  Tensor eps({3});
  Tensor score = Tensor::full({3}, 1.0);
  Tensor out = refine_noise(cfg, sched, eps, score, 1);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_DOUBLE_EQ(out[i], -0.8);
}

TEST(ScoreFromNoise, BasicValuesAndInverse) {
  auto sched = quarter_schedule();
  Tensor zero({4});
  Tensor s0 = score_from_noise(sched, zero, 1);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(s0[i], 0.0);

  Tensor ones = Tensor::full({4}, 1.0);
  Tensor s1 = score_from_noise(sched, ones, 1);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(s1[i], -2.0);

  Rng rng(14);
  Tensor eps = rng.gaussian_tensor({4});
  Tensor back = noise_from_score(sched, score_from_noise(sched, eps, 1), 1);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(back[i], eps[i], 1e-15);
}

// refine_noise with mu=1 followed by the score conversion reproduces the
// conditional-score split exactly (a linear identity).
TEST(RefineNoise, ConditionalScoreIdentity) {
  auto sched = default_schedule();
  Rng rng(15);
  const int t = 42;
  Tensor eps = rng.gaussian_tensor({9});
  Tensor lik = rng.gaussian_tensor({9});
  GuidanceConfig cfg;
  cfg.mu = 1.0;
  Tensor refined = refine_noise(cfg, sched, eps, lik, t);
  Tensor cond_score = score_from_noise(sched, refined, t);
  Tensor want = score_from_noise(sched, eps, t) + lik;
  for (std::size_t i = 0; i < want.size(); ++i)
    EXPECT_NEAR(cond_score[i], want[i], 1e-12);
}

TEST(Guidance, SmallStepReducesResidual) {
  auto sched = default_schedule();
  ImageGeometry geom{6, 6, 1};
  Rng rng(16);
  std::vector<std::shared_ptr<LinearOperator>> ops = {
      std::make_shared<IdentityOperator>(geom),
      std::make_shared<BlockCsOperator>(geom, 6, 0.4, 3),
      make_gaussian_blur(geom, 5, 10.0),
      std::make_shared<AvgPoolOperator>(geom, 2),
  };
  for (const auto& op : ops) {
    for (int t : {1, 50, 100}) {
      GuidanceConfig cfg;
      cfg.sigma_y = 0.05;
      cfg.mu = 1e-3;
      Tensor x_t = rng.gaussian_tensor(geom.dims());
      Tensor eps = rng.gaussian_tensor(geom.dims());
      Tensor x0 = tweedie_x0(sched, x_t, eps, t);
      Tensor y({op->shape().output_dim});
      rng.fill_gaussian(y);

      Tensor score = likelihood_score(*op, sched, cfg, x0, y, t);
      Tensor eps_hat = refine_noise(cfg, sched, eps, score, t);
      Tensor x0_hat = tweedie_x0(sched, x_t, eps_hat, t);
      double before = (y - op->apply(x0)).norm2();
      double after = (y - op->apply(x0_hat)).norm2();
      EXPECT_LT(after, before) << op->descriptor().kind << " t=" << t;
    }
  }
}

// Dense, SVD and iterative kernel-solve routes agree on every SVD-capable
// operator.
TEST(Guidance, PathEquivalenceAcrossRoutes) {
  auto sched = default_schedule();
  Rng rng(17);
  for (auto geom : {ImageGeometry{8, 8, 1}, ImageGeometry{12, 12, 1}}) {
    std::vector<std::shared_ptr<LinearOperator>> ops = {
        std::make_shared<IdentityOperator>(geom),
        MaskOperator::random(geom, 0.5, 2),
        std::make_shared<BlockCsOperator>(geom, 4, 0.25, 5),
        make_gaussian_blur(geom, 5, 10.0),
        std::make_shared<AvgPoolOperator>(geom, 2),
    };
    for (const auto& op : ops) {
      SvdFactors factors = op->svd_factors();
      Eigen::MatrixXd A = materialize(*op);
      for (int trial = 0; trial < 5; ++trial) {
        const int t = 1 + static_cast<int>(rng.next_u64() % 100);
        GuidanceConfig cfg;
        cfg.sigma_y = 0.05;
        Tensor x0 = rng.gaussian_tensor(geom.dims());
        Tensor y({op->shape().output_dim});
        rng.fill_gaussian(y);

        Tensor direct = likelihood_score(*op, sched, cfg, x0, y, t);
        Tensor via_svd = likelihood_score_svd(factors, sched, cfg, x0, y, t);
        const double c = guidance_variance_scale(sched, t);
        Tensor iter =
            op->adjoint(kernel_solve_cg(*op, c, cfg.sigma_y * cfg.sigma_y,
                                        y - op->apply(x0)));
        iter *= 1.0 / sched.sqrt_alpha_bar(t);

        Eigen::MatrixXd M = c * A * A.transpose();
        M.diagonal().array() += cfg.sigma_y * cfg.sigma_y;
        Eigen::VectorXd r = to_eigen(y) - A * to_eigen(x0);
        Eigen::VectorXd dense =
            A.transpose() * M.llt().solve(r) / sched.sqrt_alpha_bar(t);

        double denom = dense.norm();
        EXPECT_LE((to_eigen(direct) - dense).norm() / denom, 1e-8)
            << op->descriptor().kind;
        EXPECT_LE((to_eigen(via_svd) - dense).norm() / denom, 1e-8)
            << op->descriptor().kind;
        EXPECT_LE((to_eigen(iter) - dense).norm() / denom, 1e-8)
            << op->descriptor().kind;
      }
    }
  }
}

TEST(GuidanceConfig, Validation) {
  GuidanceConfig cfg;
  cfg.zeta = 1.5;
  EXPECT_THROW(cfg.validate(), domain_error);
  cfg.zeta = 0.5;
  cfg.mu = -1.0;
  EXPECT_THROW(cfg.validate(), domain_error);
}
