#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <fstream>

#include "nrlg/operators.hpp"
#include "test_util.hpp"

using namespace nrlg;
using nrlg_test::from_eigen;
using nrlg_test::materialize;
using nrlg_test::synthetic_image;
using nrlg_test::to_eigen;

namespace {

std::string write_motion_kernel() {
  std::string path = "/tmp/nrlg_motion_kernel.txt";
  std::ofstream out(path);
  // diagonal streak, deliberately non-separable
  out << "5 5\n"
         "0.30 0.00 0.00 0.00 0.00\n"
         "0.05 0.25 0.00 0.00 0.00\n"
         "0.00 0.05 0.20 0.00 0.00\n"
         "0.00 0.00 0.05 0.15 0.00\n"
         "0.00 0.00 0.00 0.05 0.10\n";
  return path;
}

std::vector<std::pair<std::string, std::shared_ptr<LinearOperator>>> shipped_ops(
    ImageGeometry geom) {
  std::vector<std::pair<std::string, std::shared_ptr<LinearOperator>>> ops;
  ops.emplace_back("identity", std::make_shared<IdentityOperator>(geom));
  ops.emplace_back("mask", MaskOperator::random(geom, 0.4, 5));
  ops.emplace_back("cs25", std::make_shared<BlockCsOperator>(geom, 4, 0.25, 7));
  ops.emplace_back("blur_gauss", make_gaussian_blur(geom, 5, 10.0));
  ops.emplace_back("blur_motion",
                   make_motion_blur(geom, load_kernel_file(write_motion_kernel()),
                                    "motion.txt"));
  ops.emplace_back("avgpool", std::make_shared<AvgPoolOperator>(geom, 2));
  ops.emplace_back("bicubic", std::make_shared<BicubicDownsampleOperator>(geom, 2));
  return ops;
}

}  // namespace

TEST(Operators, AdjointConsistencyOnRandomProbes) {
  for (auto geom : {ImageGeometry{8, 8, 1}, ImageGeometry{8, 12, 3}}) {
    Rng rng(99);
    for (const auto& [name, op] : shipped_ops(geom)) {
      for (int probe = 0; probe < 32; ++probe) {
        Tensor x = rng.gaussian_tensor(geom.dims());
        Tensor y({op->shape().output_dim});
        rng.fill_gaussian(y);
        double lhs = op->apply(x).dot(Tensor({op->shape().output_dim}, y.values()));
        double rhs = x.dot(op->adjoint(y));
        double scale = std::max(std::abs(lhs), std::abs(rhs));
        ASSERT_LE(std::abs(lhs - rhs), 1e-10 * std::max(1.0, scale))
            << name << " probe " << probe;
      }
    }
  }
}

TEST(Operators, IdentityAppliesVerbatim) {
  ImageGeometry geom{4, 4, 1};
  IdentityOperator op(geom);
  Tensor x = synthetic_image(4, 4);
  Tensor y = op.apply(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Operators, FullRatioCsIsOrthogonal) {
  ImageGeometry geom{8, 8, 1};
  BlockCsOperator op(geom, 8, 1.0, 3);
  EXPECT_EQ(op.shape().output_dim, op.shape().input_dim);
  Rng rng(1);
  for (int i = 0; i < 8; ++i) {
    Tensor x = rng.gaussian_tensor(geom.dims());
    EXPECT_NEAR(op.apply(x).norm2(), x.norm2(), 1e-10 * x.norm2());
  }
}

TEST(Operators, BlurPreservesConstantImages) {
  // normalization oracle: the kernel sums to one
  ImageGeometry geom{8, 8, 1};
  auto op = make_gaussian_blur(geom, 5, 10.0);
  Tensor c = Tensor::full(geom.dims(), 0.37);
  Tensor y = op->apply(c);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], 0.37, 1e-12);
}

TEST(Operators, AvgPoolAdjointMatchesDenseTranspose) {
  ImageGeometry geom{8, 8, 1};
  AvgPoolOperator op(geom, 2);
  Eigen::MatrixXd A = materialize(op);
  Rng rng(4);
  Tensor y({op.shape().output_dim});
  rng.fill_gaussian(y);
  Tensor got = op.adjoint(y);
  Eigen::VectorXd want = A.transpose() * to_eigen(y);
  for (std::size_t i = 0; i < got.size(); ++i)
    EXPECT_NEAR(got[i], want[static_cast<long>(i)], 1e-12);
  // every coarse value spreads as 1/s^2 over its block
  EXPECT_NEAR(got[0], y[0] / 4.0, 1e-14);
}

TEST(Operators, MaskAdjointScattersToKeptPositions) {
  ImageGeometry geom{4, 4, 1};
  auto op = MaskOperator::random(geom, 0.5, 2);
  Tensor y({op->shape().output_dim});
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<double>(i + 1);
  Tensor x = op->adjoint(y);
  const auto& kept = op->kept_pixels();
  std::size_t pos = 0;
  for (std::size_t p = 0; p < 16; ++p) {
    if (pos < kept.size() && kept[pos] == p) {
      EXPECT_EQ(x[p], y[pos]);
      ++pos;
    } else {
      EXPECT_EQ(x[p], 0.0);
    }
  }
}

TEST(KernelSolve, IdentityAndOrthonormalRowsAreDirect) {
  ImageGeometry geom{8, 8, 1};
  IdentityOperator id(geom);
  BlockCsOperator cs(geom, 8, 0.5, 11);
  Rng rng(6);
  Tensor r({64});
  rng.fill_gaussian(r);
  Tensor v = id.kernel_solve(2.0, 0.5, r);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_DOUBLE_EQ(v[i], r[i] / 2.5);

  Tensor rc({cs.shape().output_dim});
  rng.fill_gaussian(rc);
  Tensor vc = cs.kernel_solve(2.0, 0.5, rc);
  for (std::size_t i = 0; i < rc.size(); ++i) EXPECT_DOUBLE_EQ(vc[i], rc[i] / 2.5);
}

TEST(KernelSolve, DenseMatchesExplicitInversion) {
  auto op = DenseOperator::random(12, 20, 17);
  Eigen::MatrixXd A = materialize(*op);
  const double c = 0.7, sigma2 = 0.03;
  Eigen::MatrixXd S =
      c * A * A.transpose() + sigma2 * Eigen::MatrixXd::Identity(12, 12);
  Rng rng(8);
  Tensor r({12});
  rng.fill_gaussian(r);
  Eigen::VectorXd want = S.ldlt().solve(to_eigen(r));
  Tensor got = op->kernel_solve(c, sigma2, r);
  EXPECT_LE((to_eigen(got) - want).norm() / want.norm(), 1e-8);
}

TEST(KernelSolve, ResidualBelowToleranceOnAllOps) {
  ImageGeometry geom{8, 8, 1};
  Rng rng(10);
  for (const auto& [name, op] : shipped_ops(geom)) {
    const double c = 0.9, sigma2 = 0.01;
    Tensor r({op->shape().output_dim});
    rng.fill_gaussian(r);
    Tensor v = op->kernel_solve(c, sigma2, r);
    Tensor back = op->apply(op->adjoint(v)) * c;
    back.axpy(sigma2, v);
    EXPECT_LE((back - Tensor(r.dims(), r.values())).norm2(), 1e-8 * r.norm2())
        << name;
  }
}

TEST(KernelSolve, SingularSystemRejected) {
  ImageGeometry geom{4, 4, 1};
  IdentityOperator id(geom);
  Tensor r({16});
  r[0] = 1.0;
  EXPECT_THROW(id.kernel_solve(0.0, 0.0, r), solver_error);
  BicubicDownsampleOperator bc(geom, 2);
  EXPECT_THROW(kernel_solve_cg(bc, 0.0, 0.0, Tensor({4})), solver_error);
}

TEST(KernelSolve, IterativePathAgreesWithDirect) {
  ImageGeometry geom{8, 8, 1};
  Rng rng(12);
  for (const auto& [name, op] : shipped_ops(geom)) {
    if (!op->exact_kernel_solve()) continue;
    Tensor r({op->shape().output_dim});
    rng.fill_gaussian(r);
    Tensor direct = op->kernel_solve(0.8, 0.05, r);
    Tensor iter = kernel_solve_cg(*op, 0.8, 0.05, r);
    EXPECT_LE((direct - iter).norm2(), 1e-7 * direct.norm2()) << name;
  }
}

TEST(SvdFactors, IdentityHasUnitSpectrum) {
  ImageGeometry geom{4, 4, 1};
  IdentityOperator op(geom);
  auto f = op.svd_factors();
  for (double s : f.singular_values) EXPECT_DOUBLE_EQ(s, 1.0);
}

TEST(SvdFactors, BlockCsHasOrthonormalRows) {
  ImageGeometry geom{8, 8, 1};
  BlockCsOperator op(geom, 8, 0.25, 21);
  Eigen::MatrixXd A = materialize(op);
  Eigen::MatrixXd G = A * A.transpose();
  EXPECT_LE((G - Eigen::MatrixXd::Identity(G.rows(), G.cols())).norm(), 1e-10);
}

TEST(SvdFactors, AvgPoolSpectrumAndOrthogonality) {
  ImageGeometry geom{8, 8, 1};
  AvgPoolOperator op(geom, 2);
  auto f = op.svd_factors();
  for (double s : f.singular_values) EXPECT_NEAR(s, 0.5, 1e-14);

  // compare the singular spectrum against a dense SVD oracle
  Eigen::MatrixXd A = materialize(op);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  for (long i = 0; i < svd.singularValues().size(); ++i)
    EXPECT_NEAR(svd.singularValues()[i], 0.5, 1e-12);
}

TEST(SvdFactors, CircularBlurSpectrumMatchesDenseSvd) {
  ImageGeometry geom{8, 8, 1};
  auto op = make_motion_blur(geom, load_kernel_file(write_motion_kernel()),
                             "motion.txt");
  auto f = op->svd_factors();
  Eigen::MatrixXd A = materialize(*op);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);

  std::vector<double> got(f.singular_values);
  std::vector<double> want(svd.singularValues().data(),
                           svd.singularValues().data() + svd.singularValues().size());
  std::sort(got.begin(), got.end());
  std::sort(want.begin(), want.end());
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i)
    EXPECT_NEAR(got[i], want[i], 1e-9) << "rank " << i;
}

TEST(SvdFactors, TransformsAreOrthogonalAndReconstructA) {
  for (auto geom : {ImageGeometry{8, 8, 1}, ImageGeometry{8, 12, 3}}) {
    Rng rng(31);
    for (const auto& [name, op] : shipped_ops(geom)) {
      if (!op->has_svd()) {
        EXPECT_THROW(op->svd_factors(), capability_error) << name;
        continue;
      }
      auto f = op->svd_factors();
      const std::size_t k = f.singular_values.size();
      for (int probe = 0; probe < 8; ++probe) {
        // U^T U = I and V^T V = I on random coefficient probes
        Tensor w({k});
        rng.fill_gaussian(w);
        Tensor uw = f.u_adjoint(f.u_apply(w));
        Tensor vw = f.v_adjoint(f.v_apply(w));
        ASSERT_LE((uw - w).norm2(), 1e-8 * w.norm2()) << name;
        ASSERT_LE((vw - w).norm2(), 1e-8 * w.norm2()) << name;

        // A x == U S V^T x
        Tensor x = rng.gaussian_tensor(geom.dims());
        Tensor ax = op->apply(x);
        Tensor rec = f.reconstruct_apply(x);
        ASSERT_LE((Tensor({ax.size()}, ax.values()) -
                   Tensor({rec.size()}, rec.values()))
                      .norm2(),
                  1e-8 * std::max(1.0, ax.norm2()))
            << name;
      }
      // shipped explicit factorizations keep a nonincreasing spectrum
      if (name == "identity" || name == "mask" || name == "cs25" ||
          name == "avgpool") {
        EXPECT_TRUE(std::is_sorted(f.singular_values.rbegin(),
                                   f.singular_values.rend()))
            << name;
      }
    }
  }
}

TEST(Operators, BicubicHasNoSvdCapability) {
  ImageGeometry geom{8, 8, 1};
  BicubicDownsampleOperator op(geom, 2);
  EXPECT_FALSE(op.has_svd());
  EXPECT_FALSE(op.exact_kernel_solve());
  EXPECT_THROW(op.svd_factors(), capability_error);
}

TEST(Operators, ShapeMismatchRejected) {
  ImageGeometry geom{4, 4, 1};
  IdentityOperator op(geom);
  EXPECT_THROW(op.apply(Tensor({3})), shape_error);
  EXPECT_THROW(op.adjoint(Tensor({99})), shape_error);
}

TEST(Operators, KernelFileFormat) {
  std::string path = "/tmp/nrlg_kernel_fmt.txt";
  std::ofstream(path) << "2 3\n1 2 3\n4 5 6\n";
  Tensor k = load_kernel_file(path);
  ASSERT_EQ(k.dims(), (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(k[5], 6.0);
  std::ofstream(path) << "2 3\n1 2\n";
  EXPECT_THROW(load_kernel_file(path), io_error);
}

TEST(Operators, DescriptorRoundTripRebuildsExactly) {
  ImageGeometry geom{8, 8, 1};
  auto op = make_operator("cs:ratio=0.25,block=8,seed=77", geom);
  auto rebuilt = make_operator(op->descriptor(), geom);
  Rng rng(5);
  Tensor x = rng.gaussian_tensor(geom.dims());
  Tensor a = op->apply(x), b = rebuilt->apply(x);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Operators, DescriptorParserErrors) {
  EXPECT_THROW(parse_operator_descriptor(""), domain_error);
  EXPECT_THROW(parse_operator_descriptor("cs:ratio"), domain_error);
  EXPECT_THROW(make_operator("wavelet", ImageGeometry{4, 4, 1}), domain_error);
  EXPECT_THROW(make_operator("cs:block=5", ImageGeometry{4, 4, 1}), domain_error);
}

TEST(Operators, CsValidatesGeometry) {
  EXPECT_THROW(BlockCsOperator(ImageGeometry{10, 10, 1}, 8, 0.5, 1), domain_error);
  EXPECT_THROW(BlockCsOperator(ImageGeometry{8, 8, 1}, 8, 0.0, 1), domain_error);
  EXPECT_THROW(BlockCsOperator(ImageGeometry{8, 8, 1}, 8, 1.5, 1), domain_error);
}

TEST(Operators, DenseDescriptorPreservesEntriesBitExact) {
  auto op = DenseOperator::random(3, 5, 123);
  auto rebuilt = make_operator(op->descriptor(), op->shape().geometry);
  auto* d = dynamic_cast<DenseOperator*>(rebuilt.get());
  ASSERT_NE(d, nullptr);
  for (std::size_t i = 0; i < op->entries().size(); ++i)
    EXPECT_EQ(op->entries()[i], d->entries()[i]);
}
