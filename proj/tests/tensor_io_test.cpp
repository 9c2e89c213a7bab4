#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nrlg/detail/fft.hpp"
#include "nrlg/io.hpp"
#include "nrlg/rng.hpp"
#include "test_util.hpp"

using namespace nrlg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("nrlg_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST(TensorFile, RoundTripBitExact) {
  TempDir tmp;
  Rng rng(3);
  Tensor t = rng.gaussian_tensor({3, 5, 2});
  t[0] = -0.0;
  t[1] = 1e-308;  // subnormal-ish edge
  write_tensor(tmp.file("t.nrtf"), t);
  Tensor back = read_tensor(tmp.file("t.nrtf"));
  ASSERT_EQ(back.dims(), t.dims());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(std::memcmp(&back[i], &t[i], sizeof(double)), 0) << "at " << i;
  }
}

TEST(TensorFile, RejectsGarbage) {
  TempDir tmp;
  std::ofstream(tmp.file("bad.nrtf")) << "not a tensor";
  EXPECT_THROW(read_tensor(tmp.file("bad.nrtf")), io_error);
  EXPECT_THROW(read_tensor(tmp.file("missing.nrtf")), io_error);
}

TEST(Image, ZeroImageReadsAsZeros) {
  TempDir tmp;
  {
    std::ofstream out(tmp.file("z.pgm"), std::ios::binary);
    out << "P5\n4 3\n255\n";
    for (int i = 0; i < 12; ++i) out.put('\0');
  }
  Tensor t = read_image(tmp.file("z.pgm"));
  ASSERT_EQ(t.dims(), (std::vector<std::size_t>{3, 4}));
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t[i], 0.0);
}

TEST(Image, PixelValueMapping) {
  TempDir tmp;
  {
    std::ofstream out(tmp.file("p.pgm"), std::ios::binary);
    out << "P5\n1 1\n255\n";
    out.put(static_cast<char>(128));
  }
  Tensor t = read_image(tmp.file("p.pgm"));
  EXPECT_DOUBLE_EQ(t[0], 128.0 / 255.0);
}

TEST(Image, WriteReadWriteIsByteIdentical) {
  TempDir tmp;
  Tensor img = nrlg_test::synthetic_image(9, 7, 3);
  write_image(tmp.file("a.ppm"), img);
  Tensor r1 = read_image(tmp.file("a.ppm"));
  write_image(tmp.file("b.ppm"), r1);

  std::ifstream fa(tmp.file("a.ppm"), std::ios::binary);
  std::ifstream fb(tmp.file("b.ppm"), std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  EXPECT_EQ(sa, sb);
  // and the values are unchanged by the second round trip
  Tensor r2 = read_image(tmp.file("b.ppm"));
  for (std::size_t i = 0; i < r1.size(); ++i) EXPECT_EQ(r1[i], r2[i]);
}

TEST(Image, HeaderComments) {
  TempDir tmp;
  {
    std::ofstream out(tmp.file("c.pgm"), std::ios::binary);
    out << "P5\n# a comment\n 2 # another\n2\n255\n";
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>(255));
  }
  Tensor t = read_image(tmp.file("c.pgm"));
  ASSERT_EQ(t.size(), 4u);
  EXPECT_DOUBLE_EQ(t[3], 1.0);
}

TEST(Image, RejectsBadMaxval) {
  TempDir tmp;
  {
    std::ofstream out(tmp.file("m.pgm"), std::ios::binary);
    out << "P5\n1 1\n65535\n";
    out.put('\0');
    out.put('\0');
  }
  EXPECT_THROW(read_image(tmp.file("m.pgm")), io_error);
}

TEST(Config, EmptyGivesPaperDefaults) {
  RunConfig cfg = parse_config("");
  EXPECT_EQ(cfg.T, 100);
  EXPECT_DOUBLE_EQ(cfg.beta_start, 0.0001);
  EXPECT_DOUBLE_EQ(cfg.beta_end, 0.02);
  EXPECT_FALSE(cfg.mu.has_value());
  EXPECT_FALSE(cfg.zeta.has_value());
  EXPECT_TRUE(cfg.mean_correction);
  EXPECT_FALSE(cfg.jacobian_term);
}

TEST(Config, ZetaRangeError) {
  try {
    parse_config("zeta=2\n");
    FAIL() << "expected parse_error";
  } catch (const parse_error& e) {
    EXPECT_EQ(e.line(), 1);
  }
}

TEST(Config, ExplicitMuZetaParsed) {
  RunConfig cfg = parse_config("mu=1.6\nzeta=0.75\n");
  EXPECT_DOUBLE_EQ(*cfg.mu, 1.6);
  EXPECT_DOUBLE_EQ(*cfg.zeta, 0.75);
}

TEST(Config, UnknownKeyRejectedWithLine) {
  try {
    parse_config("T=100\nbogus_key=1\n");
    FAIL() << "expected parse_error";
  } catch (const parse_error& e) {
    EXPECT_EQ(e.line(), 2);
  }
}

TEST(Config, CommentsAndWhitespace) {
  RunConfig cfg = parse_config("# full line comment\n  T = 50  # trailing\n\n");
  EXPECT_EQ(cfg.T, 50);
}

TEST(Config, MissingReferencedFileRejected) {
  EXPECT_THROW(parse_config("prior_mean_file=/nonexistent/x.nrtf\n"), parse_error);
}

TEST(Config, StepsBoundedByT) {
  EXPECT_THROW(parse_config("T=10\nsteps=11\n"), parse_error);
  EXPECT_EQ(*parse_config("T=10\nsteps=10\n").steps, 10);
}

TEST(Presets, TableDefaultsResolve) {
  auto mz = default_mu_zeta(parse_operator_descriptor("cs:ratio=0.05,block=32"), 0.0);
  EXPECT_DOUBLE_EQ(mz.mu, 3.5);
  EXPECT_DOUBLE_EQ(mz.zeta, 1.0);

  mz = default_mu_zeta(parse_operator_descriptor("bicubic:factor=4"), 0.0);
  EXPECT_DOUBLE_EQ(mz.mu, 1.6);
  EXPECT_DOUBLE_EQ(mz.zeta, 0.75);

  mz = default_mu_zeta(parse_operator_descriptor("identity"), 0.25);
  EXPECT_DOUBLE_EQ(mz.mu, 1.0);
  EXPECT_DOUBLE_EQ(mz.zeta, 1.0);

  mz = default_mu_zeta(parse_operator_descriptor("blur_gauss:size=5,std=10"), 0.05);
  EXPECT_DOUBLE_EQ(mz.mu, 1.0);
  EXPECT_DOUBLE_EQ(mz.zeta, 0.8);

  // no preset -> (1, 1)
  mz = default_mu_zeta(parse_operator_descriptor("cs:ratio=0.5"), 0.3);
  EXPECT_DOUBLE_EQ(mz.mu, 1.0);
  EXPECT_DOUBLE_EQ(mz.zeta, 1.0);
}

TEST(Rng, DeterministicStreams) {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 1000; ++i) {
    double va = a.gaussian(), vb = b.gaussian(), vc = c.gaussian();
    all_equal = all_equal && (va == vb);
    any_diff = any_diff || (va != vc);
  }
  EXPECT_TRUE(all_equal);
  EXPECT_TRUE(any_diff);
}

TEST(Rng, GaussianMomentsSane) {
  Rng rng(7);
  std::vector<double> xs(200000);
  for (double& v : xs) v = rng.gaussian();
  auto m = nrlg_test::sample_moments(xs);
  EXPECT_NEAR(m.mean, 0.0, 3.0 / std::sqrt(200000.0));
  EXPECT_NEAR(m.var, 1.0, 3.0 * std::sqrt(2.0 / 200000.0));
}

TEST(Fft, MatchesNaiveDftOnMixedSizes) {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8},
                      {12, 12},
                      {7, 5},
                      {16, 12}}) {
    Rng rng(h * 100 + w);
    std::vector<std::complex<double>> grid(h * w);
    for (auto& v : grid) v = {rng.gaussian(), rng.gaussian()};
    auto want = nrlg_test::naive_dft2(grid, h, w, -1);
    auto got = grid;
    nrlg::detail::fft2(got, h, w, -1);
    for (std::size_t i = 0; i < grid.size(); ++i)
      EXPECT_NEAR(std::abs(got[i] - want[i]), 0.0, 1e-9) << h << "x" << w << " @" << i;

    // inverse undoes forward
    nrlg::detail::fft2(got, h, w, +1);
    for (std::size_t i = 0; i < grid.size(); ++i)
      EXPECT_NEAR(std::abs(got[i] - grid[i]), 0.0, 1e-10);
  }
}

TEST(Measurement, SidecarRoundTrip) {
  TempDir tmp;
  ImageGeometry geom{8, 8, 1};
  auto op = std::make_shared<BlockCsOperator>(geom, 8, 0.25, 9);
  Tensor x = nrlg_test::synthetic_image(8, 8);
  Measurement m = degrade(*op, x, 0.05, 1234);
  m.source_image = "src.pgm";
  write_measurement(tmp.file("meas"), m);

  Measurement back = read_measurement(tmp.file("meas.json"));
  EXPECT_EQ(back.sigma_y, m.sigma_y);
  EXPECT_EQ(back.noise_seed, m.noise_seed);
  EXPECT_EQ(back.operator_descriptor.kind, "cs");
  EXPECT_EQ(back.geometry.height, 8u);
  ASSERT_EQ(back.y.size(), m.y.size());
  for (std::size_t i = 0; i < m.y.size(); ++i) EXPECT_EQ(back.y[i], m.y[i]);

  // descriptor is sufficient to rebuild the operator exactly
  auto op2 = make_operator(back.operator_descriptor, back.geometry);
  Tensor y2 = op2->apply(x);
  Tensor y1 = op->apply(x);
  for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_EQ(y1[i], y2[i]);
}
