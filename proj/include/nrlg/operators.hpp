#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

#include "nrlg/detail/fft.hpp"
#include "nrlg/linop.hpp"
#include "nrlg/rng.hpp"

namespace nrlg {

// ---------------------------------------------------------------------------
// identity / denoising
// ---------------------------------------------------------------------------

class IdentityOperator final : public LinearOperator {
 public:
  explicit IdentityOperator(ImageGeometry geom) {
    shape_.geometry = geom;
    shape_.input_dim = shape_.output_dim = geom.pixel_count();
  }

  const OperatorShape& shape() const override { return shape_; }

  Tensor apply(const Tensor& x) const override {
    check_input(x);
    return x;
  }
  Tensor adjoint(const Tensor& y) const override {
    check_output(y);
    return y;
  }

  bool has_svd() const override { return true; }
  bool exact_kernel_solve() const override { return true; }

  Tensor kernel_solve(double c, double sigma2, const Tensor& r) const override {
    check_output(r);
    double d = c + sigma2;
    if (d <= 0.0) throw solver_error("identity kernel solve: singular system");
    return r * (1.0 / d);
  }

  SvdFactors svd_factors() const override {
    SvdFactors f;
    f.singular_values.assign(shape_.output_dim, 1.0);
    auto pass = [](const Tensor& v) { return v; };
    f.u_apply = f.u_adjoint = f.v_apply = f.v_adjoint = pass;
    return f;
  }

  OperatorDescriptor descriptor() const override { return {"identity", {}, {}}; }

 private:
  OperatorShape shape_;
};

// ---------------------------------------------------------------------------
// inpainting mask
// ---------------------------------------------------------------------------

// Selection of a pixel subset; all channels of a kept pixel are observed.
// Rows of A are distinct unit vectors, so A A^T = I.
class MaskOperator final : public LinearOperator {
 public:
  MaskOperator(ImageGeometry geom, std::vector<std::size_t> kept_pixels,
               OperatorDescriptor desc)
      : kept_(std::move(kept_pixels)), desc_(std::move(desc)) {
    shape_.geometry = geom;
    shape_.input_dim = geom.pixel_count();
    shape_.output_dim = kept_.size() * geom.channels;
    std::sort(kept_.begin(), kept_.end());
    if (kept_.empty() || kept_.back() >= geom.height * geom.width)
      throw domain_error("mask: kept pixel set empty or out of range");
    if (std::adjacent_find(kept_.begin(), kept_.end()) != kept_.end())
      throw domain_error("mask: duplicate kept pixel");
  }

  // Random mask keeping round(ratio * H * W) pixels, seeded Fisher-Yates.
  static std::shared_ptr<MaskOperator> random(ImageGeometry geom, double ratio,
                                              std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio <= 1.0))
      throw domain_error("mask: ratio must be in (0,1]");
    std::size_t npix = geom.height * geom.width;
    std::size_t keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(ratio * npix)));
    keep = std::min(keep, npix);
    std::vector<std::size_t> perm(npix);
    for (std::size_t i = 0; i < npix; ++i) perm[i] = i;
    Rng rng(seed);
    for (std::size_t i = npix - 1; i > 0; --i) {
      std::size_t j = rng.next_u64() % (i + 1);
      std::swap(perm[i], perm[j]);
    }
    perm.resize(keep);
    OperatorDescriptor d{"mask",
                         {{"ratio", ratio},
                          {"seed", static_cast<double>(seed)}},
                         {}};
    return std::make_shared<MaskOperator>(geom, std::move(perm), std::move(d));
  }

  const OperatorShape& shape() const override { return shape_; }
  const std::vector<std::size_t>& kept_pixels() const { return kept_; }

  Tensor apply(const Tensor& x) const override {
    check_input(x);
    const std::size_t C = shape_.geometry.channels;
    Tensor y({shape_.output_dim});
    for (std::size_t k = 0; k < kept_.size(); ++k)
      for (std::size_t c = 0; c < C; ++c)
        y[k * C + c] = x[kept_[k] * C + c];
    return y;
  }

  Tensor adjoint(const Tensor& y) const override {
    check_output(y);
    const std::size_t C = shape_.geometry.channels;
    Tensor x(shape_.geometry.dims());
    for (std::size_t k = 0; k < kept_.size(); ++k)
      for (std::size_t c = 0; c < C; ++c)
        x[kept_[k] * C + c] = y[k * C + c];
    return x;
  }

  bool has_svd() const override { return true; }
  bool exact_kernel_solve() const override { return true; }

  Tensor kernel_solve(double c, double sigma2, const Tensor& r) const override {
    check_output(r);
    double d = c + sigma2;
    if (d <= 0.0) throw solver_error("mask kernel solve: singular system");
    return r * (1.0 / d);
  }

  SvdFactors svd_factors() const override;

  OperatorDescriptor descriptor() const override { return desc_; }

 private:
  OperatorShape shape_;
  std::vector<std::size_t> kept_;
  OperatorDescriptor desc_;
};

// ---------------------------------------------------------------------------
// blockwise-orthogonal compressive sensing
// ---------------------------------------------------------------------------

// One seeded random matrix with orthonormalized rows, applied to every
// B x B block of every channel. Orthonormal rows give A A^T = I, direct
// kernel solves and trivial SVD factors.
class BlockCsOperator final : public LinearOperator {
 public:
  BlockCsOperator(ImageGeometry geom, std::size_t block, double ratio,
                  std::uint64_t seed)
      : block_(block), ratio_(ratio), seed_(seed) {
    if (block == 0 || geom.height % block != 0 || geom.width % block != 0)
      throw domain_error("cs: block size must divide image height and width");
    if (!(ratio > 0.0 && ratio <= 1.0))
      throw domain_error("cs: sampling ratio must be in (0,1]");
    const std::size_t bn = block * block;
    rows_ = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(ratio * bn)));
    rows_ = std::min(rows_, bn);
    shape_.geometry = geom;
    shape_.input_dim = geom.pixel_count();
    blocks_h_ = geom.height / block;
    blocks_w_ = geom.width / block;
    shape_.output_dim = geom.channels * blocks_h_ * blocks_w_ * rows_;
    build_matrix();
  }

  const OperatorShape& shape() const override { return shape_; }
  std::size_t rows_per_block() const { return rows_; }

  Tensor apply(const Tensor& x) const override {
    check_input(x);
    Tensor y({shape_.output_dim});
    const std::size_t bn = block_ * block_;
    std::vector<double> v(bn);
    std::size_t out = 0;
    for_each_block([&](std::size_t c, std::size_t bi, std::size_t bj) {
      gather_block(x, c, bi, bj, v);
      const double* g = mat_->data();
      for (std::size_t r = 0; r < rows_; ++r, g += bn) {
        double acc = 0.0;
        for (std::size_t i = 0; i < bn; ++i) acc += g[i] * v[i];
        y[out++] = acc;
      }
    });
    return y;
  }

  Tensor adjoint(const Tensor& y) const override {
    check_output(y);
    Tensor x(shape_.geometry.dims());
    const std::size_t bn = block_ * block_;
    std::vector<double> v(bn);
    std::size_t in = 0;
    for_each_block([&](std::size_t c, std::size_t bi, std::size_t bj) {
      std::fill(v.begin(), v.end(), 0.0);
      const double* g = mat_->data();
      for (std::size_t r = 0; r < rows_; ++r, g += bn) {
        double w = y[in++];
        for (std::size_t i = 0; i < bn; ++i) v[i] += w * g[i];
      }
      scatter_block(x, c, bi, bj, v);
    });
    return x;
  }

  bool has_svd() const override { return true; }
  bool exact_kernel_solve() const override { return true; }

  Tensor kernel_solve(double c, double sigma2, const Tensor& r) const override {
    check_output(r);
    double d = c + sigma2;
    if (d <= 0.0) throw solver_error("cs kernel solve: singular system");
    return r * (1.0 / d);
  }

  SvdFactors svd_factors() const override;

  OperatorDescriptor descriptor() const override {
    return {"cs",
            {{"ratio", ratio_},
             {"block", static_cast<double>(block_)},
             {"seed", static_cast<double>(seed_)}},
            {}};
  }

 private:
  template <typename F>
  void for_each_block(F&& f) const {
    for (std::size_t c = 0; c < shape_.geometry.channels; ++c)
      for (std::size_t bi = 0; bi < blocks_h_; ++bi)
        for (std::size_t bj = 0; bj < blocks_w_; ++bj) f(c, bi, bj);
  }

  void gather_block(const Tensor& x, std::size_t c, std::size_t bi,
                    std::size_t bj, std::vector<double>& v) const {
    const std::size_t W = shape_.geometry.width;
    const std::size_t C = shape_.geometry.channels;
    for (std::size_t i = 0; i < block_; ++i)
      for (std::size_t j = 0; j < block_; ++j)
        v[i * block_ + j] =
            x[((bi * block_ + i) * W + bj * block_ + j) * C + c];
  }

  void scatter_block(Tensor& x, std::size_t c, std::size_t bi, std::size_t bj,
                     const std::vector<double>& v) const {
    const std::size_t W = shape_.geometry.width;
    const std::size_t C = shape_.geometry.channels;
    for (std::size_t i = 0; i < block_; ++i)
      for (std::size_t j = 0; j < block_; ++j)
        x[((bi * block_ + i) * W + bj * block_ + j) * C + c] =
            v[i * block_ + j];
  }

  void build_matrix() {
    const std::size_t bn = block_ * block_;
    auto mat = std::make_shared<std::vector<double>>(rows_ * bn);
    Rng rng(seed_);
    for (double& v : *mat) v = rng.gaussian();
    // Modified Gram-Schmidt, two passes.
    for (std::size_t r = 0; r < rows_; ++r) {
      double* row = mat->data() + r * bn;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < r; ++k) {
          const double* prev = mat->data() + k * bn;
          double proj = 0.0;
          for (std::size_t i = 0; i < bn; ++i) proj += row[i] * prev[i];
          for (std::size_t i = 0; i < bn; ++i) row[i] -= proj * prev[i];
        }
      }
      double nrm = 0.0;
      for (std::size_t i = 0; i < bn; ++i) nrm += row[i] * row[i];
      nrm = std::sqrt(nrm);
      if (nrm < 1e-12)
        throw solver_error("cs: degenerate random block matrix");
      for (std::size_t i = 0; i < bn; ++i) row[i] /= nrm;
    }
    mat_ = std::move(mat);
  }

  OperatorShape shape_;
  std::size_t block_;
  double ratio_;
  std::uint64_t seed_;
  std::size_t rows_ = 0;
  std::size_t blocks_h_ = 0, blocks_w_ = 0;
  std::shared_ptr<std::vector<double>> mat_;  // rows_ x block^2, row-major
};

// ---------------------------------------------------------------------------
// circular convolution (Gaussian blur, motion blur)
// ---------------------------------------------------------------------------

namespace detail {

// Packing of the complex DFT of a real H x W grid into an orthonormal real
// coordinate system: self-conjugate frequencies contribute one coordinate,
// conjugate pairs contribute (sqrt(2) Re, sqrt(2) Im) at the canonical
// representative. In this basis a circulant becomes scale times rotation
// per frequency, which is a genuine real SVD.
struct SpectrumPacking {
  std::size_t h = 0, w = 0;
  std::vector<std::size_t> self_freqs;  // flat frequency indices, k == -k
  std::vector<std::size_t> pair_freqs;  // canonical representative, k < -k

  SpectrumPacking(std::size_t h_, std::size_t w_) : h(h_), w(w_) {
    for (std::size_t kr = 0; kr < h; ++kr) {
      for (std::size_t kc = 0; kc < w; ++kc) {
        std::size_t cr = (h - kr) % h, cc = (w - kc) % w;
        std::size_t idx = kr * w + kc, cidx = cr * w + cc;
        if (idx == cidx)
          self_freqs.push_back(idx);
        else if (idx < cidx)
          pair_freqs.push_back(idx);
      }
    }
  }

  std::size_t conj_index(std::size_t idx) const {
    std::size_t kr = idx / w, kc = idx % w;
    return ((h - kr) % h) * w + ((w - kc) % w);
  }

  // real grid -> packed coordinates (one channel)
  void pack(const double* x, double* out) const {
    std::vector<cplx> g(h * w);
    for (std::size_t i = 0; i < h * w; ++i) g[i] = cplx(x[i], 0.0);
    fft2(g, h, w, -1);
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(h * w));
    const double s2 = std::sqrt(2.0) * inv_sqrt_n;
    std::size_t p = 0;
    for (std::size_t idx : self_freqs) out[p++] = g[idx].real() * inv_sqrt_n;
    for (std::size_t idx : pair_freqs) {
      out[p++] = g[idx].real() * s2;
      out[p++] = g[idx].imag() * s2;
    }
  }

  // packed coordinates -> real grid (one channel)
  void unpack(const double* q, double* out) const {
    const double n = static_cast<double>(h * w);
    const double sqrt_n = std::sqrt(n);
    std::vector<cplx> g(h * w, cplx(0, 0));
    std::size_t p = 0;
    for (std::size_t idx : self_freqs) g[idx] = cplx(q[p++] * sqrt_n, 0.0);
    const double s = sqrt_n / std::sqrt(2.0);
    for (std::size_t idx : pair_freqs) {
      double re = q[p++] * s;
      double im = q[p++] * s;
      g[idx] = cplx(re, im);
      g[conj_index(idx)] = cplx(re, -im);
    }
    fft2(g, h, w, +1);
    for (std::size_t i = 0; i < h * w; ++i) out[i] = g[i].real();
  }
};

}  // namespace detail

inline Tensor normalize_kernel(Tensor kernel) {
  double s = 0.0;
  for (std::size_t i = 0; i < kernel.size(); ++i) s += kernel[i];
  if (std::abs(s) < 1e-300)
    throw domain_error("kernel normalization: entries sum to zero");
  kernel *= 1.0 / s;
  return kernel;
}

inline Tensor gaussian_kernel(std::size_t size, double stddev) {
  if (size == 0 || size % 2 == 0)
    throw domain_error("gaussian kernel: size must be odd and positive");
  if (!(stddev > 0.0)) throw domain_error("gaussian kernel: stddev must be > 0");
  Tensor k({size, size});
  double c = (size - 1) / 2.0;
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      double di = i - c, dj = j - c;
      k[i * size + j] = std::exp(-(di * di + dj * dj) / (2.0 * stddev * stddev));
    }
  return normalize_kernel(std::move(k));
}

// Plain-text kernel file: first line "K_H K_W", then K_H rows of K_W reals.
inline Tensor load_kernel_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open kernel file: " + path);
  std::size_t kh = 0, kw = 0;
  if (!(in >> kh >> kw) || kh == 0 || kw == 0)
    throw io_error("kernel file: bad header in " + path);
  Tensor k({kh, kw});
  for (std::size_t i = 0; i < kh * kw; ++i)
    if (!(in >> k[i])) throw io_error("kernel file: truncated data in " + path);
  return k;
}

// 2D circular convolution with a fixed kernel, applied per channel.
// Diagonal in the Fourier basis, hence exact kernel solves and an implicit
// (unsorted) SVD with |DFT(kernel)| as singular values.
class CircularConvOperator final : public LinearOperator {
 public:
  CircularConvOperator(ImageGeometry geom, const Tensor& kernel,
                       OperatorDescriptor desc)
      : desc_(std::move(desc)),
        packing_(std::make_shared<detail::SpectrumPacking>(geom.height,
                                                           geom.width)) {
    if (kernel.ndim() != 2) throw domain_error("blur: kernel must be 2-D");
    const std::size_t kh = kernel.dims()[0], kw = kernel.dims()[1];
    if (kh > geom.height || kw > geom.width)
      throw domain_error("blur: kernel larger than image");
    shape_.geometry = geom;
    shape_.input_dim = shape_.output_dim = geom.pixel_count();

    // Embed kernel with its center at the origin, wrapped periodically.
    const std::size_t H = geom.height, W = geom.width;
    std::vector<detail::cplx> grid(H * W, detail::cplx(0, 0));
    const long ch = static_cast<long>(kh / 2), cw = static_cast<long>(kw / 2);
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        std::size_t r = static_cast<std::size_t>(
            ((static_cast<long>(i) - ch) % static_cast<long>(H) + H) % H);
        std::size_t c = static_cast<std::size_t>(
            ((static_cast<long>(j) - cw) % static_cast<long>(W) + W) % W);
        grid[r * W + c] += detail::cplx(kernel[i * kw + j], 0.0);
      }
    detail::fft2(grid, H, W, -1);
    khat_ = std::make_shared<std::vector<detail::cplx>>(std::move(grid));
  }

  const OperatorShape& shape() const override { return shape_; }
  const std::vector<detail::cplx>& spectrum() const { return *khat_; }

  Tensor apply(const Tensor& x) const override {
    check_input(x);
    return filtered(x, [&](detail::cplx v, std::size_t k) { return v * (*khat_)[k]; });
  }

  Tensor adjoint(const Tensor& y) const override {
    check_output(y);
    return filtered(y, [&](detail::cplx v, std::size_t k) {
      return v * std::conj((*khat_)[k]);
    });
  }

  bool has_svd() const override { return true; }
  bool exact_kernel_solve() const override { return true; }

  Tensor kernel_solve(double c, double sigma2, const Tensor& r) const override {
    check_output(r);
    if (c < 0.0 || sigma2 < 0.0)
      throw domain_error("kernel_solve: c and sigma2 must be nonnegative");
    const auto& kh = *khat_;
    for (const auto& v : kh)
      if (c * std::norm(v) + sigma2 == 0.0)
        throw solver_error("blur kernel solve: singular system (zero response)");
    return filtered(r, [&](detail::cplx v, std::size_t k) {
      return v / (c * std::norm(kh[k]) + sigma2);
    });
  }

  SvdFactors svd_factors() const override;

  OperatorDescriptor descriptor() const override { return desc_; }

 private:
  template <typename F>
  Tensor filtered(const Tensor& x, F&& factor) const {
    const std::size_t H = shape_.geometry.height, W = shape_.geometry.width;
    const std::size_t C = shape_.geometry.channels, n = H * W;
    Tensor out(x.dims());
    std::vector<detail::cplx> g(n);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < n; ++i) g[i] = detail::cplx(x[i * C + c], 0.0);
      detail::fft2(g, H, W, -1);
      for (std::size_t k = 0; k < n; ++k) g[k] = factor(g[k], k);
      detail::fft2(g, H, W, +1);
      for (std::size_t i = 0; i < n; ++i) out[i * C + c] = g[i].real();
    }
    return out;
  }

  OperatorShape shape_;
  OperatorDescriptor desc_;
  std::shared_ptr<detail::SpectrumPacking> packing_;
  std::shared_ptr<std::vector<detail::cplx>> khat_;
};

inline std::shared_ptr<CircularConvOperator> make_gaussian_blur(
    ImageGeometry geom, std::size_t size, double stddev) {
  OperatorDescriptor d{"blur_gauss",
                       {{"size", static_cast<double>(size)}, {"std", stddev}},
                       {}};
  return std::make_shared<CircularConvOperator>(geom, gaussian_kernel(size, stddev),
                                                std::move(d));
}

inline std::shared_ptr<CircularConvOperator> make_motion_blur(
    ImageGeometry geom, const Tensor& kernel, const std::string& source_path) {
  OperatorDescriptor d{"blur_motion", {}, {{"kernel", source_path}}};
  return std::make_shared<CircularConvOperator>(geom, normalize_kernel(kernel),
                                                std::move(d));
}

// ---------------------------------------------------------------------------
// average-pool downsampling
// ---------------------------------------------------------------------------

// Mean over s x s blocks per channel. Rows are orthogonal with norm 1/s,
// so kernel solves are direct and the SVD is explicit with all singular
// values equal to 1/s.
class AvgPoolOperator final : public LinearOperator {
 public:
  AvgPoolOperator(ImageGeometry geom, std::size_t factor) : factor_(factor) {
    if (factor == 0 || geom.height % factor != 0 || geom.width % factor != 0)
      throw domain_error("avgpool: factor must divide image height and width");
    shape_.geometry = geom;
    shape_.input_dim = geom.pixel_count();
    out_h_ = geom.height / factor;
    out_w_ = geom.width / factor;
    out_geom_ = ImageGeometry{out_h_, out_w_, geom.channels};
    shape_.output_dim = out_geom_.pixel_count();
  }

  const OperatorShape& shape() const override { return shape_; }
  std::size_t factor() const { return factor_; }

  Tensor apply(const Tensor& x) const override {
    check_input(x);
    return pooled(x, 1.0 / (factor_ * factor_));
  }

  Tensor adjoint(const Tensor& y) const override {
    check_output(y);
    return spread(y, 1.0 / (factor_ * factor_));
  }

  bool has_svd() const override { return true; }
  bool exact_kernel_solve() const override { return true; }

  Tensor kernel_solve(double c, double sigma2, const Tensor& r) const override {
    check_output(r);
    double d = c / (factor_ * factor_) + sigma2;
    if (d <= 0.0) throw solver_error("avgpool kernel solve: singular system");
    return r * (1.0 / d);
  }

  SvdFactors svd_factors() const override;

  OperatorDescriptor descriptor() const override {
    return {"avgpool", {{"factor", static_cast<double>(factor_)}}, {}};
  }

 private:
  Tensor pooled(const Tensor& x, double weight) const {
    const std::size_t W = shape_.geometry.width, C = shape_.geometry.channels;
    Tensor y(out_geom_.dims());
    for (std::size_t oi = 0; oi < out_h_; ++oi)
      for (std::size_t oj = 0; oj < out_w_; ++oj)
        for (std::size_t c = 0; c < C; ++c) {
          double acc = 0.0;
          for (std::size_t i = 0; i < factor_; ++i)
            for (std::size_t j = 0; j < factor_; ++j)
              acc += x[((oi * factor_ + i) * W + oj * factor_ + j) * C + c];
          y[(oi * out_w_ + oj) * C + c] = acc * weight;
        }
    return y;
  }

  Tensor spread(const Tensor& y, double weight) const {
    const std::size_t W = shape_.geometry.width, C = shape_.geometry.channels;
    Tensor x(shape_.geometry.dims());
    for (std::size_t oi = 0; oi < out_h_; ++oi)
      for (std::size_t oj = 0; oj < out_w_; ++oj)
        for (std::size_t c = 0; c < C; ++c) {
          double v = y[(oi * out_w_ + oj) * C + c] * weight;
          for (std::size_t i = 0; i < factor_; ++i)
            for (std::size_t j = 0; j < factor_; ++j)
              x[((oi * factor_ + i) * W + oj * factor_ + j) * C + c] = v;
        }
    return x;
  }

  OperatorShape shape_;
  std::size_t factor_;
  std::size_t out_h_ = 0, out_w_ = 0;
  ImageGeometry out_geom_;
};

// ---------------------------------------------------------------------------
// bicubic downsampling (matrix-free; iterative kernel solves only)
// ---------------------------------------------------------------------------

// Separable Keys cubic (a = -1/2) antialiasing filter followed by stride-s
// subsampling, periodic boundary. No SVD capability is claimed; kernel
// solves run through the conjugate-gradient fallback.
class BicubicDownsampleOperator final : public LinearOperator {
 public:
  BicubicDownsampleOperator(ImageGeometry geom, std::size_t factor)
      : factor_(factor) {
    if (factor < 2 || geom.height % factor != 0 || geom.width % factor != 0)
      throw domain_error("bicubic: factor must be >= 2 and divide image size");
    shape_.geometry = geom;
    shape_.input_dim = geom.pixel_count();
    out_h_ = geom.height / factor;
    out_w_ = geom.width / factor;
    out_geom_ = ImageGeometry{out_h_, out_w_, geom.channels};
    shape_.output_dim = out_geom_.pixel_count();
    build_taps();
  }

  const OperatorShape& shape() const override { return shape_; }

  Tensor apply(const Tensor& x) const override {
    check_input(x);
    const auto& g = shape_.geometry;
    // horizontal then vertical pass: (H, W, C) -> (H, W/s, C) -> (H/s, W/s, C)
    Tensor mid({g.height, out_w_, g.channels});
    run_rows(x.data(), mid.data(), g.height, g.width, g.channels, false);
    Tensor y(out_geom_.dims());
    run_cols(mid.data(), y.data(), g.height, out_w_, g.channels, false);
    return y;
  }

  Tensor adjoint(const Tensor& y) const override {
    check_output(y);
    const auto& g = shape_.geometry;
    Tensor mid({g.height, out_w_, g.channels});
    run_cols(y.data(), mid.data(), g.height, out_w_, g.channels, true);
    Tensor x(g.dims());
    run_rows(mid.data(), x.data(), g.height, g.width, g.channels, true);
    return x;
  }

  OperatorDescriptor descriptor() const override {
    return {"bicubic", {{"factor", static_cast<double>(factor_)}}, {}};
  }

 private:
  static double keys_cubic(double u) {
    u = std::abs(u);
    if (u <= 1.0) return 1.5 * u * u * u - 2.5 * u * u + 1.0;
    if (u < 2.0) return -0.5 * u * u * u + 2.5 * u * u - 4.0 * u + 2.0;
    return 0.0;
  }

  void build_taps() {
    // Output j draws from inputs around center s*j + (s-1)/2; the offset
    // pattern is identical for every j.
    const double s = static_cast<double>(factor_);
    const double half = (s - 1.0) / 2.0;
    const long lo = static_cast<long>(std::ceil(half - 2.0 * s));
    const long hi = static_cast<long>(std::floor(half + 2.0 * s));
    double total = 0.0;
    for (long d = lo; d <= hi; ++d) {
      double w = keys_cubic((static_cast<double>(d) - half) / s);
      if (w != 0.0) {
        offsets_.push_back(d);
        weights_.push_back(w);
        total += w;
      }
    }
    for (double& w : weights_) w /= total;
  }

  // forward: out[j] = sum_d w_d in[s*j + d mod L]; transpose scatters.
  // Output buffers must arrive zeroed (accumulating writes).
  void resample_line(const double* in, double* out, std::size_t full_len,
                     std::size_t out_len, std::size_t stride, bool transpose) const {
    const long L = static_cast<long>(full_len);
    for (std::size_t j = 0; j < out_len; ++j) {
      for (std::size_t k = 0; k < offsets_.size(); ++k) {
        long idx = static_cast<long>(j * factor_) + offsets_[k];
        idx = ((idx % L) + L) % L;
        std::size_t full_pos = static_cast<std::size_t>(idx) * stride;
        if (!transpose)
          out[j * stride] += weights_[k] * in[full_pos];
        else
          out[full_pos] += weights_[k] * in[j * stride];
      }
    }
  }

  // Row direction: full grid is (h x w x c), reduced is (h x out_w x c).
  void run_rows(const double* in, double* out, std::size_t h, std::size_t w,
                std::size_t c, bool transpose) const {
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t full_off = (r * w) * c + ch;
        std::size_t red_off = (r * out_w_) * c + ch;
        resample_line(in + (transpose ? red_off : full_off),
                      out + (transpose ? full_off : red_off), w, out_w_, c,
                      transpose);
      }
  }

  // Column direction: full grid is (h x w x c), reduced is (out_h x w x c).
  void run_cols(const double* in, double* out, std::size_t h, std::size_t w,
                std::size_t c, bool transpose) const {
    for (std::size_t col = 0; col < w; ++col)
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t off = col * c + ch;
        resample_line(in + off, out + off, h, out_h_, w * c, transpose);
      }
  }

  OperatorShape shape_;
  std::size_t factor_;
  std::size_t out_h_ = 0, out_w_ = 0;
  ImageGeometry out_geom_;
  std::vector<long> offsets_;
  std::vector<double> weights_;
};

// ---------------------------------------------------------------------------
// dense matrix operator
// ---------------------------------------------------------------------------

// Explicit M x N matrix. Mostly used for synthetic problems and as the
// reference route in equivalence checks; kernel solves go through CG.
class DenseOperator final : public LinearOperator {
 public:
  DenseOperator(std::size_t m, std::size_t n, std::vector<double> entries,
                ImageGeometry geom = {})
      : mat_(std::make_shared<std::vector<double>>(std::move(entries))) {
    if (mat_->size() != m * n) throw shape_error("dense operator: bad entry count");
    if (geom.pixel_count() == 0) geom = ImageGeometry{1, n, 1};
    if (geom.pixel_count() != n)
      throw shape_error("dense operator: geometry does not match N");
    shape_.geometry = geom;
    shape_.input_dim = n;
    shape_.output_dim = m;
  }

  static std::shared_ptr<DenseOperator> random(std::size_t m, std::size_t n,
                                               std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> e(m * n);
    for (double& v : e) v = rng.gaussian() / std::sqrt(static_cast<double>(n));
    return std::make_shared<DenseOperator>(m, n, std::move(e));
  }

  const OperatorShape& shape() const override { return shape_; }
  const std::vector<double>& entries() const { return *mat_; }

  Tensor apply(const Tensor& x) const override {
    check_input(x);
    Tensor y({shape_.output_dim});
    const std::size_t n = shape_.input_dim;
    for (std::size_t r = 0; r < shape_.output_dim; ++r) {
      const double* row = mat_->data() + r * n;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += row[i] * x[i];
      y[r] = acc;
    }
    return y;
  }

  Tensor adjoint(const Tensor& y) const override {
    check_output(y);
    Tensor x(shape_.geometry.dims());
    const std::size_t n = shape_.input_dim;
    for (std::size_t r = 0; r < shape_.output_dim; ++r) {
      const double* row = mat_->data() + r * n;
      for (std::size_t i = 0; i < n; ++i) x[i] += row[i] * y[r];
    }
    return x;
  }

  OperatorDescriptor descriptor() const override {
    OperatorDescriptor d{"dense",
                         {{"rows", static_cast<double>(shape_.output_dim)},
                          {"cols", static_cast<double>(shape_.input_dim)}},
                         {}};
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < mat_->size(); ++i) {
      if (i) os << ' ';
      os << (*mat_)[i];
    }
    d.text_params["entries"] = os.str();
    return d;
  }

 private:
  OperatorShape shape_;
  std::shared_ptr<std::vector<double>> mat_;
};

// ---------------------------------------------------------------------------
// SVD factor definitions
// ---------------------------------------------------------------------------

inline SvdFactors MaskOperator::svd_factors() const {
  // Orthonormal rows: A = I * I * A, i.e. U = I_M, Sigma = 1, V^T = A.
  // Closures hold a copy of the (immutable) operator.
  SvdFactors f;
  f.singular_values.assign(shape_.output_dim, 1.0);
  MaskOperator self = *this;
  f.u_apply = f.u_adjoint = [](const Tensor& v) { return v; };
  f.v_adjoint = [self](const Tensor& x) { return self.apply(x); };
  f.v_apply = [self](const Tensor& w) { return self.adjoint(w); };
  return f;
}

inline SvdFactors BlockCsOperator::svd_factors() const {
  SvdFactors f;
  f.singular_values.assign(shape_.output_dim, 1.0);
  BlockCsOperator self = *this;
  f.u_apply = f.u_adjoint = [](const Tensor& v) { return v; };
  f.v_adjoint = [self](const Tensor& x) { return self.apply(x); };
  f.v_apply = [self](const Tensor& w) { return self.adjoint(w); };
  return f;
}

inline SvdFactors AvgPoolOperator::svd_factors() const {
  SvdFactors f;
  const double s = static_cast<double>(factor_);
  f.singular_values.assign(shape_.output_dim, 1.0 / s);
  // V columns are the unit-normalized pooling rows: value 1/s on each
  // block, realized by rescaling the pool/spread helpers.
  AvgPoolOperator self = *this;
  f.u_apply = f.u_adjoint = [](const Tensor& v) { return v; };
  f.v_adjoint = [self, s](const Tensor& x) { return self.pooled(x, 1.0 / s); };
  f.v_apply = [self, s](const Tensor& w) { return self.spread(w, 1.0 / s); };
  return f;
}

inline SvdFactors CircularConvOperator::svd_factors() const {
  SvdFactors f;
  auto packing = packing_;
  auto khat = khat_;
  const std::size_t C = shape_.geometry.channels;
  const std::size_t n = shape_.geometry.height * shape_.geometry.width;

  // Per-frequency magnitudes in packed order, interleaved per channel to
  // match the pixel-major coordinate layout produced below.
  std::vector<double> mags;
  mags.reserve(n);
  for (std::size_t idx : packing->self_freqs)
    mags.push_back(std::abs((*khat)[idx]));
  for (std::size_t idx : packing->pair_freqs) {
    double m = std::abs((*khat)[idx]);
    mags.push_back(m);
    mags.push_back(m);
  }
  f.singular_values.reserve(n * C);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < C; ++c) f.singular_values.push_back(mags[i]);

  auto channelwise = [C, n](const Tensor& x, auto&& per_channel) {
    Tensor out(x.dims());
    std::vector<double> in_buf(n), out_buf(n);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < n; ++i) in_buf[i] = x[i * C + c];
      per_channel(in_buf.data(), out_buf.data());
      for (std::size_t i = 0; i < n; ++i) out[i * C + c] = out_buf[i];
    }
    return out;
  };

  // Interleaved (pixel-major) packed layout keeps channel handling uniform.
  f.v_adjoint = [packing, channelwise](const Tensor& x) {
    return channelwise(x, [&](const double* in, double* out) {
      packing->pack(in, out);
    });
  };
  f.v_apply = [packing, channelwise](const Tensor& w) {
    return channelwise(w, [&](const double* in, double* out) {
      packing->unpack(in, out);
    });
  };

  // U = V composed with the per-frequency rotation by the spectrum phase
  // (a sign flip on self-conjugate frequencies).
  auto rotate = [packing, khat](const double* in, double* out, bool inverse) {
    std::size_t p = 0;
    for (std::size_t idx : packing->self_freqs) {
      double sgn = (*khat)[idx].real() >= 0.0 ? 1.0 : -1.0;
      out[p] = sgn * in[p];
      ++p;
    }
    for (std::size_t idx : packing->pair_freqs) {
      detail::cplx v = (*khat)[idx];
      double m = std::abs(v);
      double cr = m > 0.0 ? v.real() / m : 1.0;
      double ci = m > 0.0 ? v.imag() / m : 0.0;
      if (inverse) ci = -ci;
      double re = in[p], im = in[p + 1];
      out[p] = cr * re - ci * im;
      out[p + 1] = ci * re + cr * im;
      p += 2;
    }
  };

  f.u_apply = [packing, channelwise, rotate](const Tensor& w) {
    return channelwise(w, [&](const double* in, double* out) {
      std::vector<double> tmp(packing->h * packing->w);
      rotate(in, tmp.data(), false);
      packing->unpack(tmp.data(), out);
    });
  };
  f.u_adjoint = [packing, channelwise, rotate](const Tensor& y) {
    return channelwise(y, [&](const double* in, double* out) {
      std::vector<double> tmp(packing->h * packing->w);
      packing->pack(in, tmp.data());
      rotate(tmp.data(), out, true);
    });
  };
  return f;
}

// ---------------------------------------------------------------------------
// descriptor parsing and factory
// ---------------------------------------------------------------------------

// Compact text form: "kind" or "kind:key=value,key=value". Numeric values
// are parsed as doubles; anything else stays textual.
inline OperatorDescriptor parse_operator_descriptor(const std::string& text) {
  OperatorDescriptor d;
  auto colon = text.find(':');
  d.kind = text.substr(0, colon);
  if (d.kind.empty()) throw domain_error("operator descriptor: empty kind");
  if (colon == std::string::npos) return d;
  std::string rest = text.substr(colon + 1);
  std::istringstream ss(rest);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    auto eq = item.find('=');
    if (eq == std::string::npos)
      throw domain_error("operator descriptor: expected key=value in '" + item + "'");
    std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    try {
      std::size_t used = 0;
      double num = std::stod(value, &used);
      if (used == value.size()) {
        d.params[key] = num;
        continue;
      }
    } catch (const std::exception&) {
    }
    d.text_params[key] = value;
  }
  return d;
}

inline double descriptor_param(const OperatorDescriptor& d, const std::string& key,
                               double fallback, bool required = false) {
  auto it = d.params.find(key);
  if (it == d.params.end()) {
    if (required)
      throw domain_error("operator '" + d.kind + "': missing parameter '" + key + "'");
    return fallback;
  }
  return it->second;
}

inline std::shared_ptr<LinearOperator> make_operator(const OperatorDescriptor& d,
                                                     ImageGeometry geom) {
  if (d.kind == "identity") return std::make_shared<IdentityOperator>(geom);
  if (d.kind == "mask") {
    double ratio = descriptor_param(d, "ratio", 0.5);
    auto seed = static_cast<std::uint64_t>(descriptor_param(d, "seed", 0));
    return MaskOperator::random(geom, ratio, seed);
  }
  if (d.kind == "cs") {
    double ratio = descriptor_param(d, "ratio", 0.0, true);
    auto block = static_cast<std::size_t>(descriptor_param(d, "block", 32));
    auto seed = static_cast<std::uint64_t>(descriptor_param(d, "seed", 0));
    return std::make_shared<BlockCsOperator>(geom, block, ratio, seed);
  }
  if (d.kind == "blur_gauss") {
    auto size = static_cast<std::size_t>(descriptor_param(d, "size", 5));
    double stddev = descriptor_param(d, "std", 10.0);
    return make_gaussian_blur(geom, size, stddev);
  }
  if (d.kind == "blur_motion") {
    auto it = d.text_params.find("kernel");
    if (it == d.text_params.end())
      throw domain_error("blur_motion: missing kernel=<path>");
    return make_motion_blur(geom, load_kernel_file(it->second), it->second);
  }
  if (d.kind == "avgpool") {
    auto factor = static_cast<std::size_t>(descriptor_param(d, "factor", 4));
    return std::make_shared<AvgPoolOperator>(geom, factor);
  }
  if (d.kind == "bicubic") {
    auto factor = static_cast<std::size_t>(descriptor_param(d, "factor", 4));
    return std::make_shared<BicubicDownsampleOperator>(geom, factor);
  }
  if (d.kind == "dense") {
    auto rows = static_cast<std::size_t>(descriptor_param(d, "rows", 0, true));
    auto cols = static_cast<std::size_t>(descriptor_param(d, "cols", 0, true));
    auto it = d.text_params.find("entries");
    if (it == d.text_params.end())
      throw domain_error("dense: missing entries");
    std::vector<double> e;
    e.reserve(rows * cols);
    std::istringstream ss(it->second);
    double v;
    while (ss >> v) e.push_back(v);
    return std::make_shared<DenseOperator>(rows, cols, std::move(e), geom);
  }
  throw domain_error("unknown operator kind: " + d.kind);
}

inline std::shared_ptr<LinearOperator> make_operator(const std::string& text,
                                                     ImageGeometry geom) {
  return make_operator(parse_operator_descriptor(text), geom);
}

}  // namespace nrlg
