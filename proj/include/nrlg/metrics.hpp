#pragma once

#include <cmath>
#include <limits>

#include "nrlg/errors.hpp"
#include "nrlg/tensor.hpp"

namespace nrlg {

struct MetricReport {
  double psnr_db = 0.0;  // +infinity when images are identical
  double ssim = 0.0;
};

inline double mse(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw shape_error("mse: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

inline double psnr(const Tensor& x, const Tensor& ref, double peak = 1.0) {
  if (!(peak > 0.0)) throw domain_error("psnr: peak must be positive");
  double m = mse(x, ref);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

namespace detail {

inline std::vector<double> ssim_window(std::size_t size, double sigma) {
  std::vector<double> w(size);
  double c = (size - 1) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    w[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

}  // namespace detail

// Mean local SSIM over valid 11x11 windows (Gaussian weights, sigma 1.5,
// K1 = 0.01, K2 = 0.03), channels averaged.
inline double ssim(const Tensor& x, const Tensor& ref, double peak = 1.0) {
  if (!x.same_shape(ref)) throw shape_error("ssim: shape mismatch");
  if (!(peak > 0.0)) throw domain_error("ssim: peak must be positive");
  if (x.ndim() != 2 && x.ndim() != 3)
    throw shape_error("ssim: expected an image-shaped tensor");
  const std::size_t h = x.dims()[0];
  const std::size_t w = x.dims()[1];
  const std::size_t ch = x.ndim() == 3 ? x.dims()[2] : 1;
  constexpr std::size_t win = 11;
  if (h < win || w < win)
    throw domain_error("ssim: image smaller than the 11x11 window");

  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  static const std::vector<double> g = detail::ssim_window(win, 1.5);

  const std::size_t oh = h - win + 1, ow = w - win + 1;
  double total = 0.0;

  // Separable weighting: horizontal pass into row buffers, then vertical.
  std::vector<double> bx(h * ow), br(h * ow), bxx(h * ow), brr(h * ow), bxr(h * ow);
  for (std::size_t c = 0; c < ch; ++c) {
    auto at = [&](const Tensor& img, std::size_t i, std::size_t j) {
      return img[(i * w + j) * ch + c];
    };
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double sx = 0, sr = 0, sxx = 0, srr = 0, sxr = 0;
        for (std::size_t k = 0; k < win; ++k) {
          double vx = at(x, i, j + k), vr = at(ref, i, j + k);
          sx += g[k] * vx;
          sr += g[k] * vr;
          sxx += g[k] * vx * vx;
          srr += g[k] * vr * vr;
          sxr += g[k] * vx * vr;
        }
        bx[i * ow + j] = sx;
        br[i * ow + j] = sr;
        bxx[i * ow + j] = sxx;
        brr[i * ow + j] = srr;
        bxr[i * ow + j] = sxr;
      }
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double mx = 0, mr = 0, mxx = 0, mrr = 0, mxr = 0;
        for (std::size_t k = 0; k < win; ++k) {
          mx += g[k] * bx[(i + k) * ow + j];
          mr += g[k] * br[(i + k) * ow + j];
          mxx += g[k] * bxx[(i + k) * ow + j];
          mrr += g[k] * brr[(i + k) * ow + j];
          mxr += g[k] * bxr[(i + k) * ow + j];
        }
        double vx = mxx - mx * mx;
        double vr = mrr - mr * mr;
        double cov = mxr - mx * mr;
        double num = (2.0 * mx * mr + c1) * (2.0 * cov + c2);
        double den = (mx * mx + mr * mr + c1) * (vx + vr + c2);
        total += num / den;
      }
  }
  return total / static_cast<double>(oh * ow * ch);
}

inline MetricReport evaluate(const Tensor& x, const Tensor& ref, double peak = 1.0) {
  return MetricReport{psnr(x, ref, peak), ssim(x, ref, peak)};
}

}  // namespace nrlg
