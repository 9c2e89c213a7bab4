#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace nrlg::detail {

using cplx = std::complex<double>;

inline bool is_pow2(std::size_t n) { return n && (n & (n - 1)) == 0; }

// In-place iterative radix-2 Cooley-Tukey. sign = -1 forward, +1 inverse
// (inverse is unscaled; callers divide by N).
inline void fft_pow2(std::vector<cplx>& a, int sign) {
  const std::size_t n = a.size();
  if (n < 2) return;
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = sign * 2.0 * 3.14159265358979323846 / static_cast<double>(len);
    cplx wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        cplx u = a[i + k];
        cplx v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

// Bluestein chirp-z fallback for arbitrary lengths.
inline void fft_bluestein(std::vector<cplx>& a, int sign) {
  const std::size_t n = a.size();
  std::size_t m = 1;
  while (m < 2 * n + 1) m <<= 1;
  std::vector<cplx> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small for large k.
    std::size_t k2 = (k * k) % (2 * n);
    double ang = sign * 3.14159265358979323846 * static_cast<double>(k2) /
                 static_cast<double>(n);
    chirp[k] = cplx(std::cos(ang), std::sin(ang));
  }
  std::vector<cplx> fa(m, cplx(0, 0)), fb(m, cplx(0, 0));
  for (std::size_t k = 0; k < n; ++k) fa[k] = a[k] * chirp[k];
  fb[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k)
    fb[k] = fb[m - k] = std::conj(chirp[k]);
  fft_pow2(fa, -1);
  fft_pow2(fb, -1);
  for (std::size_t k = 0; k < m; ++k) fa[k] *= fb[k];
  fft_pow2(fa, +1);
  double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = fa[k] * inv_m * chirp[k];
}

inline void fft(std::vector<cplx>& a, int sign) {
  if (is_pow2(a.size()))
    fft_pow2(a, sign);
  else
    fft_bluestein(a, sign);
}

// 2D transform of a row-major h x w grid. Forward is unscaled; inverse
// applies the 1/(h*w) factor so ifft2(fft2(x)) == x.
inline void fft2(std::vector<cplx>& grid, std::size_t h, std::size_t w, int sign) {
  std::vector<cplx> buf(std::max(h, w));
  for (std::size_t r = 0; r < h; ++r) {
    buf.assign(grid.begin() + r * w, grid.begin() + (r + 1) * w);
    buf.resize(w);
    fft(buf, sign);
    std::copy(buf.begin(), buf.end(), grid.begin() + r * w);
  }
  for (std::size_t c = 0; c < w; ++c) {
    buf.resize(h);
    for (std::size_t r = 0; r < h; ++r) buf[r] = grid[r * w + c];
    fft(buf, sign);
    for (std::size_t r = 0; r < h; ++r) grid[r * w + c] = buf[r];
  }
  if (sign > 0) {
    double inv = 1.0 / static_cast<double>(h * w);
    for (auto& v : grid) v *= inv;
  }
}

}  // namespace nrlg::detail
