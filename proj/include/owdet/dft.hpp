#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "owdet/error.hpp"

// Self-contained DFT machinery. Radix-2 Cooley-Tukey for power-of-two
// lengths, Bluestein's chirp-z re-expression for everything else, so any
// image height works without padding tricks that would change the spectrum.
// All state is local to the call: safe to use from worker threads.
//
// Conventions: forward is unscaled, inverse carries the full 1/N (or 1/(W*H)
// in 2-D), so inverse(forward(x)) == x.

namespace owdet::dft {

using cplx = std::complex<double>;

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place iterative radix-2. `n` must be a power of two.
inline void fft_pow2(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang =
        (inverse ? 2.0 : -2.0) * std::numbers::pi / static_cast<double>(len);
    const cplx wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const cplx u = a[i + k];
        const cplx v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  // Scaling is applied by the caller; fft_pow2 stays raw so Bluestein can
  // reuse it for its internal convolution.
}

// Bluestein: size-n DFT as a circular convolution at a power-of-two size.
inline void fft_bluestein(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  const std::size_t m = next_pow2(2 * n - 1);
  // chirp[k] = exp(+/- i pi k^2 / n); reduce k^2 mod 2n first, otherwise the
  // angle loses precision for large k.
  std::vector<cplx> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    const unsigned long long k2 =
        (static_cast<unsigned long long>(k) * k) % (2ull * n);
    const double ang = (inverse ? 1.0 : -1.0) * std::numbers::pi *
                       static_cast<double>(k2) / static_cast<double>(n);
    chirp[k] = cplx(std::cos(ang), std::sin(ang));
  }
  std::vector<cplx> fa(m, cplx(0.0, 0.0));
  std::vector<cplx> fb(m, cplx(0.0, 0.0));
  for (std::size_t k = 0; k < n; ++k) fa[k] = a[k] * chirp[k];
  fb[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) {
    fb[k] = std::conj(chirp[k]);
    fb[m - k] = std::conj(chirp[k]);
  }
  fft_pow2(fa, false);
  fft_pow2(fb, false);
  for (std::size_t k = 0; k < m; ++k) fa[k] *= fb[k];
  fft_pow2(fa, true);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = fa[k] * inv_m * chirp[k];
}

}  // namespace detail

// In-place 1-D transform, any length >= 1. Forward is unscaled; inverse
// divides by the length.
inline void fft(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n <= 1) return;
  if (detail::is_pow2(n)) {
    detail::fft_pow2(a, inverse);
  } else {
    detail::fft_bluestein(a, inverse);
  }
  if (inverse) {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& v : a) v *= inv_n;
  }
}

// Row-major 2-D transform of a width x height grid.
inline std::vector<cplx> transform2d(const std::vector<cplx>& in, int width,
                                     int height, bool inverse) {
  if (width <= 0 || height <= 0 ||
      in.size() != static_cast<std::size_t>(width) * height) {
    throw Error(ErrorCode::size_mismatch,
                "2-D DFT input has " + std::to_string(in.size()) +
                    " samples, expected " + std::to_string(width) + "x" +
                    std::to_string(height));
  }
  std::vector<cplx> out = in;
  std::vector<cplx> line;
  line.reserve(static_cast<std::size_t>(std::max(width, height)));
  for (int y = 0; y < height; ++y) {
    line.assign(out.begin() + static_cast<std::size_t>(y) * width,
                out.begin() + static_cast<std::size_t>(y + 1) * width);
    fft(line, inverse);
    std::copy(line.begin(), line.end(),
              out.begin() + static_cast<std::size_t>(y) * width);
  }
  for (int x = 0; x < width; ++x) {
    line.resize(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y)
      line[static_cast<std::size_t>(y)] =
          out[static_cast<std::size_t>(y) * width + x];
    fft(line, inverse);
    for (int y = 0; y < height; ++y)
      out[static_cast<std::size_t>(y) * width + x] =
          line[static_cast<std::size_t>(y)];
  }
  return out;
}

inline std::vector<cplx> forward2d(const std::vector<double>& real, int width,
                                   int height) {
  std::vector<cplx> in(real.size());
  for (std::size_t i = 0; i < real.size(); ++i) in[i] = cplx(real[i], 0.0);
  return transform2d(in, width, height, false);
}

inline std::vector<cplx> forward2d(const std::vector<cplx>& in, int width,
                                   int height) {
  return transform2d(in, width, height, false);
}

inline std::vector<cplx> inverse2d(const std::vector<cplx>& in, int width,
                                   int height) {
  return transform2d(in, width, height, true);
}

}  // namespace owdet::dft
