#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "owdet/error.hpp"

namespace owdet {

// Single-channel raster of doubles, row-major. Intermediate pipeline stages
// use arbitrary value ranges; SaliencyMap is the same layout with the extra
// promise (kept by the producing functions) that values lie in [0,1].
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(int w, int h, double fill = 0.0)
      : width(w), height(h),
        data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  double& at(int x, int y) {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  double at(int x, int y) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
};

using SaliencyMap = Plane;

// Interleaved H x W x C raster, C = 1 or 3, intensities in [0,1].
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> data;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  double& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

// Rec.601 luma for 3-channel input; 1-channel input copies through.
inline Plane to_gray(const ImageBuffer& img) {
  Plane out(img.width, img.height);
  if (img.channels == 1) {
    out.data = img.data;
    return out;
  }
  if (img.channels != 3) {
    throw Error(ErrorCode::size_mismatch,
                "expected 1 or 3 channels, got " + std::to_string(img.channels));
  }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.at(x, y) = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) +
                     0.114 * img.at(x, y, 2);
  return out;
}

// Bilinear resize with half-pixel centers (align_corners=false convention):
// source coordinate = (dst + 0.5) * scale - 0.5, clamped. Same-size calls are
// exact identity.
inline Plane resize_bilinear(const Plane& in, int out_w, int out_h) {
  if (out_w <= 0 || out_h <= 0 || in.width <= 0 || in.height <= 0) {
    throw Error(ErrorCode::size_mismatch, "resize to/from empty plane");
  }
  Plane out(out_w, out_h);
  const double sx = static_cast<double>(in.width) / out_w;
  const double sy = static_cast<double>(in.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(in.height - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, in.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(in.width - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, in.width - 1);
      const double wx = fx - x0;
      const double top = in.at(x0, y0) * (1.0 - wx) + in.at(x1, y0) * wx;
      const double bot = in.at(x0, y1) * (1.0 - wx) + in.at(x1, y1) * wx;
      out.at(x, y) = top * (1.0 - wy) + bot * wy;
    }
  }
  return out;
}

namespace detail {

inline int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

// Separable kernel pass with replicate boundary; taps is any odd-length
// normalized (or not) kernel.
inline Plane separable_pass(const Plane& in, const std::vector<double>& taps,
                            bool horizontal) {
  const int r = static_cast<int>(taps.size()) / 2;
  Plane out(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int sx = horizontal ? clamp_index(x + k, in.width) : x;
        const int sy = horizontal ? y : clamp_index(y + k, in.height);
        acc += taps[static_cast<std::size_t>(k + r)] * in.at(sx, sy);
      }
      out.at(x, y) = acc;
    }
  }
  return out;
}

}  // namespace detail

// k x k mean filter, replicate boundary. k must be odd.
inline Plane box_filter_replicate(const Plane& in, int k) {
  if (k < 1 || k % 2 == 0) {
    throw Error(ErrorCode::size_mismatch,
                "box filter size must be odd, got " + std::to_string(k));
  }
  std::vector<double> taps(static_cast<std::size_t>(k), 1.0 / k);
  return detail::separable_pass(detail::separable_pass(in, taps, true), taps,
                                false);
}

// Gaussian blur, radius = max(1, round(3 sigma)), taps normalized to sum 1,
// replicate boundary. sigma <= 0 is a no-op copy.
inline Plane gaussian_blur_replicate(const Plane& in, double sigma) {
  if (sigma <= 0.0) return in;
  const int r = std::max(1, static_cast<int>(std::lround(3.0 * sigma)));
  std::vector<double> taps(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (int k = -r; k <= r; ++k) {
    const double v = std::exp(-(static_cast<double>(k) * k) / (2.0 * sigma * sigma));
    taps[static_cast<std::size_t>(k + r)] = v;
    sum += v;
  }
  for (auto& t : taps) t /= sum;
  return detail::separable_pass(detail::separable_pass(in, taps, true), taps,
                                false);
}

// Min-max rescale to [0,1]. A plane whose values are all exactly equal maps
// to all zeros; saliency pipelines rely on this to silence degenerate inputs
// instead of amplifying numerical dust.
inline Plane normalize01(const Plane& in) {
  Plane out = in;
  if (in.data.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(in.data.begin(), in.data.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi == lo) {
    std::fill(out.data.begin(), out.data.end(), 0.0);
    return out;
  }
  const double inv = 1.0 / (hi - lo);
  for (auto& v : out.data) v = (v - lo) * inv;
  return out;
}

inline Plane crop(const Plane& in, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > in.width ||
      y0 + h > in.height) {
    throw Error(ErrorCode::size_mismatch,
                "crop " + std::to_string(w) + "x" + std::to_string(h) + "+" +
                    std::to_string(x0) + "+" + std::to_string(y0) +
                    " outside plane " + std::to_string(in.width) + "x" +
                    std::to_string(in.height));
  }
  Plane out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(x, y) = in.at(x0 + x, y0 + y);
  return out;
}

// 2-D cross-correlation with zero padding, output size = input size. The
// kernel is NOT flipped (this is correlation, not convolution). Kernel rows
// must be equal length and odd-dimensioned.
inline Plane cross_correlate_zero(const Plane& in,
                                  const std::vector<std::vector<double>>& kernel) {
  const int kh = static_cast<int>(kernel.size());
  if (kh == 0 || kh % 2 == 0) {
    throw Error(ErrorCode::size_mismatch, "kernel height must be odd");
  }
  const int kw = static_cast<int>(kernel[0].size());
  if (kw == 0 || kw % 2 == 0) {
    throw Error(ErrorCode::size_mismatch, "kernel width must be odd");
  }
  for (const auto& row : kernel) {
    if (static_cast<int>(row.size()) != kw) {
      throw Error(ErrorCode::size_mismatch, "ragged kernel rows");
    }
  }
  const int ry = kh / 2;
  const int rx = kw / 2;
  Plane out(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      double acc = 0.0;
      for (int ky = -ry; ky <= ry; ++ky) {
        const int sy = y + ky;
        if (sy < 0 || sy >= in.height) continue;
        for (int kx = -rx; kx <= rx; ++kx) {
          const int sx = x + kx;
          if (sx < 0 || sx >= in.width) continue;
          acc += kernel[static_cast<std::size_t>(ky + ry)]
                       [static_cast<std::size_t>(kx + rx)] *
                 in.at(sx, sy);
        }
      }
      out.at(x, y) = acc;
    }
  }
  return out;
}

}  // namespace owdet
