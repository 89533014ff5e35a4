#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "owdet/dft.hpp"
#include "owdet/error.hpp"
#include "owdet/geometry.hpp"
#include "owdet/image.hpp"

namespace owdet {

// Spectral-residual parameters. The method works at a fixed small width;
// postblur_sigma is measured in working-scale pixels.
struct SpectralConfig {
  int working_width = 64;
  double log_epsilon = 1e-8;
  int smooth_kernel = 3;
  double postblur_sigma = 2.5;
};

namespace detail {

inline void validate(const SpectralConfig& cfg) {
  if (cfg.working_width < 8) {
    throw Error(ErrorCode::size_mismatch,
                "working_width must be >= 8, got " +
                    std::to_string(cfg.working_width));
  }
  if (cfg.smooth_kernel < 1 || cfg.smooth_kernel % 2 == 0) {
    throw Error(ErrorCode::size_mismatch,
                "smooth_kernel must be odd, got " +
                    std::to_string(cfg.smooth_kernel));
  }
  if (cfg.log_epsilon <= 0.0) {
    throw Error(ErrorCode::size_mismatch, "log_epsilon must be positive");
  }
}

// Full pipeline on a grayscale plane; output is normalized to [0,1] at the
// plane's original size. Factored out so whole-image and per-region paths
// share one implementation.
inline Plane spectral_pipeline(const Plane& gray, const SpectralConfig& cfg) {
  const int ww = cfg.working_width;
  const int wh = std::max(
      1, static_cast<int>(std::lround(
             static_cast<double>(gray.height) * ww / gray.width)));
  const Plane work = resize_bilinear(gray, ww, wh);

  // A constant working image carries no structure, but the raw pipeline
  // still emits numerical dust (frequencies with zero amplitude come back as
  // exp(residual) ~ 1) that normalization would amplify to full scale. Short
  // circuit instead.
  const auto [lo, hi] = std::minmax_element(work.data.begin(), work.data.end());
  if (*hi - *lo <= 1e-12) return Plane(gray.width, gray.height, 0.0);

  const auto spectrum = dft::forward2d(work.data, ww, wh);
  Plane log_amp(ww, wh);
  std::vector<double> phase(spectrum.size());
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    log_amp.data[i] = std::log(std::abs(spectrum[i]) + cfg.log_epsilon);
    phase[i] = std::arg(spectrum[i]);
  }
  const Plane smooth = box_filter_replicate(log_amp, cfg.smooth_kernel);

  std::vector<dft::cplx> recon(spectrum.size());
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    const double residual = log_amp.data[i] - smooth.data[i];
    recon[i] = std::polar(std::exp(residual), phase[i]);
  }
  const auto spatial = dft::inverse2d(recon, ww, wh);
  Plane energy(ww, wh);
  for (std::size_t i = 0; i < spatial.size(); ++i) {
    energy.data[i] = std::norm(spatial[i]);
  }
  const Plane blurred = gaussian_blur_replicate(energy, cfg.postblur_sigma);
  const Plane full = resize_bilinear(blurred, gray.width, gray.height);
  return normalize01(full);
}

}  // namespace detail

// Whole-image spectral-residual saliency. 3-channel input is converted to
// luma first. Output is min-max normalized; a structureless input yields an
// all-zero map.
inline SaliencyMap spectral_residual(const ImageBuffer& img,
                                     const SpectralConfig& cfg = {}) {
  detail::validate(cfg);
  if (std::min(img.width, img.height) < 8) {
    throw Error(ErrorCode::image_too_small,
                std::to_string(img.width) + "x" + std::to_string(img.height) +
                    " below the 8-pixel minimum");
  }
  return detail::spectral_pipeline(to_gray(img), cfg);
}

// Saliency restricted to box regions: zero outside the union of regions;
// inside each region the map equals the pipeline run on that region's crop.
// Overlaps combine by pointwise max. Regions smaller than 8x8 are processed
// on a centered 8x8 (or larger) window but written back only inside the
// region itself.
inline SaliencyMap region_saliency(const ImageBuffer& img,
                                   const std::vector<Box>& regions,
                                   const SpectralConfig& cfg = {}) {
  detail::validate(cfg);
  if (std::min(img.width, img.height) < 8) {
    throw Error(ErrorCode::image_too_small,
                std::to_string(img.width) + "x" + std::to_string(img.height) +
                    " below the 8-pixel minimum");
  }
  SaliencyMap out(img.width, img.height, 0.0);
  if (regions.empty()) return out;

  const Plane gray = to_gray(img);
  for (const Box& region : regions) {
    const Box clipped = clip_box(region, img.width, img.height);
    // Integer pixel window covering the region.
    int x0 = static_cast<int>(std::floor(clipped.x_min));
    int y0 = static_cast<int>(std::floor(clipped.y_min));
    int x1 = std::min(img.width, static_cast<int>(std::ceil(clipped.x_max())));
    int y1 = std::min(img.height, static_cast<int>(std::ceil(clipped.y_max())));
    const int rw = std::max(1, x1 - x0);
    const int rh = std::max(1, y1 - y0);
    // Pad small windows to 8x8, keeping them centered and inside the frame.
    const int cw = std::min(img.width, std::max(rw, 8));
    const int ch = std::min(img.height, std::max(rh, 8));
    int cx0 = std::clamp(x0 - (cw - rw) / 2, 0, img.width - cw);
    int cy0 = std::clamp(y0 - (ch - rh) / 2, 0, img.height - ch);

    const Plane window = crop(gray, cx0, cy0, cw, ch);
    const Plane local = detail::spectral_pipeline(window, cfg);
    for (int y = y0; y < y0 + rh && y < img.height; ++y) {
      for (int x = x0; x < x0 + rw && x < img.width; ++x) {
        const double v = local.at(x - cx0, y - cy0);
        out.at(x, y) = std::max(out.at(x, y), v);
      }
    }
  }
  return normalize01(out);
}

}  // namespace owdet
