#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "owdet/error.hpp"
#include "owdet/image.hpp"

namespace owdet {

// Weights of the two-stage saliency merge:
//   I_S = clamp(I + b3 + w3 x (b1 + w1 x S), 0, 1)
// where x is zero-padded 2-D cross-correlation. With no detector training in
// the loop, the weights are plain data: defaulted or loaded from JSON.
struct FusionWeights {
  // gamma is declared first on purpose: the default w1 is the 1x1 kernel
  // [gamma], so its initializer may reference it.
  double gamma = 0.5;
  std::vector<std::vector<double>> w1{{gamma}};
  double b1 = 0.0;
  std::array<std::vector<std::vector<double>>, 3> w3{
      std::vector<std::vector<double>>{{1.0}},
      std::vector<std::vector<double>>{{1.0}},
      std::vector<std::vector<double>>{{1.0}}};
  std::array<double, 3> b3{0.0, 0.0, 0.0};
};

inline void to_json(nlohmann::json& j, const FusionWeights& w) {
  j = nlohmann::json{{"w1", w.w1},
                     {"b1", w.b1},
                     {"w3", std::vector<std::vector<std::vector<double>>>(
                                w.w3.begin(), w.w3.end())},
                     {"b3", std::vector<double>(w.b3.begin(), w.b3.end())},
                     {"gamma", w.gamma}};
}

inline void from_json(const nlohmann::json& j, FusionWeights& w) {
  w.gamma = j.value("gamma", 0.5);
  w.b1 = j.value("b1", 0.0);
  if (j.contains("w1")) {
    w.w1 = j.at("w1").get<std::vector<std::vector<double>>>();
  } else {
    w.w1 = {{w.gamma}};
  }
  if (j.contains("w3")) {
    const auto k = j.at("w3").get<std::vector<std::vector<std::vector<double>>>>();
    if (k.size() != 3) {
      throw Error(ErrorCode::parse_error, "w3 must hold exactly 3 kernels");
    }
    for (std::size_t c = 0; c < 3; ++c) w.w3[c] = k[c];
  } else {
    for (auto& k : w.w3) k = {{1.0}};
  }
  if (j.contains("b3")) {
    const auto b = j.at("b3").get<std::vector<double>>();
    if (b.size() != 3) {
      throw Error(ErrorCode::parse_error, "b3 must hold exactly 3 biases");
    }
    for (std::size_t c = 0; c < 3; ++c) w.b3[c] = b[c];
  } else {
    w.b3 = {0.0, 0.0, 0.0};
  }
}

inline FusionWeights load_fusion_weights(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::io_error, "cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
    return j.get<FusionWeights>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, path + ": " + e.what());
  }
}

// Lifts a 1-channel map into 3 channels: channel c = w3[c] x (b1 + w1 x s)
// + b3[c]. The result is an intermediate and is deliberately not clamped.
inline ImageBuffer expand_channels(const SaliencyMap& s, const FusionWeights& w = {}) {
  Plane inner = cross_correlate_zero(s, w.w1);
  if (w.b1 != 0.0) {
    for (auto& v : inner.data) v += w.b1;
  }
  ImageBuffer out(s.width, s.height, 3);
  for (int c = 0; c < 3; ++c) {
    const Plane ch = cross_correlate_zero(inner, w.w3[static_cast<std::size_t>(c)]);
    const double bias = w.b3[static_cast<std::size_t>(c)];
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) out.at(x, y, c) = ch.at(x, y) + bias;
  }
  return out;
}

// I_S = clamp(I + expand_channels(s, w), 0, 1). The zero-padding and zero
// default biases make merge(img, all-zero map) an exact identity.
inline ImageBuffer merge(const ImageBuffer& img, const SaliencyMap& s,
                         const FusionWeights& w = {}) {
  if (img.channels != 3) {
    throw Error(ErrorCode::size_mismatch,
                "merge expects a 3-channel image, got " +
                    std::to_string(img.channels) + " channels");
  }
  if (img.width != s.width || img.height != s.height) {
    throw Error(ErrorCode::size_mismatch,
                "image " + std::to_string(img.width) + "x" +
                    std::to_string(img.height) + " vs saliency " +
                    std::to_string(s.width) + "x" + std::to_string(s.height));
  }
  const ImageBuffer lifted = expand_channels(s, w);
  ImageBuffer out = img;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = std::clamp(out.data[i] + lifted.data[i], 0.0, 1.0);
  }
  return out;
}

}  // namespace owdet
