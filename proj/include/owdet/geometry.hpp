#pragma once

#include <algorithm>
#include <cstdint>
#include <string>

#include "owdet/error.hpp"

namespace owdet {

// Axis-aligned box, top-left origin, real-valued coordinates. Valid boxes
// have positive width and height; zero-area boxes are rejected at parse time
// rather than repaired, so the arithmetic here never has to guess.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double width = 0.0;
  double height = 0.0;

  double x_max() const { return x_min + width; }
  double y_max() const { return y_min + height; }
  double area() const { return width > 0.0 && height > 0.0 ? width * height : 0.0; }

  bool operator==(const Box&) const = default;
};

// Ground-truth label. image_id and category must resolve in the owning
// manifest; instance_id is unique per manifest.
struct Annotation {
  std::string image_id;
  Box box;
  int category = 0;
  std::int64_t instance_id = 0;

  bool operator==(const Annotation&) const = default;
};

// Scored model output. category refers to the manifest's category table.
struct Detection {
  std::string image_id;
  Box box;
  int category = 0;
  double score = 0.0;

  bool operator==(const Detection&) const = default;
};

// Intersection over union. Degenerate pairs (zero union) score 0: a zero-area
// box can never match anything.
inline double iou(const Box& a, const Box& b) {
  const double ix1 = std::max(a.x_min, b.x_min);
  const double iy1 = std::max(a.y_min, b.y_min);
  const double ix2 = std::min(a.x_max(), b.x_max());
  const double iy2 = std::min(a.y_max(), b.y_max());
  const double iw = ix2 - ix1;
  const double ih = iy2 - iy1;
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

enum class SizeBucket { small, medium, large };

inline const char* to_string(SizeBucket b) {
  switch (b) {
    case SizeBucket::small: return "small";
    case SizeBucket::medium: return "medium";
    case SizeBucket::large: return "large";
  }
  return "unknown";
}

// COCO-style area buckets. Both edges (32*32 = 1024 and 96*96 = 9216) land
// in medium.
inline SizeBucket classify_size(double area) {
  if (area < 1024.0) return SizeBucket::small;
  if (area <= 9216.0) return SizeBucket::medium;
  return SizeBucket::large;
}

inline SizeBucket classify_size(const Box& b) { return classify_size(b.area()); }

// Clips a box to the image rectangle [0, image_w] x [0, image_h]. Throws
// empty_after_clip when the intersection has no area; callers decide whether
// that is fatal or a cue to drop the box.
inline Box clip_box(const Box& b, double image_w, double image_h) {
  const double x1 = std::clamp(b.x_min, 0.0, image_w);
  const double y1 = std::clamp(b.y_min, 0.0, image_h);
  const double x2 = std::clamp(b.x_max(), 0.0, image_w);
  const double y2 = std::clamp(b.y_max(), 0.0, image_h);
  if (x2 - x1 <= 0.0 || y2 - y1 <= 0.0) {
    throw Error(ErrorCode::empty_after_clip,
                "box [" + std::to_string(b.x_min) + ", " +
                    std::to_string(b.y_min) + ", " + std::to_string(b.width) +
                    ", " + std::to_string(b.height) + "] has no area inside " +
                    std::to_string(image_w) + "x" + std::to_string(image_h));
  }
  return Box{x1, y1, x2 - x1, y2 - y1};
}

}  // namespace owdet
