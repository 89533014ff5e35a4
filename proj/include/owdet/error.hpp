#pragma once

#include <stdexcept>
#include <string>

namespace owdet {

// Error taxonomy shared by the whole library. Callers that want to branch on
// the failure kind catch owdet::Error and switch on code(); everyone else can
// just treat it as a std::runtime_error.
enum class ErrorCode {
  empty_after_clip,        // box clipped against an image leaves no area
  size_mismatch,           // buffer/kernel dimensions disagree with the call
  image_too_small,         // image smaller than the minimum the op supports
  image_id_mismatch,       // paired inputs refer to different images
  unknown_image_id,        // id not present in the manifest
  unknown_source_class,    // class merge references a label that does not exist
  unknown_category,        // category id not present in the manifest
  unknown_task,            // task index outside the schedule
  insufficient_images,     // selection asked for more images than available
  missing_saliency,        // saliency index has no entry for an image
  wrong_split,             // operation requires the other train/val split
  degenerate_denominator,  // a ratio metric has an empty denominator
  parse_error,             // malformed manifest / proposals / label file
  io_error,                // filesystem or codec failure
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::empty_after_clip: return "empty_after_clip";
    case ErrorCode::size_mismatch: return "size_mismatch";
    case ErrorCode::image_too_small: return "image_too_small";
    case ErrorCode::image_id_mismatch: return "image_id_mismatch";
    case ErrorCode::unknown_image_id: return "unknown_image_id";
    case ErrorCode::unknown_source_class: return "unknown_source_class";
    case ErrorCode::unknown_category: return "unknown_category";
    case ErrorCode::unknown_task: return "unknown_task";
    case ErrorCode::insufficient_images: return "insufficient_images";
    case ErrorCode::missing_saliency: return "missing_saliency";
    case ErrorCode::wrong_split: return "wrong_split";
    case ErrorCode::degenerate_denominator: return "degenerate_denominator";
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::io_error: return "io_error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace owdet
