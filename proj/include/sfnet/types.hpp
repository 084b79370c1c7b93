#pragma once

#include <cstddef>

namespace sfnet {

// Temporal segment over inclusive frame indices. Used for both ground truth
// (confidence ignored) and predictions. `video` indexes the owning corpus or
// batch; `label` is an action class in 1..Nc.
struct Segment {
  std::size_t video = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  int label = 1;
  double confidence = 0.0;

  std::size_t length() const { return end - start + 1; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

// Single-frame localization of one detected action instance.
struct FrameDetection {
  std::size_t video = 0;
  std::size_t frame = 0;
  int label = 1;
  double confidence = 0.0;

  friend bool operator==(const FrameDetection&, const FrameDetection&) = default;
};

// One annotated frame per action instance; label is never background.
struct FrameAnnotation {
  std::size_t video = 0;
  std::size_t frame = 0;
  int label = 1;

  friend bool operator==(const FrameAnnotation&, const FrameAnnotation&) = default;
  friend auto operator<=>(const FrameAnnotation&, const FrameAnnotation&) = default;
};

}  // namespace sfnet
