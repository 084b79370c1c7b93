#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sfnet/error.hpp"
#include "sfnet/tensor.hpp"
#include "sfnet/types.hpp"

namespace sfnet {

// Read-only row-major [frames, classes] view of per-frame class scores.
struct ScoreMatrix {
  std::span<const double> data;
  std::size_t frames = 0;
  std::size_t classes = 0;

  double operator()(std::size_t frame, std::size_t cls) const {
    return data[frame * classes + cls];
  }

  // Predicted class; lowest index among ties.
  std::size_t argmax(std::size_t frame) const {
    const double* row = data.data() + frame * classes;
    return static_cast<std::size_t>(std::max_element(row, row + classes) - row);
  }
};

// Scores of the first `frames` frames of video v in a [N,T,C] tensor.
inline ScoreMatrix video_scores(const Tensor<double>& scores, std::size_t v, std::size_t frames) {
  const std::size_t stride = scores.dim(1) * scores.dim(2);
  return ScoreMatrix{std::span<const double>(scores.raw() + v * stride, frames * scores.dim(2)),
                     frames, scores.dim(2)};
}

struct ExpansionOptions {
  std::size_t radius = 5;
  double xi = 0.9;
  // false scans all r frames per direction instead of stopping at the first
  // rejected frame (ablation only).
  bool stop_on_failure = true;
};

// Frames around an anchor that share its predicted label and keep at least
// xi of the anchor's score for `label`. Neighbour indices used by the label
// consistency test are clamped to [0, frames-1]. Returns ascending frames,
// anchor excluded.
inline std::vector<std::size_t> expand_anchor(const ScoreMatrix& scores, std::size_t anchor,
                                              int label, const ExpansionOptions& opt) {
  if (anchor >= scores.frames) {
    throw ArgumentError("expand_anchor: anchor frame " + std::to_string(anchor) +
                        " outside a video of " + std::to_string(scores.frames) + " frames");
  }
  if (label < 0 || static_cast<std::size_t>(label) >= scores.classes) {
    throw ArgumentError("expand_anchor: label " + std::to_string(label) + " out of range");
  }
  if (!(opt.xi > 0.0 && opt.xi <= 1.0)) {
    throw ArgumentError("expand_anchor: xi must lie in (0, 1]");
  }
  const auto y = static_cast<std::size_t>(label);
  const auto last = static_cast<std::ptrdiff_t>(scores.frames) - 1;
  const auto a = static_cast<std::ptrdiff_t>(anchor);
  auto clamp = [last](std::ptrdiff_t f) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(f, 0, last));
  };
  const double floor_score = opt.xi * scores(anchor, y);

  std::vector<std::size_t> out;
  for (const std::ptrdiff_t dir : {-1, 1}) {
    for (std::size_t j = 1; j <= opt.radius; ++j) {
      const std::ptrdiff_t f = a + dir * static_cast<std::ptrdiff_t>(j);
      if (f < 0 || f > last) break;
      const std::size_t here = scores.argmax(static_cast<std::size_t>(f));
      const bool consistent = scores.argmax(clamp(f - 1)) == here &&
                              scores.argmax(clamp(f + 1)) == here;
      if (consistent && scores(static_cast<std::size_t>(f), y) >= floor_score) {
        out.push_back(static_cast<std::size_t>(f));
      } else if (opt.stop_on_failure) {
        break;
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct FrameRef {
  std::size_t video = 0;
  std::size_t frame = 0;
  friend auto operator<=>(const FrameRef&, const FrameRef&) = default;
};

enum class FrameOrigin { anchor, expanded };

struct ActionFrame {
  std::size_t video = 0;
  std::size_t frame = 0;
  int label = 1;
  FrameOrigin origin = FrameOrigin::anchor;
  friend bool operator==(const ActionFrame&, const ActionFrame&) = default;
};

struct PseudoLabelSet {
  std::vector<ActionFrame> action_frames;
  std::vector<FrameRef> background_frames;
};

// floor(eta * labeled) with a small guard against representation error
// (0.29 * 100 must give 29).
inline std::size_t background_quota(double eta, std::size_t labeled) {
  if (eta <= 0.0) return 0;
  return static_cast<std::size_t>(std::floor(eta * static_cast<double>(labeled) + 1e-9));
}

// The floor(eta*K) unlabeled valid frames of the whole batch with the largest
// background-class score (class 0). Ties: score descending, then (video,
// frame) ascending. `scores` is [N,T,C].
inline std::vector<FrameRef> mine_background(const Tensor<double>& scores,
                                             std::span<const std::size_t> lengths,
                                             const std::set<FrameRef>& labeled, double eta,
                                             std::size_t labeled_count) {
  const std::size_t quota = background_quota(eta, labeled_count);
  if (quota == 0) return {};
  const std::size_t frames = scores.dim(1);
  struct Candidate {
    double score;
    FrameRef ref;
  };
  std::vector<Candidate> pool;
  for (std::size_t v = 0; v < lengths.size(); ++v) {
    for (std::size_t f = 0; f < std::min(lengths[v], frames); ++f) {
      const FrameRef ref{v, f};
      if (labeled.contains(ref)) continue;
      pool.push_back({scores(v, f, 0), ref});
    }
  }
  const std::size_t take = std::min(quota, pool.size());
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take), pool.end(),
                    [](const Candidate& a, const Candidate& b) {
                      return a.score > b.score || (a.score == b.score && a.ref < b.ref);
                    });
  std::vector<FrameRef> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(pool[i].ref);
  return out;
}

struct MiningOptions {
  bool use_expansion = true;
  bool use_background = true;
  double eta = 5.0;
  ExpansionOptions expansion;
};

// Anchors, expanded action frames and mined background frames for a batch.
// `scores` holds per-frame class probabilities [N,T,C]. A frame claimed by an
// earlier anchor or expansion is not claimed again.
inline PseudoLabelSet build_pseudo_labels(const Tensor<double>& scores,
                                          std::span<const std::size_t> lengths,
                                          std::span<const FrameAnnotation> anchors,
                                          const MiningOptions& opt) {
  PseudoLabelSet out;
  std::set<FrameRef> taken;
  for (const FrameAnnotation& a : anchors) {
    if (a.video >= lengths.size() || a.frame >= lengths[a.video]) {
      throw ArgumentError("annotation at video " + std::to_string(a.video) + " frame " +
                          std::to_string(a.frame) + " lies outside the batch");
    }
    if (taken.insert({a.video, a.frame}).second) {
      out.action_frames.push_back({a.video, a.frame, a.label, FrameOrigin::anchor});
    }
  }
  if (opt.use_expansion) {
    for (const FrameAnnotation& a : anchors) {
      const ScoreMatrix view = video_scores(scores, a.video, lengths[a.video]);
      for (std::size_t f : expand_anchor(view, a.frame, a.label, opt.expansion)) {
        if (taken.insert({a.video, f}).second) {
          out.action_frames.push_back({a.video, f, a.label, FrameOrigin::expanded});
        }
      }
    }
  }
  if (opt.use_background) {
    out.background_frames =
        mine_background(scores, lengths, taken, opt.eta, out.action_frames.size());
  }
  return out;
}

enum class AnnotationStrategy { uniform, gaussian_mid, human_like };

inline std::string_view to_string(AnnotationStrategy s) {
  switch (s) {
    case AnnotationStrategy::uniform: return "uniform";
    case AnnotationStrategy::gaussian_mid: return "gaussian_mid";
    case AnnotationStrategy::human_like: return "human_like";
  }
  return "?";
}

inline AnnotationStrategy parse_strategy(std::string_view name) {
  for (auto s : {AnnotationStrategy::uniform, AnnotationStrategy::gaussian_mid,
                 AnnotationStrategy::human_like}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown annotation strategy '" + std::string(name) +
                    "' (expected uniform, gaussian_mid or human_like)");
}

inline constexpr AnnotationStrategy kAllStrategies[] = {
    AnnotationStrategy::uniform, AnnotationStrategy::gaussian_mid, AnnotationStrategy::human_like};

// Draws one frame inside a single segment.
template <class Rng>
std::size_t sample_annotation_frame(const Segment& seg, AnnotationStrategy strategy, Rng& rng) {
  if (seg.end < seg.start) {
    throw ArgumentError("simulate_annotations: empty segment [" + std::to_string(seg.start) +
                        "," + std::to_string(seg.end) + "]");
  }
  const double len = static_cast<double>(seg.length());
  switch (strategy) {
    case AnnotationStrategy::uniform: {
      std::uniform_int_distribution<std::size_t> dist(seg.start, seg.end);
      return dist(rng);
    }
    case AnnotationStrategy::gaussian_mid: {
      const double mid = 0.5 * static_cast<double>(seg.start + seg.end);
      std::normal_distribution<double> dist(mid, len / 6.0);
      for (;;) {
        const double f = std::round(dist(rng));
        if (f >= static_cast<double>(seg.start) && f <= static_cast<double>(seg.end)) {
          return static_cast<std::size_t>(f);
        }
      }
    }
    case AnnotationStrategy::human_like: {
      // Beta(4,4) is the 4th smallest of 7 uniforms.
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      double u[7];
      for (double& x : u) x = unit(rng);
      std::nth_element(u, u + 3, u + 7);
      const auto offset = static_cast<std::size_t>(std::floor(u[3] * len));
      return std::min(seg.start + offset, seg.end);
    }
  }
  throw ArgumentError("unknown annotation strategy");
}

// Exactly one annotation per ground-truth segment, in segment order.
inline std::vector<FrameAnnotation> simulate_annotations(std::span<const Segment> segments,
                                                         AnnotationStrategy strategy,
                                                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<FrameAnnotation> out;
  out.reserve(segments.size());
  for (const Segment& s : segments) {
    out.push_back({s.video, sample_annotation_frame(s, strategy, rng), s.label});
  }
  return out;
}

}  // namespace sfnet
