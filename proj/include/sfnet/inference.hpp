#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sfnet/model.hpp"
#include "sfnet/objectives.hpp"
#include "sfnet/ops.hpp"
#include "sfnet/types.hpp"

namespace sfnet {

enum class ScoreScale { probability, logit };

inline ScoreScale parse_score_scale(std::string_view s) {
  if (s == "probability") return ScoreScale::probability;
  if (s == "logit") return ScoreScale::logit;
  throw ConfigError("unknown score scale '" + std::string(s) + "' (expected probability or logit)");
}

inline std::string_view to_string(ScoreScale s) {
  return s == ScoreScale::probability ? "probability" : "logit";
}

struct InferenceSettings {
  double theta = 0.65;
  double video_threshold = 0.5;
  std::size_t k_ratio = 8;
  std::size_t gap_fill = 0;
  ScoreScale scale = ScoreScale::probability;
  // When false the actionness term is the constant sigmoid(0) = 0.5 (or 0 on
  // the logit scale), for models whose actionness head was never trained.
  bool use_actionness = true;
};

// Softmax of the top-k pooled class encoding per video, [N, Nc+1].
inline Tensor<double> video_class_probabilities(const ScoreMaps<double>& maps,
                                                std::size_t k_ratio) {
  Tape<double> tape;
  const auto ks = pooling_ks(maps.lengths, k_ratio);
  const Var pooled = topk_pool(tape, tape.leaf(maps.classification), maps.lengths, ks);
  return softmax_values(tape.value(pooled));
}

// Action classes whose pooled probability reaches the threshold; the most
// probable action class (lowest index on ties) when none does.
inline std::vector<std::vector<int>> labels_from_probabilities(const Tensor<double>& probs,
                                                               double video_threshold) {
  std::vector<std::vector<int>> out(probs.dim(0));
  const std::size_t classes = probs.dim(1);
  for (std::size_t v = 0; v < probs.dim(0); ++v) {
    std::size_t best = 1;
    for (std::size_t c = 1; c < classes; ++c) {
      if (probs(v, c) >= video_threshold) out[v].push_back(static_cast<int>(c));
      if (probs(v, c) > probs(v, best)) best = c;
    }
    if (out[v].empty()) out[v].push_back(static_cast<int>(best));
  }
  return out;
}

inline std::vector<std::vector<int>> predict_video_labels(const ScoreMaps<double>& maps,
                                                          double video_threshold,
                                                          std::size_t k_ratio = 8) {
  return labels_from_probabilities(video_class_probabilities(maps, k_ratio), video_threshold);
}

// Maximal runs [start, end] of frames in scores[0..length) with value > theta.
// Runs separated by at most `gap_fill` frames are merged.
inline std::vector<std::pair<std::size_t, std::size_t>> find_runs(std::span<const double> scores,
                                                                  double theta,
                                                                  std::size_t gap_fill = 0) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  std::size_t t = 0;
  while (t < scores.size()) {
    if (!(scores[t] > theta)) {
      ++t;
      continue;
    }
    std::size_t end = t;
    while (end + 1 < scores.size() && scores[end + 1] > theta) ++end;
    if (!runs.empty() && t - runs.back().second - 1 <= gap_fill) {
      runs.back().second = end;
    } else {
      runs.emplace_back(t, end);
    }
    t = end + 1;
  }
  return runs;
}

// Per-frame classification and actionness terms of the combined score for
// one (video, class).
struct FrameTerms {
  std::vector<double> classification;
  std::vector<double> actionness;

  double combined(std::size_t t) const { return classification[t] + actionness[t]; }
};

inline FrameTerms frame_terms(const ScoreMaps<double>& maps, const Tensor<double>& frame_probs,
                              std::size_t video, int label, const InferenceSettings& s) {
  const std::size_t len = maps.lengths[video];
  FrameTerms terms;
  terms.classification.resize(len);
  terms.actionness.resize(len);
  const auto c = static_cast<std::size_t>(label);
  for (std::size_t t = 0; t < len; ++t) {
    const double a = maps.actionness(video, t);
    if (s.scale == ScoreScale::probability) {
      terms.classification[t] = frame_probs(video, t, c);
      terms.actionness[t] = s.use_actionness ? detail::stable_sigmoid(a) : 0.5;
    } else {
      terms.classification[t] = maps.classification(video, t, c);
      terms.actionness[t] = s.use_actionness ? a : 0.0;
    }
  }
  return terms;
}

// Segment from a run: confidence is the classification term at the run's
// best-classified frame (earliest on ties) plus the actionness term there.
inline Segment make_segment(const FrameTerms& terms, std::size_t video, int label,
                            std::size_t start, std::size_t end) {
  std::size_t best = start;
  for (std::size_t t = start + 1; t <= end; ++t) {
    if (terms.classification[t] > terms.classification[best]) best = t;
  }
  return Segment{video, start, end, label, terms.combined(best)};
}

// Thresholds the combined score of every predicted class of every video.
inline std::vector<Segment> extract_segments(const ScoreMaps<double>& maps,
                                             const std::vector<std::vector<int>>& labels,
                                             const InferenceSettings& s) {
  const Tensor<double> probs = softmax_values(maps.classification);
  std::vector<Segment> out;
  for (std::size_t v = 0; v < maps.videos(); ++v) {
    for (int label : labels.at(v)) {
      const FrameTerms terms = frame_terms(maps, probs, v, label, s);
      std::vector<double> combined(terms.classification.size());
      for (std::size_t t = 0; t < combined.size(); ++t) combined[t] = terms.combined(t);
      for (auto [start, end] : find_runs(combined, s.theta, s.gap_fill)) {
        out.push_back(make_segment(terms, v, label, start, end));
      }
    }
  }
  return out;
}

// One detection per segment at the frame with the highest combined score
// (earliest on ties), carrying the segment confidence.
inline std::vector<FrameDetection> localize_single_frames(std::span<const Segment> segments,
                                                          const ScoreMaps<double>& maps,
                                                          const InferenceSettings& s) {
  const Tensor<double> probs = softmax_values(maps.classification);
  std::vector<FrameDetection> out;
  out.reserve(segments.size());
  for (const Segment& seg : segments) {
    const FrameTerms terms = frame_terms(maps, probs, seg.video, seg.label, s);
    std::size_t best = seg.start;
    for (std::size_t t = seg.start + 1; t <= seg.end; ++t) {
      if (terms.combined(t) > terms.combined(best)) best = t;
    }
    out.push_back(FrameDetection{seg.video, best, seg.label, seg.confidence});
  }
  return out;
}

struct Predictions {
  Tensor<double> video_probabilities;  // [N, Nc+1]
  std::vector<std::vector<int>> video_labels;
  std::vector<Segment> segments;
  std::vector<FrameDetection> detections;
};

inline Predictions run_inference(const ScoreMaps<double>& maps, const InferenceSettings& s) {
  Predictions p;
  p.video_probabilities = video_class_probabilities(maps, s.k_ratio);
  p.video_labels = labels_from_probabilities(p.video_probabilities, s.video_threshold);
  p.segments = extract_segments(maps, p.video_labels, s);
  p.detections = localize_single_frames(p.segments, maps, s);
  return p;
}

}  // namespace sfnet
