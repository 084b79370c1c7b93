#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sfnet/ops.hpp"
#include "sfnet/pseudo_labeling.hpp"
#include "sfnet/tape.hpp"
#include "sfnet/tensor.hpp"
#include "sfnet/types.hpp"

namespace sfnet {

struct LossBreakdown {
  double frame_labeled = 0.0;
  double frame_background = 0.0;
  double frame_total = 0.0;
  double actionness = 0.0;
  double video = 0.0;
  double total = 0.0;
};

// labeled + background / Nc
inline double frame_loss_total(double labeled, double background, std::size_t num_classes) {
  return labeled + background / static_cast<double>(num_classes);
}

// Composes the breakdown with the same floating-point operation order as the
// tape objective.
inline LossBreakdown total_loss(double frame_labeled, double frame_background, double actionness,
                                double video, std::size_t num_classes, double alpha,
                                double beta) {
  LossBreakdown b;
  b.frame_labeled = frame_labeled;
  b.frame_background = frame_background;
  b.frame_total = frame_loss_total(frame_labeled, frame_background, num_classes);
  b.actionness = actionness;
  b.video = video;
  b.total = (b.frame_total + alpha * video) + beta * actionness;
  return b;
}

// Video-level top-k pooling size: max(1, floor(length / k_ratio)).
inline std::size_t pooling_k(std::size_t length, std::size_t k_ratio) {
  return std::max<std::size_t>(1, length / std::max<std::size_t>(1, k_ratio));
}

inline std::vector<std::size_t> pooling_ks(std::span<const std::size_t> lengths,
                                           std::size_t k_ratio) {
  std::vector<std::size_t> ks;
  for (std::size_t len : lengths) ks.push_back(pooling_k(len, k_ratio));
  return ks;
}

// Per-video target distribution over Nc+1 classes from anchor labels; rows of
// videos without annotations are all zero.
inline Tensor<double> video_targets(std::span<const FrameAnnotation> anchors, std::size_t videos,
                                    std::size_t score_classes) {
  Tensor<double> q(Shape{videos, score_classes});
  std::vector<double> counts(videos, 0.0);
  for (const FrameAnnotation& a : anchors) {
    q(a.video, static_cast<std::size_t>(a.label)) += 1.0;
    counts[a.video] += 1.0;
  }
  for (std::size_t v = 0; v < videos; ++v) {
    if (counts[v] == 0.0) continue;
    for (std::size_t c = 0; c < score_classes; ++c) q(v, c) /= counts[v];
  }
  return q;
}

struct ObjectiveSettings {
  double alpha = 1.0;
  double beta = 1.0;
  std::size_t k_ratio = 8;
  bool use_frame_labeled = true;
  bool use_frame_background = true;
  bool use_actionness = true;
  bool use_video = true;
  // Expanded frames count as actionness positives alongside anchors.
  bool expanded_actionness = true;
};

struct ObjectiveVars {
  Var frame_labeled, frame_background, frame_total, actionness, video, total;
  LossBreakdown values;
  std::vector<std::string> warnings;
};

namespace detail {

template <class S>
Var zero_scalar(Tape<S>& tape) {
  return tape.leaf(Tensor<S>::scalar(S{0}), false);
}

// -(1/n) * sum of the selected entries of x; zero when nothing is selected.
template <class S>
Var negative_mean_of(Tape<S>& tape, Var x, std::vector<std::size_t> indices) {
  if (indices.empty()) return zero_scalar(tape);
  const std::size_t n = indices.size();
  const Var picked = gather(tape, x, std::move(indices));
  return weighted_sum(tape, picked, Tensor<S>(Shape{n}, S{-1} / static_cast<S>(n)));
}

inline void require_valid(std::span<const std::size_t> lengths, std::size_t video,
                          std::size_t frame, const char* what) {
  if (video >= lengths.size() || frame >= lengths[video]) {
    throw ArgumentError(std::string(what) + " at video " + std::to_string(video) + " frame " +
                        std::to_string(frame) + " is not a valid frame");
  }
}

}  // namespace detail

// -(1/K) sum log softmax(C)[y] over the action frames (anchors + expanded).
template <class S>
Var frame_loss_labeled(Tape<S>& tape, Var log_probs, std::span<const std::size_t> lengths,
                       std::span<const ActionFrame> frames) {
  const Shape& shape = tape.value(log_probs).shape();
  std::vector<std::size_t> idx;
  for (const ActionFrame& f : frames) {
    detail::require_valid(lengths, f.video, f.frame, "labeled frame");
    idx.push_back((f.video * shape[1] + f.frame) * shape[2] + static_cast<std::size_t>(f.label));
  }
  return detail::negative_mean_of(tape, log_probs, std::move(idx));
}

// -(1/M) sum log softmax(C)[0] over the M mined background frames.
template <class S>
Var frame_loss_background(Tape<S>& tape, Var log_probs, std::span<const std::size_t> lengths,
                          std::span<const FrameRef> frames) {
  const Shape& shape = tape.value(log_probs).shape();
  std::vector<std::size_t> idx;
  for (const FrameRef& f : frames) {
    detail::require_valid(lengths, f.video, f.frame, "background frame");
    idx.push_back((f.video * shape[1] + f.frame) * shape[2]);
  }
  return detail::negative_mean_of(tape, log_probs, std::move(idx));
}

// -(1/K) sum log sigmoid(A_l) - (1/M) sum log(1 - sigmoid(A_b)).
template <class S>
Var actionness_loss(Tape<S>& tape, Var actionness, std::span<const std::size_t> lengths,
                    std::span<const ActionFrame> positives, std::span<const FrameRef> negatives) {
  const std::size_t frames = tape.value(actionness).dim(1);
  std::vector<std::size_t> pos, neg;
  for (const ActionFrame& f : positives) {
    detail::require_valid(lengths, f.video, f.frame, "actionness positive");
    pos.push_back(f.video * frames + f.frame);
  }
  for (const FrameRef& f : negatives) {
    detail::require_valid(lengths, f.video, f.frame, "actionness negative");
    neg.push_back(f.video * frames + f.frame);
  }
  const Var pos_term = pos.empty() ? detail::zero_scalar(tape)
                                   : detail::negative_mean_of(
                                         tape, log_sigmoid(tape, actionness), std::move(pos));
  const Var neg_term =
      neg.empty() ? detail::zero_scalar(tape)
                  : detail::negative_mean_of(
                        tape, log_sigmoid(tape, scale(tape, actionness, S{-1})), std::move(neg));
  return add(tape, pos_term, neg_term);
}

// Multi-label video classification loss over top-k pooled class encodings.
// Videos without annotations are left out of the average. The softmax
// normaliser spans all Nc+1 classes; the outer sum skips background.
template <class S>
Var video_loss(Tape<S>& tape, Var logits, std::span<const std::size_t> lengths,
               std::span<const FrameAnnotation> anchors, std::size_t k_ratio,
               std::vector<std::string>* warnings = nullptr) {
  const Shape& shape = tape.value(logits).shape();
  const std::size_t videos = shape[0], classes = shape[2];
  for (const FrameAnnotation& a : anchors) {
    detail::require_valid(lengths, a.video, a.frame, "annotation");
    if (a.label < 1 || static_cast<std::size_t>(a.label) >= classes) {
      throw ArgumentError("annotation label " + std::to_string(a.label) + " out of range");
    }
  }
  const Tensor<double> q = video_targets(anchors, videos, classes);
  std::size_t annotated = 0;
  for (std::size_t v = 0; v < videos; ++v) {
    double mass = 0.0;
    for (std::size_t c = 0; c < classes; ++c) mass += q(v, c);
    if (mass > 0.0) {
      ++annotated;
    } else if (warnings) {
      warnings->push_back("video " + std::to_string(v) +
                          " has no annotations; excluded from the video loss");
    }
  }
  if (annotated == 0) return detail::zero_scalar(tape);

  const auto ks = pooling_ks(lengths, k_ratio);
  const Var pooled = topk_pool(tape, logits, lengths, ks);
  const Var log_probs = log_softmax(tape, pooled);
  Tensor<S> weights(Shape{videos, classes});
  for (std::size_t v = 0; v < videos; ++v) {
    for (std::size_t c = 1; c < classes; ++c) {
      weights(v, c) = static_cast<S>(-q(v, c) / static_cast<double>(annotated));
    }
  }
  return weighted_sum(tape, log_probs, std::move(weights));
}

// Full objective: frame_total + alpha * video + beta * actionness, with
// individual terms switched off by `settings`.
template <class S>
ObjectiveVars build_objective(Tape<S>& tape, Var classification, Var actionness,
                              std::span<const std::size_t> lengths,
                              std::span<const FrameAnnotation> anchors,
                              const PseudoLabelSet& labels, const ObjectiveSettings& settings) {
  const std::size_t num_classes = tape.value(classification).dim(2) - 1;
  ObjectiveVars out;
  const bool need_log_probs = settings.use_frame_labeled || settings.use_frame_background;
  const Var log_probs = need_log_probs ? log_softmax(tape, classification) : Var{};

  if (settings.use_frame_labeled) {
    if (labels.action_frames.empty()) out.warnings.push_back("batch has no labeled frames");
    out.frame_labeled = frame_loss_labeled(tape, log_probs, lengths, labels.action_frames);
  } else {
    out.frame_labeled = detail::zero_scalar(tape);
  }
  out.frame_background =
      settings.use_frame_background
          ? frame_loss_background(tape, log_probs, lengths, labels.background_frames)
          : detail::zero_scalar(tape);
  out.frame_total =
      add(tape, out.frame_labeled,
          scale(tape, out.frame_background, S{1} / static_cast<S>(num_classes)));

  if (settings.use_actionness) {
    std::vector<ActionFrame> positives;
    for (const ActionFrame& f : labels.action_frames) {
      if (settings.expanded_actionness || f.origin == FrameOrigin::anchor) positives.push_back(f);
    }
    out.actionness = actionness_loss(
        tape, actionness, lengths, positives,
        settings.use_frame_background ? std::span<const FrameRef>(labels.background_frames)
                                      : std::span<const FrameRef>());
  } else {
    out.actionness = detail::zero_scalar(tape);
  }
  out.video = settings.use_video
                  ? video_loss(tape, classification, lengths, anchors, settings.k_ratio,
                               &out.warnings)
                  : detail::zero_scalar(tape);

  out.total = add(tape,
                  add(tape, out.frame_total, scale(tape, out.video, static_cast<S>(settings.alpha))),
                  scale(tape, out.actionness, static_cast<S>(settings.beta)));

  auto val = [&](Var v) { return static_cast<double>(tape.value(v).item()); };
  out.values = LossBreakdown{val(out.frame_labeled), val(out.frame_background),
                             val(out.frame_total),   val(out.actionness),
                             val(out.video),         val(out.total)};
  return out;
}

// Value-only evaluation of the labeled-frame loss on logits C[N,T,Nc+1].
inline double frame_loss_labeled(const Tensor<double>& logits,
                                 std::span<const std::size_t> lengths,
                                 std::span<const ActionFrame> frames) {
  Tape<double> tape;
  const Var lp = log_softmax(tape, tape.leaf(logits));
  return tape.value(frame_loss_labeled(tape, lp, lengths, frames)).item();
}

inline double frame_loss_background(const Tensor<double>& logits,
                                    std::span<const std::size_t> lengths,
                                    std::span<const FrameRef> frames) {
  Tape<double> tape;
  const Var lp = log_softmax(tape, tape.leaf(logits));
  return tape.value(frame_loss_background(tape, lp, lengths, frames)).item();
}

inline double actionness_loss(const Tensor<double>& actionness,
                              std::span<const std::size_t> lengths,
                              std::span<const ActionFrame> positives,
                              std::span<const FrameRef> negatives) {
  Tape<double> tape;
  return tape.value(actionness_loss(tape, tape.leaf(actionness), lengths, positives, negatives))
      .item();
}

inline double video_loss(const Tensor<double>& logits, std::span<const std::size_t> lengths,
                         std::span<const FrameAnnotation> anchors, std::size_t k_ratio = 8) {
  Tape<double> tape;
  return tape.value(video_loss(tape, tape.leaf(logits), lengths, anchors, k_ratio)).item();
}

}  // namespace sfnet
