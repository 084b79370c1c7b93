#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sfnet/tensor.hpp"
#include "sfnet/types.hpp"

namespace sfnet {

// Intersection over union of two inclusive frame intervals, counted in frames.
// Video ids are not compared.
inline double temporal_iou(const Segment& a, const Segment& b) {
  const std::size_t lo = std::max(a.start, b.start);
  const std::size_t hi = std::min(a.end, b.end);
  if (hi < lo) return 0.0;
  const double inter = static_cast<double>(hi - lo + 1);
  const double uni = static_cast<double>(a.length() + b.length()) - inter;
  return inter / uni;
}

enum class ApMode { uninterpolated, eleven_point };

struct MatchResult {
  std::vector<std::size_t> ranking;                  // prediction indices, best first
  std::vector<bool> true_positive;                   // per ranked prediction
  std::vector<std::optional<std::size_t>> matched;   // GT index per ranked prediction
  std::vector<double> precision, recall;             // per rank
  std::size_t ground_truth = 0;
  double ap = 0.0;
};

// Area under the precision/recall staircase built from ranked TP flags.
inline double average_precision(const std::vector<bool>& tp, std::size_t positives,
                                ApMode mode = ApMode::uninterpolated) {
  if (positives == 0) return 0.0;
  std::vector<double> precision, recall;
  std::size_t hits = 0;
  double ap = 0.0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (tp[i]) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
    precision.push_back(static_cast<double>(hits) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(hits) / static_cast<double>(positives));
  }
  if (mode == ApMode::uninterpolated) return ap / static_cast<double>(positives);
  double total = 0.0;
  for (int r = 0; r <= 10; ++r) {
    const double level = r / 10.0;
    double best = 0.0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
      if (recall[i] >= level - 1e-12) best = std::max(best, precision[i]);
    }
    total += best;
  }
  return total / 11.0;
}

namespace detail {

inline bool ranks_before(const Segment& a, const Segment& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.video != b.video) return a.video < b.video;
  if (a.start != b.start) return a.start < b.start;
  if (a.end != b.end) return a.end < b.end;
  return a.label < b.label;
}

inline MatchResult finish(MatchResult m, ApMode mode) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < m.true_positive.size(); ++i) {
    hits += m.true_positive[i] ? 1 : 0;
    m.precision.push_back(static_cast<double>(hits) / static_cast<double>(i + 1));
    m.recall.push_back(m.ground_truth ? static_cast<double>(hits) /
                                            static_cast<double>(m.ground_truth)
                                      : 0.0);
  }
  m.ap = average_precision(m.true_positive, m.ground_truth, mode);
  return m;
}

}  // namespace detail

// Greedy matching of class-`label` predictions, in confidence order, to the
// unmatched same-video ground truth of that class with the highest IoU. A
// match needs IoU >= threshold and a non-empty overlap.
inline MatchResult match_segments(std::span<const Segment> predictions,
                                  std::span<const Segment> ground_truth, int label,
                                  double iou_threshold, ApMode mode = ApMode::uninterpolated) {
  MatchResult m;
  std::vector<std::size_t> gt_idx;
  for (std::size_t g = 0; g < ground_truth.size(); ++g) {
    if (ground_truth[g].label == label) gt_idx.push_back(g);
  }
  m.ground_truth = gt_idx.size();
  for (std::size_t p = 0; p < predictions.size(); ++p) {
    if (predictions[p].label == label) m.ranking.push_back(p);
  }
  std::sort(m.ranking.begin(), m.ranking.end(), [&](std::size_t a, std::size_t b) {
    return detail::ranks_before(predictions[a], predictions[b]);
  });
  std::vector<bool> used(ground_truth.size(), false);
  for (std::size_t p : m.ranking) {
    const Segment& pred = predictions[p];
    std::optional<std::size_t> best;
    double best_iou = 0.0;
    for (std::size_t g : gt_idx) {
      if (used[g] || ground_truth[g].video != pred.video) continue;
      const double iou = temporal_iou(pred, ground_truth[g]);
      if (iou > best_iou) {
        best_iou = iou;
        best = g;
      }
    }
    const bool hit = best && best_iou >= iou_threshold;
    if (hit) used[*best] = true;
    m.true_positive.push_back(hit);
    m.matched.push_back(hit ? best : std::nullopt);
  }
  return detail::finish(std::move(m), mode);
}

inline double segment_ap(std::span<const Segment> predictions,
                         std::span<const Segment> ground_truth, int label, double iou_threshold,
                         ApMode mode = ApMode::uninterpolated) {
  return match_segments(predictions, ground_truth, label, iou_threshold, mode).ap;
}

inline std::set<int> classes_with_ground_truth(std::span<const Segment> ground_truth) {
  std::set<int> out;
  for (const Segment& g : ground_truth) out.insert(g.label);
  return out;
}

// Mean of segment_ap over classes that have ground truth.
inline double segment_map(std::span<const Segment> predictions,
                          std::span<const Segment> ground_truth, double iou_threshold,
                          ApMode mode = ApMode::uninterpolated) {
  const auto classes = classes_with_ground_truth(ground_truth);
  if (classes.empty()) return 0.0;
  double total = 0.0;
  for (int c : classes) total += segment_ap(predictions, ground_truth, c, iou_threshold, mode);
  return total / static_cast<double>(classes.size());
}

// All classes collapsed into one before scoring.
inline double class_agnostic_ap(std::span<const Segment> predictions,
                                std::span<const Segment> ground_truth, double iou_threshold,
                                ApMode mode = ApMode::uninterpolated) {
  std::vector<Segment> p(predictions.begin(), predictions.end());
  std::vector<Segment> g(ground_truth.begin(), ground_truth.end());
  for (auto& s : p) s.label = 1;
  for (auto& s : g) s.label = 1;
  return segment_ap(p, g, 1, iou_threshold, mode);
}

// AP of single-frame detections for one class: a detection is correct when
// its frame lies inside an unmatched ground-truth segment of its class.
inline double hit_ap(std::span<const FrameDetection> detections,
                     std::span<const Segment> ground_truth, int label,
                     ApMode mode = ApMode::uninterpolated) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    if (detections[i].label == label) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const FrameDetection& x = detections[a];
    const FrameDetection& y = detections[b];
    if (x.confidence != y.confidence) return x.confidence > y.confidence;
    if (x.video != y.video) return x.video < y.video;
    return x.frame < y.frame;
  });
  std::size_t positives = 0;
  for (const Segment& g : ground_truth) positives += g.label == label ? 1 : 0;
  std::vector<bool> used(ground_truth.size(), false);
  std::vector<bool> tp;
  for (std::size_t i : order) {
    const FrameDetection& d = detections[i];
    bool hit = false;
    for (std::size_t g = 0; g < ground_truth.size() && !hit; ++g) {
      const Segment& s = ground_truth[g];
      if (used[g] || s.label != label || s.video != d.video) continue;
      if (d.frame >= s.start && d.frame <= s.end) {
        used[g] = true;
        hit = true;
      }
    }
    tp.push_back(hit);
  }
  return average_precision(tp, positives, mode);
}

inline double map_at_hit(std::span<const FrameDetection> detections,
                         std::span<const Segment> ground_truth,
                         ApMode mode = ApMode::uninterpolated) {
  const auto classes = classes_with_ground_truth(ground_truth);
  if (classes.empty()) return 0.0;
  double total = 0.0;
  for (int c : classes) total += hit_ap(detections, ground_truth, c, mode);
  return total / static_cast<double>(classes.size());
}

// Mean over action classes with at least one positive video of the AP of
// videos ranked by that class's probability (ties: lower video index first).
// `probabilities` is [videos, Nc+1]; column 0 is ignored.
inline double video_classification_map(const Tensor<double>& probabilities,
                                       const std::vector<std::set<int>>& video_labels) {
  const std::size_t videos = probabilities.dim(0), classes = probabilities.dim(1);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 1; c < classes; ++c) {
    std::size_t positives = 0;
    for (const auto& labels : video_labels) positives += labels.contains(static_cast<int>(c));
    if (positives == 0) continue;
    std::vector<std::size_t> order(videos);
    for (std::size_t v = 0; v < videos; ++v) order[v] = v;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return probabilities(a, c) > probabilities(b, c);
    });
    std::vector<bool> tp;
    for (std::size_t v : order) tp.push_back(video_labels[v].contains(static_cast<int>(c)));
    total += average_precision(tp, positives);
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

// Ordered metric rows of an evaluation report.
struct EvalReport {
  std::vector<std::pair<std::string, double>> rows;

  double at(const std::string& metric) const {
    for (const auto& [name, value] : rows) {
      if (name == metric) return value;
    }
    throw ArgumentError("report has no metric '" + metric + "'");
  }

  std::string to_csv() const {
    std::string out = "metric,value\n";
    char buf[64];
    for (const auto& [name, value] : rows) {
      std::snprintf(buf, sizeof(buf), "%.6f", value);
      out += name + "," + buf + "\n";
    }
    return out;
  }
};

inline std::string iou_label(int tenths) {
  return "0." + std::to_string(tenths);
}

inline constexpr double kReportIous[] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};

// Every shipped metric for one set of predictions against ground truth.
inline EvalReport build_report(std::span<const Segment> segments,
                               std::span<const FrameDetection> detections,
                               std::span<const Segment> ground_truth,
                               const Tensor<double>& video_probabilities,
                               const std::vector<std::set<int>>& video_labels,
                               ApMode mode = ApMode::uninterpolated) {
  EvalReport r;
  double sum_all = 0.0, sum_low = 0.0;
  for (int i = 1; i <= 7; ++i) {
    const double m = segment_map(segments, ground_truth, i / 10.0, mode);
    r.rows.emplace_back("mAP@" + iou_label(i), m);
    sum_all += m;
    if (i <= 5) sum_low += m;
  }
  r.rows.emplace_back("AVG(0.1:0.7)", sum_all / 7.0);
  r.rows.emplace_back("AVG(0.1:0.5)", sum_low / 5.0);
  r.rows.emplace_back("mAP@hit", map_at_hit(detections, ground_truth, mode));
  for (int i : {3, 5, 7}) {
    r.rows.emplace_back("agnostic-AP@" + iou_label(i),
                        class_agnostic_ap(segments, ground_truth, i / 10.0, mode));
  }
  r.rows.emplace_back("video-mAP", video_classification_map(video_probabilities, video_labels));
  return r;
}

}  // namespace sfnet
