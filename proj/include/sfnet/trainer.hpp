#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <algorithm>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sfnet/adam.hpp"
#include "sfnet/config.hpp"
#include "sfnet/corpus.hpp"
#include "sfnet/evaluation.hpp"
#include "sfnet/grad_check.hpp"
#include "sfnet/inference.hpp"
#include "sfnet/model.hpp"
#include "sfnet/objectives.hpp"
#include "sfnet/pseudo_labeling.hpp"

namespace sfnet {

struct TrainLogRow {
  std::size_t iteration = 0;
  LossBreakdown loss;
  std::size_t labeled_frames = 0;
  std::size_t background_frames = 0;
};

inline std::string training_log_csv(const std::vector<TrainLogRow>& rows) {
  std::string out = "iter,frame_l,frame_b,actionness,video,total\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.iteration,
                  r.loss.frame_labeled, r.loss.frame_background, r.loss.actionness, r.loss.video,
                  r.loss.total);
    out += buf;
  }
  return out;
}

inline ModelDims model_dims(const FeatureCorpus& corpus, const TrainConfig& cfg) {
  return ModelDims{corpus.feature_dim, cfg.hidden, corpus.num_classes, cfg.conv_width};
}

inline ObjectiveSettings objective_settings(const TrainConfig& c) {
  ObjectiveSettings s;
  s.alpha = c.alpha;
  s.beta = c.beta;
  s.k_ratio = c.k_ratio;
  s.use_frame_labeled = !c.weak_only;
  s.use_frame_background = c.use_background && !c.weak_only;
  s.use_actionness = c.use_actionness && !c.weak_only;
  s.use_video = true;
  s.expanded_actionness = c.expanded_actionness;
  return s;
}

template <class S>
Tensor<double> frame_probabilities(const Tensor<S>& logits) {
  return softmax_values(logits.template cast<double>());
}

// One optimisation step on one batch: forward, mine pseudo labels from the
// current scores, evaluate the objective, back-propagate and update.
template <class S>
TrainLogRow train_step(SFNetParams<S>& params, AdamState<S>& adam, const Batch<S>& batch,
                       const TrainConfig& cfg) {
  Tape<S> tape;
  const ForwardVars fv = forward(tape, params, batch.features, batch.lengths);
  const Tensor<double> probs = frame_probabilities(tape.value(fv.classification));
  const PseudoLabelSet labels =
      cfg.weak_only ? PseudoLabelSet{}
                    : build_pseudo_labels(probs, batch.lengths, batch.annotations, mining_options(cfg));
  const ObjectiveVars obj = build_objective(tape, fv.classification, fv.actionness, batch.lengths,
                                            batch.annotations, labels, objective_settings(cfg));
  TrainLogRow row;
  row.loss = obj.values;
  row.labeled_frames = labels.action_frames.size();
  row.background_frames = labels.background_frames.size();
  if (!std::isfinite(obj.values.total)) return row;
  tape.backward(obj.total);
  std::vector<Tensor<S>> grads;
  for (Var v : fv.params) grads.push_back(tape.grad(v));
  adam_step(params.tensors(), grads, adam);
  return row;
}

template <class S>
struct TrainResult {
  SFNetParams<S> params;
  std::vector<TrainLogRow> log;
};

template <class S>
TrainResult<S> train(const FeatureCorpus& corpus, const TrainConfig& cfg,
                     const std::function<void(const TrainLogRow&)>& on_step = {}) {
  parse_strategy(cfg.strategy);
  const auto train_videos = corpus.split_indices("train");
  if (train_videos.empty()) throw ConfigError("corpus has no train split");
  if (!cfg.weak_only) {
    for (std::size_t v : train_videos) {
      if (!corpus.videos[v].annotations.contains(cfg.strategy)) {
        throw ConfigError("video '" + corpus.videos[v].id + "' has no '" + cfg.strategy +
                          "' annotations");
      }
    }
  }
  TrainResult<S> result;
  result.params = init_params<S>(model_dims(corpus, cfg), cfg.seed);
  AdamState<S> adam(result.params.tensors(),
                    AdamSettings{cfg.learning_rate, 0.9, 0.999, 1e-8});
  const BatchSchedule schedule(train_videos, cfg.batch_size, mix_seed(cfg.seed, 0x5eed));
  const auto plan = schedule.take(cfg.iterations);
  for (std::size_t it = 0; it < plan.size(); ++it) {
    const Batch<S> batch = make_batch<S>(corpus, plan[it], cfg.strategy);
    TrainLogRow row = train_step(result.params, adam, batch, cfg);
    row.iteration = it + 1;
    if (!std::isfinite(row.loss.total)) {
      throw NumericError("training diverged at iteration " + std::to_string(row.iteration) +
                         " (non-finite loss)");
    }
    result.log.push_back(row);
    if (on_step) on_step(row);
  }
  return result;
}

// Predictions and metrics over one split. Segment/Detection video fields are
// corpus indices.
struct EvalOutcome {
  std::vector<std::size_t> videos;
  Predictions predictions;
  EvalReport report;
};

inline ScoreMaps<double> score_videos(const FeatureCorpus& corpus,
                                      const SFNetParams<double>& params,
                                      std::span<const std::size_t> videos) {
  if (params.dims.feature_dim != corpus.feature_dim ||
      params.dims.num_classes != corpus.num_classes) {
    throw ConfigError("checkpoint expects D=" + std::to_string(params.dims.feature_dim) +
                      ", Nc=" + std::to_string(params.dims.num_classes) +
                      " but corpus has D=" + std::to_string(corpus.feature_dim) +
                      ", Nc=" + std::to_string(corpus.num_classes));
  }
  const Batch<double> batch = make_batch<double>(corpus, videos, "");
  return forward(params, batch.features, batch.lengths);
}

inline EvalOutcome evaluate(const FeatureCorpus& corpus, const SFNetParams<double>& params,
                            const TrainConfig& cfg, const std::string& split = "test") {
  EvalOutcome out;
  out.videos = corpus.split_indices(split);
  if (out.videos.empty()) throw ConfigError("corpus has no '" + split + "' split");
  const ScoreMaps<double> maps = score_videos(corpus, params, out.videos);
  out.predictions = run_inference(maps, inference_settings(cfg));
  for (auto& s : out.predictions.segments) s.video = out.videos[s.video];
  for (auto& d : out.predictions.detections) d.video = out.videos[d.video];

  std::vector<Segment> gt;
  std::vector<std::set<int>> labels;
  for (std::size_t v : out.videos) {
    std::set<int> present;
    for (const Segment& s : corpus.videos[v].segments) {
      gt.push_back(s);
      present.insert(s.label);
    }
    labels.push_back(std::move(present));
  }
  out.report = build_report(out.predictions.segments, out.predictions.detections, gt,
                            out.predictions.video_probabilities, labels, cfg.ap_mode);
  return out;
}

// Trains at the configured precision and returns double parameters.
inline TrainResult<double> train_any(const FeatureCorpus& corpus, const TrainConfig& cfg,
                                     const std::function<void(const TrainLogRow&)>& on_step = {}) {
  if (cfg.precision == Precision::f64) return train<double>(corpus, cfg, on_step);
  auto r = train<float>(corpus, cfg, on_step);
  return TrainResult<double>{r.params.cast<double>(), std::move(r.log)};
}

struct TrainEval {
  TrainResult<double> trained;
  EvalReport report;
};

inline TrainEval train_and_evaluate(const FeatureCorpus& corpus, const TrainConfig& cfg) {
  TrainEval te;
  te.trained = train_any(corpus, cfg);
  te.report = evaluate(corpus, te.trained.params, cfg).report;
  return te;
}

// ---------------------------------------------------------------------------
// Hyper-parameter sweep

inline const std::vector<std::string>& sweep_columns() {
  static const std::vector<std::string> c = {"mAP@hit", "mAP@0.1", "mAP@0.2", "mAP@0.3",
                                             "mAP@0.4", "mAP@0.5", "mAP@0.6", "mAP@0.7",
                                             "AVG(0.1:0.7)"};
  return c;
}

inline std::string sweep_csv(const FeatureCorpus& corpus, const TrainConfig& base,
                             const std::string& parameter, const std::vector<double>& values) {
  if (parameter != "eta" && parameter != "alpha" && parameter != "beta" && parameter != "theta") {
    throw ConfigError("sweep parameter must be eta, alpha, beta or theta, got '" + parameter + "'");
  }
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::string out = parameter;
  for (const auto& c : sweep_columns()) out += "," + c;
  out += "\n";
  std::optional<TrainResult<double>> shared;  // theta only affects inference
  for (double value : values) {
    TrainConfig cfg = base;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    apply_setting(cfg, parameter, buf);
    EvalReport report;
    if (parameter == "theta") {
      if (!shared) shared = train_any(corpus, cfg);
      report = evaluate(corpus, shared->params, cfg).report;
    } else {
      report = train_and_evaluate(corpus, cfg).report;
    }
    std::snprintf(buf, sizeof(buf), "%g", value);
    out += buf;
    for (const auto& c : sweep_columns()) {
      std::snprintf(buf, sizeof(buf), ",%.6f", report.at(c));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check of the full objective on a toy batch

struct GradcheckSetup {
  std::size_t videos = 2;
  std::size_t frames = 12;
  std::size_t feature_dim = 6;
  std::size_t num_classes = 3;
  std::size_t hidden = 5;
  std::size_t conv_width = 3;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
};

struct GradcheckOutcome {
  GradCheckReport report;
  std::string worst_name;
  std::size_t labeled_frames = 0;
  std::size_t background_frames = 0;
};

inline GradcheckOutcome run_full_gradcheck(
    const GradcheckSetup& setup,
    std::function<void(std::vector<Tensor<double>>&)> tamper = {}) {
  if (setup.videos == 0 || setup.frames == 0 || setup.videos > 2 || setup.frames > 12 ||
      setup.feature_dim > 6) {
    throw ConfigError("gradcheck dims must satisfy 1 <= N <= 2, 1 <= T <= 12, D <= 6");
  }
  const ModelDims dims{setup.feature_dim, setup.hidden, setup.num_classes, setup.conv_width};
  const SFNetParams<double> params = init_params<double>(dims, setup.seed);

  std::mt19937_64 rng(mix_seed(setup.seed, 0x67726164ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<double> x(Shape{setup.videos, setup.frames, setup.feature_dim});
  std::vector<std::size_t> lengths;
  std::vector<FrameAnnotation> anchors;
  std::uniform_int_distribution<int> cls(1, static_cast<int>(setup.num_classes));
  for (std::size_t v = 0; v < setup.videos; ++v) {
    const std::size_t len = std::max<std::size_t>(1, setup.frames - 3 * v);
    lengths.push_back(len);
    for (std::size_t f = 0; f < len; ++f) {
      for (std::size_t k = 0; k < setup.feature_dim; ++k) x(v, f, k) = normal(rng);
    }
    std::uniform_int_distribution<std::size_t> frame(0, len - 1);
    anchors.push_back({v, frame(rng), cls(rng)});
    if (len > 4) anchors.push_back({v, frame(rng), cls(rng)});
  }
  std::sort(anchors.begin(), anchors.end());
  anchors.erase(std::unique(anchors.begin(), anchors.end(),
                            [](const auto& a, const auto& b) {
                              return a.video == b.video && a.frame == b.frame;
                            }),
                anchors.end());

  // Pseudo labels are mined once from the initial scores and then frozen.
  MiningOptions mining;
  mining.eta = 1.0;
  mining.expansion.radius = 2;
  mining.expansion.xi = 0.5;
  const Tensor<double> probs =
      softmax_values(forward(params, x, lengths).classification);
  const PseudoLabelSet labels = build_pseudo_labels(probs, lengths, anchors, mining);

  ObjectiveSettings settings;
  ScalarBuilder build = [&](Tape<double>& tape, std::span<const Var> leaves) {
    const Var xv = tape.leaf(x, false);
    const ForwardVars fv = forward(tape, leaves, xv, lengths);
    return build_objective(tape, fv.classification, fv.actionness, lengths, anchors, labels,
                           settings)
        .total;
  };
  std::vector<Tensor<double>> values;
  for (const Tensor<double>* t : params.tensors()) values.push_back(*t);
  GradCheckOptions options;
  options.tolerance = setup.tolerance;
  options.tamper = std::move(tamper);

  GradcheckOutcome out;
  out.report = grad_check(build, std::move(values), options);
  out.worst_name = SFNetParams<double>::names()[out.report.worst_param];
  out.labeled_frames = labels.action_frames.size();
  out.background_frames = labels.background_frames.size();
  return out;
}

}  // namespace sfnet
