#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sfnet/ops.hpp"
#include "sfnet/tape.hpp"
#include "sfnet/tensor.hpp"

namespace sfnet {

struct ModelDims {
  std::size_t feature_dim = 0;   // D
  std::size_t hidden = 256;      // H
  std::size_t num_classes = 0;   // Nc, action classes only
  std::size_t conv_width = 3;    // k_w

  std::size_t score_classes() const { return num_classes + 1; }
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

inline void validate(const ModelDims& d) {
  if (d.feature_dim == 0 || d.hidden == 0 || d.num_classes == 0 || d.conv_width == 0) {
    throw ConfigError("model dimensions must be positive (D=" + std::to_string(d.feature_dim) +
                      ", H=" + std::to_string(d.hidden) + ", Nc=" +
                      std::to_string(d.num_classes) + ", k_w=" + std::to_string(d.conv_width) +
                      ")");
  }
  if (d.conv_width % 2 == 0) {
    throw ConfigError("conv width must be odd, got " + std::to_string(d.conv_width));
  }
}

// Classification head: three linear layers, D -> H -> H -> Nc+1.
// Actionness head: two width-k_w temporal convolutions D -> H -> H, then a
// linear layer H -> 1. ReLU between layers. Class 0 is background.
template <class S>
struct SFNetParams {
  ModelDims dims;
  Tensor<S> cls_w1, cls_b1, cls_w2, cls_b2, cls_w3, cls_b3;
  Tensor<S> act_k1, act_b1, act_k2, act_b2, act_w3, act_b3;

  static constexpr std::size_t kNumTensors = 12;

  static const std::vector<std::string>& names() {
    static const std::vector<std::string> n = {
        "cls.fc1.weight", "cls.fc1.bias", "cls.fc2.weight",  "cls.fc2.bias",
        "cls.fc3.weight", "cls.fc3.bias", "act.conv1.kernel", "act.conv1.bias",
        "act.conv2.kernel", "act.conv2.bias", "act.fc.weight", "act.fc.bias"};
    return n;
  }

  std::vector<Tensor<S>*> tensors() {
    return {&cls_w1, &cls_b1, &cls_w2, &cls_b2, &cls_w3, &cls_b3,
            &act_k1, &act_b1, &act_k2, &act_b2, &act_w3, &act_b3};
  }
  std::vector<const Tensor<S>*> tensors() const {
    return {&cls_w1, &cls_b1, &cls_w2, &cls_b2, &cls_w3, &cls_b3,
            &act_k1, &act_b1, &act_k2, &act_b2, &act_w3, &act_b3};
  }

  template <class T>
  SFNetParams<T> cast() const {
    SFNetParams<T> out;
    out.dims = dims;
    auto src = tensors();
    auto dst = out.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<T>();
    return out;
  }

  friend bool operator==(const SFNetParams&, const SFNetParams&) = default;
};

template <class S>
SFNetParams<S> init_params(const ModelDims& dims, std::uint64_t seed) {
  validate(dims);
  std::mt19937_64 rng(seed);
  auto glorot = [&rng](Shape shape, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<S> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<S>(dist(rng));
    return t;
  };
  const std::size_t d = dims.feature_dim, h = dims.hidden, c = dims.score_classes(),
                    k = dims.conv_width;
  SFNetParams<S> p;
  p.dims = dims;
  p.cls_w1 = glorot({d, h}, d, h);
  p.cls_b1 = Tensor<S>({h});
  p.cls_w2 = glorot({h, h}, h, h);
  p.cls_b2 = Tensor<S>({h});
  p.cls_w3 = glorot({h, c}, h, c);
  p.cls_b3 = Tensor<S>({c});
  p.act_k1 = glorot({k, d, h}, k * d, k * h);
  p.act_b1 = Tensor<S>({h});
  p.act_k2 = glorot({k, h, h}, k * h, k * h);
  p.act_b2 = Tensor<S>({h});
  p.act_w3 = glorot({h, 1}, h, 1);
  p.act_b3 = Tensor<S>({1});
  return p;
}

// Raw logits for a padded batch. Frames t >= lengths[n] are padding.
template <class S>
struct ScoreMaps {
  Tensor<S> classification;  // [N, T, Nc+1]
  Tensor<S> actionness;      // [N, T]
  std::vector<std::size_t> lengths;

  std::size_t videos() const { return lengths.size(); }
  std::size_t frames() const { return actionness.rank() == 2 ? actionness.dim(1) : 0; }
  bool valid(std::size_t video, std::size_t frame) const { return frame < lengths[video]; }
};

// Model outputs as tape variables, plus the parameter leaves in the order of
// SFNetParams::tensors().
struct ForwardVars {
  Var classification;
  Var actionness;
  std::vector<Var> params;
};

template <class S>
ForwardVars forward(Tape<S>& tape, std::span<const Var> p, Var x,
                    std::span<const std::size_t> lengths) {
  const Tensor<S>& xv = tape.value(x);
  if (xv.rank() != 3 || lengths.size() != xv.dim(0)) {
    throw DimensionError("forward: features must be [N,T,D] with N lengths, got " +
                         to_string(xv.shape()));
  }
  for (std::size_t len : lengths) {
    if (len > xv.dim(1)) {
      throw ArgumentError("forward: video length " + std::to_string(len) +
                          " exceeds padded length " + std::to_string(xv.dim(1)));
    }
  }
  const std::size_t n = xv.dim(0), frames = xv.dim(1);

  Var h = relu(tape, linear(tape, x, p[0], p[1]));
  h = relu(tape, linear(tape, h, p[2], p[3]));
  const Var cls = linear(tape, h, p[4], p[5]);

  // Hidden activations of padded frames are zeroed so that every valid frame
  // sees the same neighbourhood no matter how much padding follows it.
  Var a = mask_frames(tape, relu(tape, temporal_conv1d(tape, x, p[6], p[7])), lengths);
  a = mask_frames(tape, relu(tape, temporal_conv1d(tape, a, p[8], p[9])), lengths);
  a = linear(tape, a, p[10], p[11]);
  a = reshape(tape, a, Shape{n, frames});

  return ForwardVars{cls, a, std::vector<Var>(p.begin(), p.end())};
}

// Records the parameters as gradient-carrying leaves and runs forward.
template <class S>
ForwardVars forward(Tape<S>& tape, const SFNetParams<S>& params, const Tensor<S>& features,
                    std::span<const std::size_t> lengths, bool track_params = true) {
  std::vector<Var> leaves;
  for (const Tensor<S>* t : params.tensors()) leaves.push_back(tape.leaf(*t, track_params));
  const Var x = tape.leaf(features, false);
  return forward(tape, std::span<const Var>(leaves), x, lengths);
}

template <class S>
ScoreMaps<S> forward(const SFNetParams<S>& params, const Tensor<S>& features,
                     std::span<const std::size_t> lengths) {
  if (features.rank() != 3 || features.dim(2) != params.dims.feature_dim) {
    throw DimensionError("forward: features " + to_string(features.shape()) +
                         " do not match model input dim " +
                         std::to_string(params.dims.feature_dim));
  }
  Tape<S> tape;
  const ForwardVars out = forward(tape, params, features, lengths, false);
  return ScoreMaps<S>{tape.value(out.classification), tape.value(out.actionness),
                      std::vector<std::size_t>(lengths.begin(), lengths.end())};
}

}  // namespace sfnet
