#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sfnet/tape.hpp"
#include "sfnet/tensor.hpp"

// Differentiable primitives recorded on a Tape. Only the operations needed by
// the SF-Net model and its objective are provided; there is no broadcasting.
namespace sfnet {

namespace detail {

template <class S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<RowMatrix<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const RowMatrix<S>>;
template <class S>
using RowVecMap = Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>;
template <class S>
using ConstRowVecMap = Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>;

inline void require(bool ok, const std::string& message) {
  if (!ok) throw DimensionError(message);
}

template <class S>
S stable_sigmoid(S x) {
  if (x >= S{0}) return S{1} / (S{1} + std::exp(-x));
  const S e = std::exp(x);
  return e / (S{1} + e);
}

// log(sigmoid(x)) without overflow: min(x, 0) - log1p(exp(-|x|)).
template <class S>
S log_sigmoid(S x) {
  return std::min(x, S{0}) - std::log1p(std::exp(-std::abs(x)));
}

// Indices of the k largest entries of values[0..n), larger value first, lower
// index first among equal values.
template <class S>
std::vector<std::size_t> topk_indices(const S* values, std::size_t n, std::size_t k,
                                      std::size_t stride = 1) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                    order.end(), [&](std::size_t a, std::size_t b) {
                      const S va = values[a * stride];
                      const S vb = values[b * stride];
                      return va > vb || (va == vb && a < b);
                    });
  order.resize(k);
  return order;
}

}  // namespace detail

// y = x W + b over the last axis of x.
template <class S>
Var linear(Tape<S>& tape, Var x, Var w, Var b) {
  const Tensor<S>& xv = tape.value(x);
  const Tensor<S>& wv = tape.value(w);
  const Tensor<S>& bv = tape.value(b);
  detail::require(xv.rank() >= 1 && wv.rank() == 2 && bv.rank() == 1 &&
                      xv.shape().back() == wv.dim(0) && bv.dim(0) == wv.dim(1),
                  "linear: incompatible shapes x" + to_string(xv.shape()) + " W" +
                      to_string(wv.shape()) + " b" + to_string(bv.shape()));
  const std::size_t din = wv.dim(0);
  const std::size_t dout = wv.dim(1);
  const std::size_t rows = xv.size() / din;
  Shape out_shape = xv.shape();
  out_shape.back() = dout;
  Tensor<S> out(out_shape);
  {
    detail::ConstMatMap<S> X(xv.raw(), rows, din);
    detail::ConstMatMap<S> W(wv.raw(), din, dout);
    detail::ConstRowVecMap<S> B(bv.raw(), dout);
    detail::MatMap<S> Y(out.raw(), rows, dout);
    Y.noalias() = X * W;
    Y.rowwise() += B;
  }
  return tape.record(std::move(out), {x, w, b}, [x, w, b, rows, din, dout](Tape<S>& t, std::size_t self) {
    detail::ConstMatMap<S> dY(t.grad_of_node(self).raw(), rows, dout);
    if (t.requires_grad(x)) {
      detail::ConstMatMap<S> W(t.value(w).raw(), din, dout);
      detail::MatMap<S> dX(t.grad_mut(x).raw(), rows, din);
      dX.noalias() += dY * W.transpose();
    }
    if (t.requires_grad(w)) {
      detail::ConstMatMap<S> X(t.value(x).raw(), rows, din);
      detail::MatMap<S> dW(t.grad_mut(w).raw(), din, dout);
      dW.noalias() += X.transpose() * dY;
    }
    if (t.requires_grad(b)) {
      detail::RowVecMap<S> dB(t.grad_mut(b).raw(), dout);
      dB += dY.colwise().sum();
    }
  });
}

// Same-length temporal convolution over axis 1 of x[N,T,Din] with an odd
// kernel[k,Din,Dout]; frames outside [0,T) read as zero.
template <class S>
Var temporal_conv1d(Tape<S>& tape, Var x, Var kernel, Var bias) {
  const Tensor<S>& xv = tape.value(x);
  const Tensor<S>& kv = tape.value(kernel);
  const Tensor<S>& bv = tape.value(bias);
  detail::require(xv.rank() == 3 && kv.rank() == 3 && bv.rank() == 1 &&
                      kv.dim(1) == xv.dim(2) && bv.dim(0) == kv.dim(2),
                  "temporal_conv1d: incompatible shapes x" + to_string(xv.shape()) +
                      " kernel" + to_string(kv.shape()) + " bias" + to_string(bv.shape()));
  const std::size_t width = kv.dim(0);
  if (width % 2 == 0) {
    throw ConfigError("temporal_conv1d: kernel width must be odd, got " +
                      std::to_string(width));
  }
  const std::size_t n = xv.dim(0), frames = xv.dim(1), din = xv.dim(2), dout = kv.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(width / 2);

  // Visits every (video, tap) pair as a contiguous block of output rows
  // [t0, t1) that reads input rows [t0 + shift, t1 + shift).
  auto for_each_block = [n, frames, width, pad](auto&& fn) {
    const auto len = static_cast<std::ptrdiff_t>(frames);
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t j = 0; j < width; ++j) {
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad;
        const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
        const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(len, len - shift);
        if (t1 <= t0) continue;
        fn(v, j, static_cast<std::size_t>(t0), static_cast<std::size_t>(t1 - t0),
           static_cast<std::size_t>(t0 + shift));
      }
    }
  };

  Tensor<S> out(Shape{n, frames, dout});
  {
    detail::MatMap<S> Y(out.raw(), n * frames, dout);
    Y.rowwise() = detail::ConstRowVecMap<S>(bv.raw(), dout);
    for_each_block([&](std::size_t v, std::size_t j, std::size_t out_row, std::size_t rows,
                       std::size_t in_row) {
      detail::ConstMatMap<S> X(xv.raw() + (v * frames + in_row) * din, rows, din);
      detail::ConstMatMap<S> K(kv.raw() + j * din * dout, din, dout);
      detail::MatMap<S> Yb(out.raw() + (v * frames + out_row) * dout, rows, dout);
      Yb.noalias() += X * K;
    });
  }
  return tape.record(std::move(out), {x, kernel, bias},
                     [=](Tape<S>& t, std::size_t self) {
    const S* dy = t.grad_of_node(self).raw();
    const bool gx = t.requires_grad(x), gk = t.requires_grad(kernel);
    S* dx = gx ? t.grad_mut(x).raw() : nullptr;
    S* dk = gk ? t.grad_mut(kernel).raw() : nullptr;
    const S* xs = t.value(x).raw();
    const S* ks = t.value(kernel).raw();
    for_each_block([&](std::size_t v, std::size_t j, std::size_t out_row, std::size_t rows,
                       std::size_t in_row) {
      detail::ConstMatMap<S> dYb(dy + (v * frames + out_row) * dout, rows, dout);
      if (gx) {
        detail::ConstMatMap<S> K(ks + j * din * dout, din, dout);
        detail::MatMap<S> dX(dx + (v * frames + in_row) * din, rows, din);
        dX.noalias() += dYb * K.transpose();
      }
      if (gk) {
        detail::ConstMatMap<S> X(xs + (v * frames + in_row) * din, rows, din);
        detail::MatMap<S> dK(dk + j * din * dout, din, dout);
        dK.noalias() += X.transpose() * dYb;
      }
    });
    if (t.requires_grad(bias)) {
      detail::RowVecMap<S> dB(t.grad_mut(bias).raw(), dout);
      dB += detail::ConstMatMap<S>(dy, n * frames, dout).colwise().sum();
    }
  });
}

namespace detail {

// Elementwise op with derivative expressed through input and output values.
template <class S, class Fwd, class Deriv>
Var unary(Tape<S>& tape, Var x, Fwd fwd, Deriv deriv) {
  const Tensor<S>& xv = tape.value(x);
  Tensor<S> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return tape.record(std::move(out), {x}, [x, deriv](Tape<S>& t, std::size_t self) {
    const Tensor<S>& dy = t.grad_of_node(self);
    const Tensor<S>& xin = t.value(x);
    const Tensor<S>& y = t.value(Var{self});
    Tensor<S>& dx = t.grad_mut(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * deriv(xin[i], y[i]);
  });
}

}  // namespace detail

template <class S>
Var relu(Tape<S>& tape, Var x) {
  return detail::unary(
      tape, x, [](S v) { return v > S{0} ? v : S{0}; },
      [](S v, S) { return v > S{0} ? S{1} : S{0}; });
}

template <class S>
Var sigmoid(Tape<S>& tape, Var x) {
  return detail::unary(
      tape, x, [](S v) { return detail::stable_sigmoid(v); },
      [](S, S y) { return y * (S{1} - y); });
}

// log(sigmoid(x)), finite for any finite x.
template <class S>
Var log_sigmoid(Tape<S>& tape, Var x) {
  return detail::unary(
      tape, x, [](S v) { return detail::log_sigmoid(v); },
      [](S v, S) { return detail::stable_sigmoid(-v); });
}

template <class S>
Var scale(Tape<S>& tape, Var x, S factor) {
  return detail::unary(
      tape, x, [factor](S v) { return factor * v; }, [factor](S, S) { return factor; });
}

template <class S>
Var add(Tape<S>& tape, Var a, Var b) {
  const Tensor<S>& av = tape.value(a);
  const Tensor<S>& bv = tape.value(b);
  detail::require(av.shape() == bv.shape(), "add: shape mismatch " + to_string(av.shape()) +
                                                " vs " + to_string(bv.shape()));
  Tensor<S> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<S>& t, std::size_t self) {
    const Tensor<S>& dy = t.grad_of_node(self);
    for (Var in : {a, b}) {
      if (!t.requires_grad(in)) continue;
      Tensor<S>& d = t.grad_mut(in);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
  });
}

template <class S>
Var reshape(Tape<S>& tape, Var x, Shape shape) {
  Tensor<S> out = tape.value(x).reshaped(std::move(shape));
  return tape.record(std::move(out), {x}, [x](Tape<S>& t, std::size_t self) {
    const Tensor<S>& dy = t.grad_of_node(self);
    Tensor<S>& dx = t.grad_mut(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
  });
}

namespace detail {

template <class S>
void softmax_row(const S* in, S* out, std::size_t n) {
  const S mx = *std::max_element(in, in + n);
  S total{0};
  for (std::size_t c = 0; c < n; ++c) {
    out[c] = std::exp(in[c] - mx);
    total += out[c];
  }
  for (std::size_t c = 0; c < n; ++c) out[c] /= total;
}

template <class S>
void log_softmax_row(const S* in, S* out, std::size_t n) {
  const S mx = *std::max_element(in, in + n);
  S total{0};
  for (std::size_t c = 0; c < n; ++c) total += std::exp(in[c] - mx);
  const S lse = mx + std::log(total);
  for (std::size_t c = 0; c < n; ++c) out[c] = in[c] - lse;
}

}  // namespace detail

// Softmax over the last axis, evaluated with max subtraction.
template <class S>
Tensor<S> softmax_values(const Tensor<S>& x) {
  detail::require(x.rank() >= 1 && x.shape().back() > 0, "softmax: empty last axis");
  const std::size_t width = x.shape().back();
  Tensor<S> out(x.shape());
  for (std::size_t r = 0; r < x.size() / width; ++r) {
    detail::softmax_row(x.raw() + r * width, out.raw() + r * width, width);
  }
  return out;
}

template <class S>
Var softmax(Tape<S>& tape, Var x) {
  Tensor<S> out = softmax_values(tape.value(x));
  return tape.record(std::move(out), {x}, [x](Tape<S>& t, std::size_t self) {
    const Tensor<S>& dy = t.grad_of_node(self);
    const Tensor<S>& y = t.value(Var{self});
    Tensor<S>& dx = t.grad_mut(x);
    const std::size_t width = y.shape().back();
    for (std::size_t r = 0; r < y.size() / width; ++r) {
      const std::size_t o = r * width;
      S dot{0};
      for (std::size_t c = 0; c < width; ++c) dot += dy[o + c] * y[o + c];
      for (std::size_t c = 0; c < width; ++c) dx[o + c] += y[o + c] * (dy[o + c] - dot);
    }
  });
}

template <class S>
Var log_softmax(Tape<S>& tape, Var x) {
  const Tensor<S>& xv = tape.value(x);
  detail::require(xv.rank() >= 1 && xv.shape().back() > 0, "log_softmax: empty last axis");
  const std::size_t width = xv.shape().back();
  Tensor<S> out(xv.shape());
  for (std::size_t r = 0; r < xv.size() / width; ++r) {
    detail::log_softmax_row(xv.raw() + r * width, out.raw() + r * width, width);
  }
  return tape.record(std::move(out), {x}, [x, width](Tape<S>& t, std::size_t self) {
    const Tensor<S>& dy = t.grad_of_node(self);
    const Tensor<S>& y = t.value(Var{self});
    Tensor<S>& dx = t.grad_mut(x);
    for (std::size_t r = 0; r < y.size() / width; ++r) {
      const std::size_t o = r * width;
      S total{0};
      for (std::size_t c = 0; c < width; ++c) total += dy[o + c];
      for (std::size_t c = 0; c < width; ++c) {
        dx[o + c] += dy[o + c] - std::exp(y[o + c]) * total;
      }
    }
  });
}

// Zeroes frames t >= lengths[n] of x[N,T,...].
template <class S>
Var mask_frames(Tape<S>& tape, Var x, std::span<const std::size_t> lengths) {
  const Tensor<S>& xv = tape.value(x);
  detail::require(xv.rank() >= 2 && lengths.size() == xv.dim(0),
                  "mask_frames: lengths do not match shape " + to_string(xv.shape()));
  const std::size_t frames = xv.dim(1);
  const std::size_t inner = xv.size() / (xv.dim(0) * std::max<std::size_t>(frames, 1));
  Tensor<S> out = xv;
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  for (std::size_t v = 0; v < lens.size(); ++v) {
    for (std::size_t f = std::min(lens[v], frames); f < frames; ++f) {
      std::fill_n(out.raw() + (v * frames + f) * inner, inner, S{0});
    }
  }
  return tape.record(std::move(out), {x}, [x, lens, frames, inner](Tape<S>& t, std::size_t self) {
    const Tensor<S>& dy = t.grad_of_node(self);
    Tensor<S>& dx = t.grad_mut(x);
    for (std::size_t v = 0; v < lens.size(); ++v) {
      const std::size_t valid = std::min(lens[v], frames) * inner;
      const std::size_t o = v * frames * inner;
      for (std::size_t i = 0; i < valid; ++i) dx[o + i] += dy[o + i];
    }
  });
}

// Selects flat entries of x into a rank-1 tensor.
template <class S>
Var gather(Tape<S>& tape, Var x, std::vector<std::size_t> indices) {
  const Tensor<S>& xv = tape.value(x);
  Tensor<S> out(Shape{indices.size()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= xv.size()) {
      throw ArgumentError("gather: index " + std::to_string(indices[i]) +
                          " out of range for shape " + to_string(xv.shape()));
    }
    out[i] = xv[indices[i]];
  }
  return tape.record(std::move(out), {x},
                     [x, idx = std::move(indices)](Tape<S>& t, std::size_t self) {
    const Tensor<S>& dy = t.grad_of_node(self);
    Tensor<S>& dx = t.grad_mut(x);
    for (std::size_t i = 0; i < idx.size(); ++i) dx[idx[i]] += dy[i];
  });
}

// sum_i weights[i] * x[i] as a scalar.
template <class S>
Var weighted_sum(Tape<S>& tape, Var x, Tensor<S> weights) {
  const Tensor<S>& xv = tape.value(x);
  detail::require(weights.size() == xv.size(),
                  "weighted_sum: weights" + to_string(weights.shape()) + " vs x" +
                      to_string(xv.shape()));
  S total{0};
  for (std::size_t i = 0; i < xv.size(); ++i) total += weights[i] * xv[i];
  return tape.record(Tensor<S>::scalar(total), {x},
                     [x, w = std::move(weights)](Tape<S>& t, std::size_t self) {
    const S dy = t.grad_of_node(self)[0];
    Tensor<S>& dx = t.grad_mut(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy * w[i];
  });
}

template <class S>
Var sum(Tape<S>& tape, Var x) {
  return weighted_sum(tape, x, Tensor<S>(tape.value(x).shape(), S{1}));
}

// Mean of the k largest entries of a rank-1 tensor. Gradient 1/k flows to each
// selected entry; ties go to the lower index.
template <class S>
Var topk_mean(Tape<S>& tape, Var x, std::size_t k) {
  const Tensor<S>& xv = tape.value(x);
  detail::require(xv.rank() == 1, "topk_mean: expects rank-1 input, got " + to_string(xv.shape()));
  if (k < 1 || k > xv.size()) {
    throw ArgumentError("topk_mean: k=" + std::to_string(k) + " outside [1, " +
                        std::to_string(xv.size()) + "]");
  }
  auto picked = detail::topk_indices(xv.raw(), xv.size(), k);
  S total{0};
  for (std::size_t i : picked) total += xv[i];
  const S inv_k = S{1} / static_cast<S>(k);
  return tape.record(Tensor<S>::scalar(total * inv_k), {x},
                     [x, picked = std::move(picked), inv_k](Tape<S>& t, std::size_t self) {
    const S dy = t.grad_of_node(self)[0];
    Tensor<S>& dx = t.grad_mut(x);
    for (std::size_t i : picked) dx[i] += dy * inv_k;
  });
}

// Per-video, per-class top-k mean pooling of x[N,T,C] over the first
// lengths[n] frames with k = ks[n]. Returns [N,C].
template <class S>
Var topk_pool(Tape<S>& tape, Var x, std::span<const std::size_t> lengths,
              std::span<const std::size_t> ks) {
  const Tensor<S>& xv = tape.value(x);
  detail::require(xv.rank() == 3 && lengths.size() == xv.dim(0) && ks.size() == xv.dim(0),
                  "topk_pool: shape " + to_string(xv.shape()) + " vs " +
                      std::to_string(lengths.size()) + " lengths");
  const std::size_t n = xv.dim(0), frames = xv.dim(1), classes = xv.dim(2);
  Tensor<S> out(Shape{n, classes});
  // picked[(v * classes + c) * ...] flattened into one index list per cell.
  std::vector<std::vector<std::size_t>> picked(n * classes);
  std::vector<S> inv_k(n);
  for (std::size_t v = 0; v < n; ++v) {
    const std::size_t len = lengths[v];
    if (len > frames || ks[v] < 1 || ks[v] > len) {
      throw ArgumentError("topk_pool: video " + std::to_string(v) + " has length " +
                          std::to_string(len) + " and k=" + std::to_string(ks[v]));
    }
    inv_k[v] = S{1} / static_cast<S>(ks[v]);
    for (std::size_t c = 0; c < classes; ++c) {
      const S* base = xv.raw() + v * frames * classes + c;
      auto idx = detail::topk_indices(base, len, ks[v], classes);
      S total{0};
      for (std::size_t f : idx) total += base[f * classes];
      out(v, c) = total * inv_k[v];
      picked[v * classes + c] = std::move(idx);
    }
  }
  return tape.record(std::move(out), {x},
                     [x, picked = std::move(picked), inv_k, frames, classes](Tape<S>& t,
                                                                             std::size_t self) {
    const Tensor<S>& dy = t.grad_of_node(self);
    Tensor<S>& dx = t.grad_mut(x);
    for (std::size_t cell = 0; cell < picked.size(); ++cell) {
      const std::size_t v = cell / classes, c = cell % classes;
      const S g = dy[cell] * inv_k[v];
      for (std::size_t f : picked[cell]) dx[(v * frames + f) * classes + c] += g;
    }
  });
}

}  // namespace sfnet
