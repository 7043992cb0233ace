// Copyright 2026 The netquant Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal trainable network: sequential layers with optional identity skip
// connections, forward and backward passes over NCHW float batches.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "netquant/codebook.hpp"
#include "netquant/error.hpp"
#include "netquant/rng.hpp"
#include "netquant/tensor.hpp"

namespace netquant {

enum class LayerKind : std::uint8_t { conv2d = 0, dense = 1, relu = 2, maxpool = 3, add = 4, softmax_loss = 5 };

inline const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::add: return "add";
    case LayerKind::softmax_loss: return "softmax-loss";
  }
  return "?";
}

/// Kind-specific hyperparameters. Unused fields stay zero.
struct LayerParams {
  std::size_t in_channels = 0;   // conv: input channels; dense: input features
  std::size_t out_channels = 0;  // conv: filters; dense: output features
  std::size_t kernel = 0;        // conv kernel side / pool window
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t skip_from = 0;  // add: activation index summed with the input (0 = network input)

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct Layer {
  LayerKind kind = LayerKind::relu;
  LayerParams params;
  Tensor weights;  // conv: [out, in, k, k]; dense: [out, in]
  Tensor bias;     // [out]
  Mask mask;       // same shape as weights
  std::optional<Codebook> codebook;

  bool weighted() const noexcept { return kind == LayerKind::conv2d || kind == LayerKind::dense; }

  /// A layer whose weights are all frozen also stops training its bias so a
  /// fully quantized network is static under retraining.
  bool bias_trainable() const { return weighted() && mask.any_trainable(); }

  static Layer conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                      std::size_t padding = 0) {
    Layer l;
    l.kind = LayerKind::conv2d;
    l.params = {in, out, kernel, stride, padding, 0};
    l.weights = Tensor({out, in, kernel, kernel});
    l.bias = Tensor({out});
    l.mask = Mask(l.weights.shape());
    return l;
  }
  static Layer dense(std::size_t in, std::size_t out) {
    Layer l;
    l.kind = LayerKind::dense;
    l.params = {in, out, 0, 1, 0, 0};
    l.weights = Tensor({out, in});
    l.bias = Tensor({out});
    l.mask = Mask(l.weights.shape());
    return l;
  }
  static Layer relu() { return Layer{}; }
  static Layer maxpool(std::size_t window, std::size_t stride) {
    Layer l;
    l.kind = LayerKind::maxpool;
    l.params.kernel = window;
    l.params.stride = stride;
    return l;
  }
  static Layer add(std::size_t skip_from) {
    Layer l;
    l.kind = LayerKind::add;
    l.params.skip_from = skip_from;
    return l;
  }
  static Layer softmax_loss() {
    Layer l;
    l.kind = LayerKind::softmax_loss;
    return l;
  }
};

/// Loss and accuracy of one forward pass.
struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Per-layer parameter gradients; empty tensors for unweighted layers.
struct Gradients {
  std::vector<Tensor> weights;
  std::vector<Tensor> bias;
};

/// Activations recorded by a forward pass. acts[0] is the input batch and
/// acts[i + 1] the output of layer i; the softmax-loss layer stores
/// probabilities.
struct ForwardCache {
  std::vector<Tensor> acts;
  std::vector<std::vector<std::uint32_t>> argmax;  // maxpool winners per layer
  std::vector<std::int32_t> labels;
};

namespace detail {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

inline std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Output columns [lo, hi) whose input column ow * s + kj - p lies inside [0, W).
inline std::pair<std::size_t, std::size_t> valid_cols(std::size_t W, std::size_t kj, std::size_t s, std::size_t p,
                                                      std::size_t OW) {
  std::size_t lo = 0;
  while (lo < OW && lo * s + kj < p) ++lo;
  std::size_t hi = lo;
  while (hi < OW && hi * s + kj - p < W) ++hi;
  return {lo, hi};
}

// col is [C*k*k, OH*OW]
inline void im2col(const float* x, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t s,
                   std::size_t p, std::size_t OH, std::size_t OW, float* col) {
  const std::size_t cols = OH * OW;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        float* row = col + ((c * k + ki) * k + kj) * cols;
        const auto [lo, hi] = valid_cols(W, kj, s, p, OW);
        for (std::size_t oh = 0; oh < OH; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s + ki) - static_cast<std::ptrdiff_t>(p);
          float* dst = row + oh * OW;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(dst, dst + OW, 0.0f);
            continue;
          }
          const float* src = x + (c * H + static_cast<std::size_t>(ih)) * W;
          std::fill(dst, dst + lo, 0.0f);
          if (s == 1) {
            if (hi > lo) std::copy(src + lo + kj - p, src + hi + kj - p, dst + lo);
          } else {
            for (std::size_t ow = lo; ow < hi; ++ow) dst[ow] = src[ow * s + kj - p];
          }
          std::fill(dst + hi, dst + OW, 0.0f);
        }
      }
    }
  }
}

inline void col2im(const float* col, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t s,
                   std::size_t p, std::size_t OH, std::size_t OW, float* x) {
  const std::size_t cols = OH * OW;
  std::fill(x, x + C * H * W, 0.0f);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const float* row = col + ((c * k + ki) * k + kj) * cols;
        const auto [lo, hi] = valid_cols(W, kj, s, p, OW);
        for (std::size_t oh = 0; oh < OH; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s + ki) - static_cast<std::ptrdiff_t>(p);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
          float* dst = x + (c * H + static_cast<std::size_t>(ih)) * W;
          const float* src = row + oh * OW;
          for (std::size_t ow = lo; ow < hi; ++ow) dst[ow * s + kj - p] += src[ow];
        }
      }
    }
  }
}

}  // namespace detail

class Network {
 public:
  Network() = default;

  /// `input_shape` is per sample: {C, H, W} for images or {features}.
  Network(Shape input_shape, std::vector<Layer> layers)
      : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
    validate();
  }

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::vector<Layer>& layers() noexcept { return layers_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  Layer& layer(std::size_t i) { return layers_.at(i); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t size() const noexcept { return layers_.size(); }

  /// Per-sample activation shapes; entry 0 is the input, entry i + 1 the
  /// output of layer i.
  const std::vector<Shape>& activation_shapes() const noexcept { return shapes_; }

  std::size_t num_classes() const { return shape_size(shapes_.at(shapes_.size() - 2)); }

  std::vector<std::size_t> weighted_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (layers_[i].weighted()) out.push_back(i);
    return out;
  }

  std::size_t num_weights() const {
    std::size_t n = 0;
    for (const auto& l : layers_)
      if (l.weighted()) n += l.weights.size();
    return n;
  }

  friend bool same_parameters(const Network& a, const Network& b) {
    if (a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
      const auto& x = a.layers_[i];
      const auto& y = b.layers_[i];
      if (x.kind != y.kind || !(x.params == y.params)) return false;
      if (!bit_equal(x.weights, y.weights) || !bit_equal(x.bias, y.bias) || !(x.mask == y.mask)) return false;
    }
    return true;
  }

  static bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::equal(a.values().begin(), a.values().end(), b.values().begin(),
                      [](float x, float y) { return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y); });
  }

 private:
  void validate() {
    shapes_.clear();
    shapes_.push_back(input_shape_);
    if (input_shape_.empty() || shape_size(input_shape_) == 0) throw ConfigError("empty input shape");
    if (layers_.empty() || layers_.back().kind != LayerKind::softmax_loss)
      throw ConfigError("network must end with a softmax-loss layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Layer& l = layers_[i];
      const Shape& in = shapes_.back();
      auto fail = [&](const std::string& why) {
        throw ConfigError("layer " + std::to_string(i) + " (" + to_string(l.kind) + "): " + why + ", input " +
                          shape_string(in));
      };
      Shape out;
      switch (l.kind) {
        case LayerKind::conv2d: {
          const auto& p = l.params;
          if (in.size() != 3 || in[0] != p.in_channels) fail("channel mismatch");
          if (p.kernel == 0 || p.stride == 0 || in[1] + 2 * p.padding < p.kernel || in[2] + 2 * p.padding < p.kernel)
            fail("kernel does not fit");
          if (l.weights.shape() != Shape{p.out_channels, p.in_channels, p.kernel, p.kernel}) fail("weight shape");
          out = {p.out_channels, detail::conv_out(in[1], p.kernel, p.stride, p.padding),
                 detail::conv_out(in[2], p.kernel, p.stride, p.padding)};
          break;
        }
        case LayerKind::dense:
          if (shape_size(in) != l.params.in_channels) fail("feature count mismatch");
          if (l.weights.shape() != Shape{l.params.out_channels, l.params.in_channels}) fail("weight shape");
          out = {l.params.out_channels};
          break;
        case LayerKind::relu:
          out = in;
          break;
        case LayerKind::maxpool:
          if (in.size() != 3 || l.params.kernel == 0 || l.params.stride == 0 || in[1] < l.params.kernel ||
              in[2] < l.params.kernel)
            fail("pool window does not fit");
          out = {in[0], (in[1] - l.params.kernel) / l.params.stride + 1,
                 (in[2] - l.params.kernel) / l.params.stride + 1};
          break;
        case LayerKind::add:
          if (l.params.skip_from > i || shapes_[l.params.skip_from] != in) fail("skip shape mismatch");
          out = in;
          break;
        case LayerKind::softmax_loss:
          if (i + 1 != layers_.size()) fail("softmax-loss must be last");
          if (shape_size(in) < 2) fail("need at least two classes");
          out = {shape_size(in)};
          break;
      }
      if (l.weighted()) {
        if (l.bias.shape() != Shape{l.params.out_channels}) fail("bias shape");
        if (l.mask.shape() != l.weights.shape()) fail("mask shape");
      } else if (!l.weights.empty() || l.mask.size() != 0) {
        fail("unweighted layer carries parameters");
      }
      shapes_.push_back(std::move(out));
    }
  }

  Shape input_shape_;
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
};

/// He-style fan-in initialisation: N(0, 2 / fan_in) weights, zero biases.
inline void he_initialize(Network& net, Rng& rng) {
  for (auto& l : net.layers()) {
    if (!l.weighted()) continue;
    const std::size_t fan_in = l.weights.size() / l.params.out_channels;
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& w : l.weights.values()) w = static_cast<float>(rng.normal(0.0, stddev));
    l.bias.fill(0.0f);
  }
}

namespace detail {

inline Shape batch_shape(std::size_t n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

inline void layer_forward(const Network& net, std::size_t i, const Tensor& weights, ForwardCache& cache) {
  const Layer& l = net.layer(i);
  const Tensor& x = cache.acts[i];
  const std::size_t n = x.dim(0);
  const Shape& in_shape = net.activation_shapes()[i];
  const Shape& out_shape = net.activation_shapes()[i + 1];
  Tensor y(batch_shape(n, out_shape));
  switch (l.kind) {
    case LayerKind::conv2d: {
      const auto& p = l.params;
      const std::size_t C = in_shape[0], H = in_shape[1], W = in_shape[2];
      const std::size_t OH = out_shape[1], OW = out_shape[2];
      const std::size_t ckk = C * p.kernel * p.kernel, cols = OH * OW;
      FloatBuffer col(ckk * cols);
      MapConstMat wm(weights.data(), static_cast<Eigen::Index>(p.out_channels), static_cast<Eigen::Index>(ckk));
      Eigen::Map<const Eigen::VectorXf> b(l.bias.data(), static_cast<Eigen::Index>(p.out_channels));
      for (std::size_t s = 0; s < n; ++s) {
        im2col(x.data() + s * C * H * W, C, H, W, p.kernel, p.stride, p.padding, OH, OW, col.data());
        MapConstMat cm(col.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(cols));
        MapMat ym(y.data() + s * p.out_channels * cols, static_cast<Eigen::Index>(p.out_channels),
                  static_cast<Eigen::Index>(cols));
        ym.noalias() = wm * cm;
        ym.colwise() += b;
      }
      break;
    }
    case LayerKind::dense: {
      const auto in = static_cast<Eigen::Index>(l.params.in_channels);
      const auto out = static_cast<Eigen::Index>(l.params.out_channels);
      MapConstMat xm(x.data(), static_cast<Eigen::Index>(n), in);
      MapConstMat wm(weights.data(), out, in);
      MapMat ym(y.data(), static_cast<Eigen::Index>(n), out);
      ym.noalias() = xm * wm.transpose();
      Eigen::Map<const Eigen::RowVectorXf> b(l.bias.data(), out);
      ym.rowwise() += b;
      break;
    }
    case LayerKind::relu:
      for (std::size_t j = 0; j < x.size(); ++j) y[j] = x[j] > 0.0f ? x[j] : 0.0f;
      break;
    case LayerKind::maxpool: {
      const std::size_t C = in_shape[0], H = in_shape[1], W = in_shape[2];
      const std::size_t OH = out_shape[1], OW = out_shape[2];
      const std::size_t k = l.params.kernel, st = l.params.stride;
      auto& arg = cache.argmax[i];
      arg.resize(y.size());
      std::size_t o = 0;
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t base = (s * C + c) * H * W;
          for (std::size_t oh = 0; oh < OH; ++oh) {
            for (std::size_t ow = 0; ow < OW; ++ow, ++o) {
              std::size_t best = base + (oh * st) * W + ow * st;
              for (std::size_t a = 0; a < k; ++a)
                for (std::size_t b = 0; b < k; ++b) {
                  const std::size_t idx = base + (oh * st + a) * W + ow * st + b;
                  if (x[idx] > x[best]) best = idx;
                }
              y[o] = x[best];
              arg[o] = static_cast<std::uint32_t>(best);
            }
          }
        }
      }
      break;
    }
    case LayerKind::add: {
      const Tensor& skip = cache.acts[l.params.skip_from];
      for (std::size_t j = 0; j < x.size(); ++j) y[j] = x[j] + skip[j];
      break;
    }
    case LayerKind::softmax_loss: {
      const std::size_t k = out_shape[0];
      for (std::size_t s = 0; s < n; ++s) {
        const float* z = x.data() + s * k;
        const float m = *std::max_element(z, z + k);
        double sum = 0.0;
        for (std::size_t c = 0; c < k; ++c) sum += std::exp(static_cast<double>(z[c] - m));
        for (std::size_t c = 0; c < k; ++c)
          y[s * k + c] = static_cast<float>(std::exp(static_cast<double>(z[c] - m)) / sum);
      }
      break;
    }
  }
  if (!y.all_finite()) throw NumericError("non-finite activation", i);
  cache.acts[i + 1] = std::move(y);
}

inline EvalResult score(const Network& net, const ForwardCache& cache) {
  const Tensor& logits = cache.acts[net.size() - 1];
  const std::size_t n = logits.dim(0);
  const std::size_t k = net.num_classes();
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t s = 0; s < n; ++s) {
    const float* z = logits.data() + s * k;
    const float m = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += std::exp(static_cast<double>(z[c]) - m);
    const auto label = static_cast<std::size_t>(cache.labels[s]);
    loss += std::log(sum) + m - static_cast<double>(z[label]);
    const std::size_t pred = static_cast<std::size_t>(std::max_element(z, z + k) - z);
    if (pred == label) ++correct;
  }
  return {loss / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
}

inline void check_batch(const Network& net, const Tensor& batch, std::span<const std::int32_t> labels) {
  if (batch.rank() == 0 || batch.dim(0) == 0) throw ArgumentError("empty batch");
  if (batch.dim(0) != labels.size())
    throw ConfigError("batch has " + std::to_string(batch.dim(0)) + " samples but " + std::to_string(labels.size()) +
                      " labels");
  const Shape sample(batch.shape().begin() + 1, batch.shape().end());
  if (sample != net.input_shape())
    throw ConfigError("batch sample shape " + shape_string(sample) + " does not match network input " +
                      shape_string(net.input_shape()));
  const auto k = static_cast<std::int32_t>(net.num_classes());
  for (auto y : labels)
    if (y < 0 || y >= k) throw ArgumentError("label " + std::to_string(y) + " out of range");
}

}  // namespace detail

/// Full forward pass recording every activation.
inline ForwardCache forward_cached(const Network& net, const Tensor& batch, std::span<const std::int32_t> labels) {
  detail::check_batch(net, batch, labels);
  ForwardCache cache;
  cache.acts.resize(net.size() + 1);
  cache.argmax.resize(net.size());
  cache.acts[0] = batch;
  cache.labels.assign(labels.begin(), labels.end());
  for (std::size_t i = 0; i < net.size(); ++i) detail::layer_forward(net, i, net.layer(i).weights, cache);
  return cache;
}

/// Mean cross-entropy and argmax accuracy. Does not modify the network.
inline EvalResult forward(const Network& net, const Tensor& batch, std::span<const std::int32_t> labels) {
  return detail::score(net, forward_cached(net, batch, labels));
}

/// Re-runs layers [from, end) on top of cached activations, substituting
/// `weights` for layer `from`'s own weights. The cache is scratch space: its
/// entries past `from` are overwritten.
inline EvalResult forward_from(const Network& net, std::size_t from, const Tensor& weights, ForwardCache& cache) {
  if (from >= net.size()) throw ArgumentError("layer index out of range");
  if (weights.shape() != net.layer(from).weights.shape()) throw ArgumentError("override weight shape mismatch");
  detail::layer_forward(net, from, weights, cache);
  for (std::size_t i = from + 1; i < net.size(); ++i) detail::layer_forward(net, i, net.layer(i).weights, cache);
  return detail::score(net, cache);
}

/// Gradients of the mean loss recorded in `cache` w.r.t. every weight and bias.
inline Gradients backward(const Network& net, const ForwardCache& cache) {
  using namespace detail;
  const std::size_t L = net.size();
  const std::size_t n = cache.acts[0].dim(0);
  Gradients g;
  g.weights.resize(L);
  g.bias.resize(L);
  std::vector<Tensor> dacts(L + 1);
  // d loss / d logits = (softmax - onehot) / n
  {
    const Tensor& probs = cache.acts[L];
    const std::size_t k = net.num_classes();
    Tensor d(cache.acts[L - 1].shape());
    const float inv_n = 1.0f / static_cast<float>(n);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t c = 0; c < k; ++c) {
        const float onehot = static_cast<std::size_t>(cache.labels[s]) == c ? 1.0f : 0.0f;
        d[s * k + c] = (probs[s * k + c] - onehot) * inv_n;
      }
    }
    dacts[L - 1] = std::move(d);
  }
  for (std::size_t ii = L - 1; ii-- > 0;) {
    const Layer& l = net.layer(ii);
    const Tensor& x = cache.acts[ii];
    Tensor& dy = dacts[ii + 1];
    if (dy.empty()) dy = Tensor(cache.acts[ii + 1].shape());
    const bool need_dx = ii > 0;
    Tensor dx;
    const Shape& in_shape = net.activation_shapes()[ii];
    const Shape& out_shape = net.activation_shapes()[ii + 1];
    switch (l.kind) {
      case LayerKind::conv2d: {
        const auto& p = l.params;
        const std::size_t C = in_shape[0], H = in_shape[1], W = in_shape[2];
        const std::size_t OH = out_shape[1], OW = out_shape[2];
        const std::size_t ckk = C * p.kernel * p.kernel, cols = OH * OW;
        const auto oc = static_cast<Eigen::Index>(p.out_channels);
        g.weights[ii] = Tensor(l.weights.shape());
        g.bias[ii] = Tensor(l.bias.shape());
        MapMat dw(g.weights[ii].data(), oc, static_cast<Eigen::Index>(ckk));
        Eigen::Map<Eigen::VectorXf> db(g.bias[ii].data(), oc);
        MapConstMat wm(l.weights.data(), oc, static_cast<Eigen::Index>(ckk));
        FloatBuffer col(ckk * cols), dcol(need_dx ? ckk * cols : 0);
        if (need_dx) dx = Tensor(x.shape());
        for (std::size_t s = 0; s < n; ++s) {
          im2col(x.data() + s * C * H * W, C, H, W, p.kernel, p.stride, p.padding, OH, OW, col.data());
          MapConstMat cm(col.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(cols));
          MapConstMat dym(dy.data() + s * p.out_channels * cols, oc, static_cast<Eigen::Index>(cols));
          dw.noalias() += dym * cm.transpose();
          db += dym.rowwise().sum();
          if (need_dx) {
            MapMat dcm(dcol.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(cols));
            dcm.noalias() = wm.transpose() * dym;
            col2im(dcol.data(), C, H, W, p.kernel, p.stride, p.padding, OH, OW, dx.data() + s * C * H * W);
          }
        }
        break;
      }
      case LayerKind::dense: {
        const auto in = static_cast<Eigen::Index>(l.params.in_channels);
        const auto out = static_cast<Eigen::Index>(l.params.out_channels);
        g.weights[ii] = Tensor(l.weights.shape());
        g.bias[ii] = Tensor(l.bias.shape());
        MapConstMat xm(x.data(), static_cast<Eigen::Index>(n), in);
        MapConstMat dym(dy.data(), static_cast<Eigen::Index>(n), out);
        MapMat dw(g.weights[ii].data(), out, in);
        dw.noalias() = dym.transpose() * xm;
        Eigen::Map<Eigen::RowVectorXf> db(g.bias[ii].data(), out);
        db = dym.colwise().sum();
        if (need_dx) {
          dx = Tensor(x.shape());
          MapConstMat wm(l.weights.data(), out, in);
          MapMat dxm(dx.data(), static_cast<Eigen::Index>(n), in);
          dxm.noalias() = dym * wm;
        }
        break;
      }
      case LayerKind::relu:
        if (need_dx) {
          dx = Tensor(x.shape());
          for (std::size_t j = 0; j < x.size(); ++j) dx[j] = x[j] > 0.0f ? dy[j] : 0.0f;
        }
        break;
      case LayerKind::maxpool:
        if (need_dx) {
          dx = Tensor(x.shape());
          const auto& arg = cache.argmax[ii];
          for (std::size_t o = 0; o < dy.size(); ++o) dx[arg[o]] += dy[o];
        }
        break;
      case LayerKind::add: {
        const std::size_t skip = l.params.skip_from;
        if (skip > 0) {
          Tensor& ds = dacts[skip];
          if (ds.empty()) ds = Tensor(cache.acts[skip].shape());
          for (std::size_t j = 0; j < dy.size(); ++j) ds[j] += dy[j];
        }
        if (need_dx) dx = dy;
        break;
      }
      case LayerKind::softmax_loss:
        break;
    }
    if (need_dx) {
      Tensor& acc = dacts[ii];
      if (acc.empty()) {
        acc = std::move(dx);
      } else {
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += dx[j];
      }
    }
    dy = Tensor();  // release
    if (l.weighted() && (!g.weights[ii].all_finite() || !g.bias[ii].all_finite()))
      throw NumericError("non-finite gradient", ii);
  }
  return g;
}

inline Gradients backward(const Network& net, const Tensor& batch, std::span<const std::int32_t> labels) {
  return backward(net, forward_cached(net, batch, labels));
}

}  // namespace netquant
