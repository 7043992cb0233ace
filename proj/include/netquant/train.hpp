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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "netquant/error.hpp"
#include "netquant/network.hpp"
#include "netquant/rng.hpp"
#include "netquant/tensor.hpp"

namespace netquant {

/// Samples stacked along the leading dimension of `images`.
struct Dataset {
  Tensor images;
  std::vector<std::int32_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }

  Tensor gather(std::span<const std::size_t> index) const {
    const Shape sample = sample_shape();
    const std::size_t stride = shape_size(sample);
    Shape shape{index.size()};
    shape.insert(shape.end(), sample.begin(), sample.end());
    Tensor out(shape);
    for (std::size_t i = 0; i < index.size(); ++i)
      std::copy_n(images.data() + index[i] * stride, stride, out.data() + i * stride);
    return out;
  }

  std::vector<std::int32_t> gather_labels(std::span<const std::size_t> index) const {
    std::vector<std::int32_t> out(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) out[i] = labels[index[i]];
    return out;
  }

  Dataset subset(std::span<const std::size_t> index) const { return {gather(index), gather_labels(index)}; }

  /// First n samples (or all of them when n >= size()).
  Dataset head(std::size_t n) const {
    std::vector<std::size_t> idx(std::min(n, size()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return subset(idx);
  }
};

enum class LrSchedule { constant, step_decay };

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 64;
  std::size_t epochs = 1;
  LrSchedule schedule = LrSchedule::constant;
  double decay_factor = 0.1;
  std::size_t decay_interval = 1;  // epochs between decays

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
    if (batch_size == 0) throw ConfigError("batch size must be at least 1");
    if (schedule == LrSchedule::step_decay && (decay_interval == 0 || !(decay_factor > 0.0)))
      throw ConfigError("step decay needs a positive factor and interval");
  }

  double rate_at(std::size_t epoch) const {
    if (schedule == LrSchedule::constant) return learning_rate;
    return learning_rate * std::pow(decay_factor, static_cast<double>(epoch / decay_interval));
  }
};

/// Momentum buffers, one per weight/bias element.
struct SgdState {
  std::vector<std::vector<float>> weight_velocity;
  std::vector<std::vector<float>> bias_velocity;

  explicit SgdState(const Network& net) {
    weight_velocity.resize(net.size());
    bias_velocity.resize(net.size());
    for (std::size_t i = 0; i < net.size(); ++i) {
      weight_velocity[i].assign(net.layer(i).weights.size(), 0.0f);
      bias_velocity[i].assign(net.layer(i).bias.size(), 0.0f);
    }
  }
};

/// Masked momentum SGD:
///   v <- momentum * v + grad + decay * w,   w <- w - rate * v   where mask = 1
///   v <- 0, w untouched                                         where mask = 0
/// Biases follow the same rule without decay and train only while their layer
/// has at least one trainable weight.
inline void sgd_step_masked(Network& net, const Gradients& grads, const TrainConfig& config, SgdState& state,
                            double rate) {
  if (grads.weights.size() != net.size() || grads.bias.size() != net.size())
    throw ArgumentError("gradient set does not match network");
  const auto mu = static_cast<float>(config.momentum);
  const auto decay = static_cast<float>(config.weight_decay);
  const auto lr = static_cast<float>(rate);
  for (std::size_t i = 0; i < net.size(); ++i) {
    Layer& l = net.layer(i);
    if (!l.weighted()) continue;
    const Tensor& gw = grads.weights[i];
    const Tensor& gb = grads.bias[i];
    if (gw.shape() != l.weights.shape() || gb.shape() != l.bias.shape())
      throw ArgumentError("gradient shape mismatch at layer " + std::to_string(i));
    auto& vw = state.weight_velocity[i];
    for (std::size_t j = 0; j < l.weights.size(); ++j) {
      if (!l.mask.trainable(j)) {
        vw[j] = 0.0f;
        continue;
      }
      vw[j] = mu * vw[j] + gw[j] + decay * l.weights[j];
      l.weights[j] -= lr * vw[j];
    }
    auto& vb = state.bias_velocity[i];
    if (!l.bias_trainable()) {
      std::fill(vb.begin(), vb.end(), 0.0f);
      continue;
    }
    for (std::size_t j = 0; j < l.bias.size(); ++j) {
      vb[j] = mu * vb[j] + gb[j];
      l.bias[j] -= lr * vb[j];
    }
  }
}

struct EpochRow {
  std::size_t epoch = 0;
  double loss = 0.0;      // mean mini-batch training loss
  double accuracy = 0.0;  // mean mini-batch training accuracy
  double learning_rate = 0.0;
};

/// Mean loss/accuracy over a dataset, evaluated in chunks.
inline EvalResult evaluate(const Network& net, const Dataset& data, std::size_t chunk = 250) {
  if (data.empty()) throw ArgumentError("empty dataset");
  double loss = 0.0, acc = 0.0;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t n = std::min(chunk, data.size() - start);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    const auto r = forward(net, data.gather(idx), data.gather_labels(idx));
    loss += r.loss * static_cast<double>(n);
    acc += r.accuracy * static_cast<double>(n);
  }
  return {loss / static_cast<double>(data.size()), acc / static_cast<double>(data.size())};
}

using EpochCallback = std::function<void(const EpochRow&)>;

/// Shuffled mini-batch masked SGD for config.epochs epochs. The learning rate
/// schedule starts from config.learning_rate and momentum starts at zero on
/// every call.
inline std::vector<EpochRow> train(Network& net, const Dataset& data, const TrainConfig& config, Rng& rng,
                                   const EpochCallback& on_epoch = {}) {
  config.validate();
  if (data.empty()) throw ArgumentError("empty dataset");
  std::vector<EpochRow> rows;
  const bool anything_trainable = std::any_of(net.layers().begin(), net.layers().end(),
                                              [](const Layer& l) { return l.weighted() && l.mask.any_trainable(); });
  if (config.epochs == 0 || !anything_trainable) return rows;
  SgdState state(net);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    const double rate = config.rate_at(epoch);
    double loss = 0.0, acc = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      std::span<const std::size_t> idx(order.data() + start, n);
      const auto labels = data.gather_labels(idx);
      const auto cache = forward_cached(net, data.gather(idx), labels);
      const auto r = detail::score(net, cache);
      loss += r.loss * static_cast<double>(n);
      acc += r.accuracy * static_cast<double>(n);
      sgd_step_masked(net, backward(net, cache), config, state, rate);
    }
    EpochRow row{epoch, loss / static_cast<double>(data.size()), acc / static_cast<double>(data.size()), rate};
    rows.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return rows;
}

}  // namespace netquant
