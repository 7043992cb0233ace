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

#include <cstddef>
#include <string>
#include <vector>

#include "netquant/error.hpp"
#include "netquant/network.hpp"
#include "netquant/rng.hpp"

namespace netquant {

namespace detail {

class LayerStack {
 public:
  LayerStack& push(Layer l) {
    layers_.push_back(std::move(l));
    return *this;
  }
  /// Activation index produced by the most recently pushed layer.
  std::size_t head() const noexcept { return layers_.size(); }

  /// conv-relu-conv-add-relu with an identity skip.
  LayerStack& residual_block(std::size_t channels) {
    const std::size_t skip = head();
    push(Layer::conv2d(channels, channels, 3, 1, 1)).push(Layer::relu());
    push(Layer::conv2d(channels, channels, 3, 1, 1)).push(Layer::add(skip)).push(Layer::relu());
    return *this;
  }
  std::vector<Layer> take() && { return std::move(layers_); }

 private:
  std::vector<Layer> layers_;
};

}  // namespace detail

/// Light CNN for 3x32x32 inputs, three conv and three fully connected layers:
/// conv5x5(32)-pool-conv5x5(32)-pool-conv5x5(64)-pool-fc64-fc32-fc(classes).
inline Network light_cnn(std::size_t classes = 10) {
  detail::LayerStack s;
  s.push(Layer::conv2d(3, 32, 5, 1, 2)).push(Layer::relu()).push(Layer::maxpool(2, 2));
  s.push(Layer::conv2d(32, 32, 5, 1, 2)).push(Layer::relu()).push(Layer::maxpool(2, 2));
  s.push(Layer::conv2d(32, 64, 5, 1, 2)).push(Layer::relu()).push(Layer::maxpool(2, 2));
  s.push(Layer::dense(64 * 4 * 4, 64)).push(Layer::relu());
  s.push(Layer::dense(64, 32)).push(Layer::relu());
  s.push(Layer::dense(32, classes)).push(Layer::softmax_loss());
  return Network({3, 32, 32}, std::move(s).take());
}

/// Fully connected ReLU network over flattened inputs.
inline Network mlp(const Shape& input, const std::vector<std::size_t>& hidden, std::size_t classes) {
  detail::LayerStack s;
  std::size_t in = shape_size(input);
  for (std::size_t h : hidden) {
    s.push(Layer::dense(in, h)).push(Layer::relu());
    in = h;
  }
  s.push(Layer::dense(in, classes)).push(Layer::softmax_loss());
  return Network(input, std::move(s).take());
}

/// Reduced-width residual network for 3x32x32 inputs. Three stages of one
/// identity residual block each (16/32/64 channels) joined by pooling and a
/// widening conv. Much shallower than a 20-layer residual net.
inline Network resnet20_lite(std::size_t classes = 10) {
  detail::LayerStack s;
  s.push(Layer::conv2d(3, 16, 3, 1, 1)).push(Layer::relu());
  s.residual_block(16).push(Layer::maxpool(2, 2));
  s.push(Layer::conv2d(16, 32, 3, 1, 1)).push(Layer::relu());
  s.residual_block(32).push(Layer::maxpool(2, 2));
  s.push(Layer::conv2d(32, 64, 3, 1, 1)).push(Layer::relu());
  s.residual_block(64).push(Layer::maxpool(2, 2));
  s.push(Layer::dense(64 * 4 * 4, classes)).push(Layer::softmax_loss());
  return Network({3, 32, 32}, std::move(s).take());
}

/// Builds a named architecture with He initialisation. `input` is only used
/// by "mlp".
inline Network make_architecture(const std::string& name, Rng& rng, const Shape& input = {3, 32, 32},
                                 std::size_t classes = 10) {
  Network net;
  if (name == "light-cnn") {
    net = light_cnn(classes);
  } else if (name == "mlp") {
    net = mlp(input, {256, 128}, classes);
  } else if (name == "resnet20-lite") {
    net = resnet20_lite(classes);
  } else {
    throw ConfigError("unknown architecture '" + name + "'");
  }
  he_initialize(net, rng);
  return net;
}

}  // namespace netquant
