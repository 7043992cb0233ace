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

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "reference.hpp"

namespace {

using namespace netquant;
using namespace nqtest;

// ---------------------------------------------------------------------------
// forward

TEST(Forward, IdentityDenseOneHotIsCorrect) {
  std::vector<Layer> layers{Layer::dense(4, 4), Layer::softmax_loss()};
  for (std::size_t i = 0; i < 4; ++i) layers[0].weights[i * 4 + i] = 1.0f;
  Network net({4}, std::move(layers));
  Tensor x({4, 4});
  for (std::size_t i = 0; i < 4; ++i) x[i * 4 + i] = 1.0f;
  const auto r = forward(net, x, std::vector<std::int32_t>{0, 1, 2, 3});
  EXPECT_EQ(r.accuracy, 1.0);
}

TEST(Forward, ZeroWeightsGiveUniformSoftmax) {
  Network net({7}, {Layer::dense(7, 10), Layer::softmax_loss()});
  Rng rng(3);
  const auto x = random_tensor({5, 7}, rng);
  const auto r = forward(net, x, random_labels(5, 10, rng));
  EXPECT_NEAR(r.loss, std::log(10.0), 1e-5);
}

TEST(Forward, MlpMatchesScalarReference) {
  Rng rng(11);
  Network net = mlp({6}, {8, 5}, 4);
  randomize(net, rng);
  const auto x = random_tensor({9, 6}, rng);
  const auto y = random_labels(9, 4, rng);
  double loss = 0.0;
  for (std::size_t s = 0; s < 9; ++s) {
    std::vector<double> a(x.data() + s * 6, x.data() + (s + 1) * 6);
    for (const Layer& l : net.layers()) {
      if (l.kind == LayerKind::dense) a = ref_dense(a, l);
      if (l.kind == LayerKind::relu)
        for (double& v : a) v = std::max(v, 0.0);
    }
    loss += ref_xent(a, static_cast<std::size_t>(y[s]));
  }
  EXPECT_NEAR(forward(net, x, y).loss, loss / 9.0, 1e-5);
}

TEST(Forward, ConvPoolMatchesScalarReference) {
  Rng rng(12);
  Network net({2, 6, 6}, {Layer::conv2d(2, 3, 3, 1, 1), Layer::relu(), Layer::maxpool(2, 2), Layer::dense(27, 3),
                          Layer::softmax_loss()});
  randomize(net, rng);
  const auto x = random_tensor({4, 2, 6, 6}, rng);
  const auto y = random_labels(4, 3, rng);
  double loss = 0.0;
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<double> a(x.data() + s * 72, x.data() + (s + 1) * 72);
    a = ref_conv(a, 2, 6, 6, net.layer(0));
    for (double& v : a) v = std::max(v, 0.0);
    std::vector<double> p(27, -1e300);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) {
          double& t = p[(c * 3 + i / 2) * 3 + j / 2];
          t = std::max(t, a[(c * 6 + i) * 6 + j]);
        }
    loss += ref_xent(ref_dense(p, net.layer(3)), static_cast<std::size_t>(y[s]));
  }
  EXPECT_NEAR(forward(net, x, y).loss, loss / 4.0, 1e-5);
}

TEST(Forward, ShapeMismatchIsConfigError) {
  EXPECT_THROW(Network({5}, {Layer::dense(4, 3), Layer::softmax_loss()}), ConfigError);
  Network net({4}, {Layer::dense(4, 3), Layer::softmax_loss()});
  EXPECT_THROW(forward(net, Tensor({2, 5}), std::vector<std::int32_t>{0, 1}), ConfigError);
}

TEST(Forward, NonFiniteActivationNamesLayer) {
  Network net({2}, {Layer::dense(2, 2), Layer::relu(), Layer::dense(2, 2), Layer::softmax_loss()});
  net.layer(2).weights[0] = std::numeric_limits<float>::infinity();
  Tensor x({1, 2}, 1.0f);
  try {
    forward(net, x, std::vector<std::int32_t>{0});
    FAIL() << "expected a numeric error";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.layer(), 2u);
  }
}

// ---------------------------------------------------------------------------
// backward

TEST(Backward, ZeroInputGivesZeroWeightGradient) {
  Rng rng(5);
  Network net({6}, {Layer::dense(6, 3), Layer::softmax_loss()});
  randomize(net, rng);
  const auto g = backward(net, Tensor({4, 6}), random_labels(4, 3, rng));
  for (float v : g.weights[0].values()) EXPECT_EQ(v, 0.0f);
}


TEST(Forward, DoubleReferenceAgreesWithLibrary) {
  Rng rng(13);
  Network net({2, 5, 5}, {Layer::conv2d(2, 2, 3, 1, 1), Layer::relu(), Layer::conv2d(2, 2, 3, 1, 1), Layer::add(0),
                          Layer::maxpool(2, 2), Layer::dense(8, 3), Layer::softmax_loss()});
  randomize(net, rng);
  const Tensor x = random_tensor({3, 2, 5, 5}, rng);
  const auto y = random_labels(3, 3, rng);
  EXPECT_NEAR(forward(net, x, y).loss, ref_loss(net, x, y), 1e-5);
}

/// Central differences with eps = 1e-3 of the double-precision reference
/// loss against the analytic gradient of every weight and bias, relative
/// tolerance 1e-2. Components where both values are below 1e-6 only need to
/// agree to 1e-6. A component whose perturbation flips a ReLU or changes a
/// max-pool winner is not differentiable over the step and is skipped; at
/// most 5% of components may be skipped.

class GradientCheck : public ::testing::TestWithParam<std::tuple<int, std::uint64_t>> {};


TEST_P(GradientCheck, MatchesFiniteDifferences) {
  const auto [which, seed] = GetParam();
  SCOPED_TRACE(grad_cases()[static_cast<std::size_t>(which)].name);
  const GradReport rep = run_grad_case(static_cast<std::size_t>(which), seed);
  for (const auto& f : rep.failures) ADD_FAILURE() << f;
  EXPECT_GT(rep.checked, 0u);
  EXPECT_LE(static_cast<double>(rep.skipped), 0.05 * static_cast<double>(rep.checked + rep.skipped));
}

INSTANTIATE_TEST_SUITE_P(AllKinds, GradientCheck,
                         ::testing::Combine(::testing::Range(0, 6), ::testing::Values(1u, 2u, 3u, 4u, 5u)));

TEST(Backward, BiasGradientIsSumOfOutputGradient) {
  // for dense logits, d loss / d bias_c = mean over the batch of (p_c - onehot_c)
  Rng rng(21);
  Network net({3}, {Layer::dense(3, 4), Layer::softmax_loss()});
  randomize(net, rng);
  const auto x = random_tensor({6, 3}, rng);
  const auto y = random_labels(6, 4, rng);
  const auto cache = forward_cached(net, x, y);
  const auto g = backward(net, cache);
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0.0;
    for (std::size_t n = 0; n < 6; ++n) s += cache.acts[2][n * 4 + c] - (y[n] == static_cast<int>(c) ? 1.0 : 0.0);
    EXPECT_NEAR(g.bias[0][c], s / 6.0, 1e-6);
  }
}

// ---------------------------------------------------------------------------
// sgd_step_masked / train

Gradients gradients_like(const Network& net, float fill) {
  Gradients g;
  for (const auto& l : net.layers()) {
    g.weights.push_back(Tensor(l.weights.shape(), l.weighted() ? fill : 0.0f));
    g.bias.push_back(Tensor(l.bias.shape(), l.weighted() ? fill : 0.0f));
  }
  return g;
}

TEST(Sgd, AllOnesMaskIsPlainSgd) {
  Rng rng(4);
  Network net({3}, {Layer::dense(3, 2), Layer::softmax_loss()});
  randomize(net, rng);
  const Network before = net;
  TrainConfig tc;
  tc.momentum = 0.0;
  tc.weight_decay = 0.0;
  auto g = gradients_like(net, 0.0f);
  for (std::size_t i = 0; i < g.weights[0].size(); ++i) g.weights[0][i] = static_cast<float>(rng.normal());
  SgdState st(net);
  sgd_step_masked(net, g, tc, st, 0.1);
  for (std::size_t i = 0; i < 6; ++i)
    EXPECT_EQ(net.layer(0).weights[i], before.layer(0).weights[i] - 0.1f * g.weights[0][i]);
}

TEST(Sgd, AllZeroMaskIsIdentity) {
  Rng rng(4);
  Network net({3}, {Layer::dense(3, 2), Layer::softmax_loss()});
  randomize(net, rng);
  for (std::size_t i = 0; i < 6; ++i) net.layer(0).mask.freeze(i);
  const Network before = net;
  SgdState st(net);
  sgd_step_masked(net, gradients_like(net, 0.7f), TrainConfig{}, st, 0.1);
  EXPECT_TRUE(same_parameters(net, before));
}

TEST(Sgd, MixedMaskHandComputed) {
  Network net({2}, {Layer::dense(2, 2), Layer::softmax_loss()});
  auto& w = net.layer(0).weights;
  w[0] = 1.0f, w[1] = -2.0f, w[2] = 0.5f, w[3] = 3.0f;
  net.layer(0).mask.freeze(1);
  net.layer(0).mask.freeze(2);
  TrainConfig tc;
  tc.momentum = 0.0;
  tc.weight_decay = 0.0;
  auto g = gradients_like(net, 0.0f);
  g.weights[0][0] = 0.4f, g.weights[0][1] = 1.0f, g.weights[0][2] = -1.0f, g.weights[0][3] = -0.2f;
  SgdState st(net);
  sgd_step_masked(net, g, tc, st, 0.1);
  EXPECT_FLOAT_EQ(w[0], 0.96f);
  EXPECT_EQ(w[1], -2.0f);
  EXPECT_EQ(w[2], 0.5f);
  EXPECT_FLOAT_EQ(w[3], 3.02f);
}

TEST(Sgd, MomentumAndDecayFollowTheUpdateRule) {
  Network net({1}, {Layer::dense(1, 2), Layer::softmax_loss()});
  net.layer(0).weights[0] = 2.0f;
  TrainConfig tc;
  tc.momentum = 0.5;
  tc.weight_decay = 0.1;
  auto g = gradients_like(net, 0.0f);
  g.weights[0][0] = 1.0f;
  SgdState st(net);
  sgd_step_masked(net, g, tc, st, 0.1);  // v = 1 + 0.2 = 1.2, w = 2 - 0.12
  EXPECT_FLOAT_EQ(net.layer(0).weights[0], 1.88f);
  sgd_step_masked(net, g, tc, st, 0.1);  // v = 0.6 + 1 + 0.188 = 1.788
  EXPECT_FLOAT_EQ(net.layer(0).weights[0], 1.88f - 0.1788f);
}

TEST(Train, ZeroEpochsLeavesNetworkUnchanged) {
  Rng rng(8);
  Network net = small_mlp(4, 5, 2, rng);
  const Network before = net;
  TrainConfig tc;
  tc.epochs = 0;
  train(net, separable_dataset(20, 4, 2, rng), tc, rng);
  EXPECT_TRUE(same_parameters(net, before));
}

TEST(Train, EmptyDatasetIsArgumentError) {
  Rng rng(8);
  Network net = small_mlp(4, 5, 2, rng);
  EXPECT_THROW(train(net, Dataset{}, TrainConfig{}, rng), ArgumentError);
}

TEST(Train, FullyMaskedNetworkIsUnchanged) {
  Rng rng(8);
  Network net = small_mlp(4, 5, 2, rng);
  for (auto& l : net.layers())
    for (std::size_t i = 0; i < l.mask.size(); ++i) l.mask.freeze(i);
  const Network before = net;
  TrainConfig tc;
  tc.epochs = 3;
  train(net, separable_dataset(40, 4, 2, rng), tc, rng);
  EXPECT_TRUE(same_parameters(net, before));
}

TEST(Train, SeparableToyReachesHighAccuracy) {
  Rng rng(9);
  const Dataset d = separable_dataset(200, 4, 2, rng);
  Network net = small_mlp(4, 8, 2, rng);
  TrainConfig tc;
  tc.epochs = 200;
  tc.learning_rate = 0.05;
  tc.batch_size = 32;
  train(net, d, tc, rng);
  EXPECT_GE(evaluate(net, d).accuracy, 0.99);
}

TEST(Train, SameSeedSameResult) {
  auto run = [] {
    Rng rng(10);
    const Dataset d = separable_dataset(64, 4, 2, rng);
    Network net = small_mlp(4, 6, 2, rng);
    TrainConfig tc;
    tc.epochs = 3;
    train(net, d, tc, rng);
    return net;
  };
  EXPECT_TRUE(same_parameters(run(), run()));
}

TEST(Train, StepDecaySchedule) {
  TrainConfig tc;
  tc.learning_rate = 1.0;
  tc.schedule = LrSchedule::step_decay;
  tc.decay_factor = 0.5;
  tc.decay_interval = 2;
  EXPECT_EQ(tc.rate_at(0), 1.0);
  EXPECT_EQ(tc.rate_at(1), 1.0);
  EXPECT_EQ(tc.rate_at(2), 0.5);
  EXPECT_EQ(tc.rate_at(5), 0.25);
}

TEST(Architectures, LightCnnHasSixWeightedLayers) {
  Rng rng(1);
  const Network net = make_architecture("light-cnn", rng);
  EXPECT_EQ(net.weighted_layers().size(), 6u);
  EXPECT_EQ(net.num_classes(), 10u);
  EXPECT_THROW(make_architecture("vgg", rng), ConfigError);
}

TEST(Architectures, ResnetLiteRuns) {
  Rng rng(1);
  const Network net = make_architecture("resnet20-lite", rng);
  const auto r = forward(net, random_tensor({2, 3, 32, 32}, rng), std::vector<std::int32_t>{1, 2});
  EXPECT_TRUE(std::isfinite(r.loss));
}

}  // namespace
