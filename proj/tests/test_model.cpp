/*
 * Copyright 2026 The FedSim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "fedsim/model.hpp"
#include "gradcheck.hpp"

namespace fedsim {
namespace {

struct Batch {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  std::vector<Example> examples() const {
    std::vector<Example> out;
    for (std::size_t i = 0; i < x.size(); ++i) out.push_back({x[i], y[i]});
    return out;
  }
};

Batch random_batch(std::size_t n, std::size_t dim, std::size_t classes, Rng& rng) {
  Batch b;
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(dim);
    for (double& v : x) v = g(rng);
    b.x.push_back(std::move(x));
    b.y.push_back(static_cast<int>(uniform_index(rng, classes)));
  }
  return b;
}

// Two Gaussian blobs at +-2 on every coordinate.
Batch blobs(std::size_t n, std::size_t dim, Rng& rng) {
  Batch b;
  std::normal_distribution<double> g(0.0, 0.5);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    std::vector<double> x(dim);
    for (double& v : x) v = (y == 0 ? -2.0 : 2.0) + g(rng);
    b.x.push_back(std::move(x));
    b.y.push_back(y);
  }
  return b;
}

TEST(Forward, ZeroParamsGiveUniformProbabilities) {
  const auto p = ModelParams::zeros({{2, 3}, {3, 2}});
  const auto probs = forward(p, std::vector<double>{1.0, -4.0});
  EXPECT_DOUBLE_EQ(probs[0], 0.5);
  EXPECT_DOUBLE_EQ(probs[1], 0.5);
}

TEST(Forward, OutputBiasShiftsOdds) {
  auto p = ModelParams::zeros({{2, 3}, {3, 2}});
  p.values[p.size() - 2] = std::log(3.0);  // first output bias
  const auto probs = forward(p, std::vector<double>{0.3, 0.7});
  EXPECT_NEAR(probs[0], 0.75, 1e-12);
  EXPECT_NEAR(probs[1], 0.25, 1e-12);
  EXPECT_EQ(predict(p, std::vector<double>{0.3, 0.7}), 0);
}

TEST(Forward, HandComputedSingleLayer) {
  // Weights row-major (out x in) then biases.
  ModelParams p = ModelParams::zeros({{2, 2}});
  p.values = {1.0, 2.0, -1.0, 0.5, 0.1, -0.2};
  const std::vector<double> x{0.5, -1.0};
  const double z0 = 1.0 * 0.5 + 2.0 * -1.0 + 0.1, z1 = -1.0 * 0.5 + 0.5 * -1.0 - 0.2;
  const double p0 = std::exp(z0) / (std::exp(z0) + std::exp(z1));
  EXPECT_NEAR(forward(p, x)[0], p0, 1e-14);
}

TEST(Forward, WrongInputDimension) {
  const auto p = ModelParams::zeros({{2, 3}, {3, 2}});
  EXPECT_THROW(forward(p, std::vector<double>{1.0}), ShapeError);
}

class GradientCheck : public ::testing::TestWithParam<int> {};

TEST_P(GradientCheck, AnalyticMatchesFiniteDifferences) {
  Rng rng = make_rng(static_cast<std::uint64_t>(GetParam()), Stream::kModelInit);
  const std::size_t dim = 2 + uniform_index(rng, 5), hidden = 2 + uniform_index(rng, 6), classes = 2 + uniform_index(rng, 3);
  const auto params = init_mlp(dim, hidden, classes, rng);
  const auto batch = random_batch(1 + uniform_index(rng, 8), dim, classes, rng);
  const auto ex = batch.examples();
  auto anchor = params;
  for (double& v : anchor.values) v += 0.3 * (uniform01(rng) - 0.5);
  for (const auto& spec : {LossSpec::cross_entropy(), LossSpec::gce(0.7), LossSpec::proximal(0.1, anchor),
                           LossSpec::proximal(0.1, anchor, true)}) {
    SCOPED_TRACE(to_string(spec.kind));
    const auto analytic = loss_and_grad(params, ex, spec).grad;
    EXPECT_LT(gradcheck::relative_error(analytic, gradcheck::numeric_grad(params, ex, spec)), 1e-4);
  }
}

INSTANTIATE_TEST_SUITE_P(RandomModels, GradientCheck, ::testing::Range(1, 21));

TEST(Gradient, TinyTwoThreeTwoNetwork) {
  Rng rng(11);
  const auto params = init_mlp(2, 3, 2, rng);
  const std::vector<double> x0{0.4, -0.9}, x1{-1.2, 0.3};
  const std::vector<Example> ex{{x0, 0}, {x1, 1}};
  for (const auto& spec : {LossSpec::cross_entropy(), LossSpec::gce(0.7)}) {
    EXPECT_LT(gradcheck::relative_error(loss_and_grad(params, ex, spec).grad, gradcheck::numeric_grad(params, ex, spec)),
              1e-6);
  }
}

TEST(Loss, CrossEntropyOfUniformIsLogClasses) {
  const auto p = ModelParams::zeros({{2, 4}});
  const std::vector<double> x{1.0, 1.0};
  const std::vector<Example> ex{{x, 2}};
  EXPECT_NEAR(loss_and_grad(p, ex, LossSpec::cross_entropy()).loss, std::log(4.0), 1e-12);
  // (1 - 0.25^q) / q
  EXPECT_NEAR(loss_and_grad(p, ex, LossSpec::gce(0.5)).loss, (1.0 - 0.5) / 0.5, 1e-12);
}

TEST(Loss, GceApproachesCrossEntropyAsQShrinks) {
  Rng rng(4);
  const auto params = init_mlp(3, 4, 2, rng);
  const auto b = random_batch(6, 3, 2, rng);
  const auto ex = b.examples();
  EXPECT_NEAR(loss_and_grad(params, ex, LossSpec::gce(1e-3)).loss, loss_and_grad(params, ex, LossSpec::cross_entropy()).loss,
              5e-3);
}

TEST(Loss, ConfidentCorrectPredictionHasZeroLoss) {
  auto p = ModelParams::zeros({{1, 2}});
  p.values[2] = 800.0;  // p_target underflows to exactly 1
  const std::vector<double> x{0.0};
  const std::vector<Example> ex{{x, 0}};
  EXPECT_EQ(loss_and_grad(p, ex, LossSpec::cross_entropy()).loss, 0.0);
  EXPECT_EQ(loss_and_grad(p, ex, LossSpec::gce()).loss, 0.0);
}

TEST(Loss, UnderflowedTargetIsClamped) {
  auto p = ModelParams::zeros({{1, 2}});
  p.values[2] = 800.0;
  const std::vector<double> x{0.0};
  const std::vector<Example> ex{{x, 1}};
  const auto lg = loss_and_grad(p, ex, LossSpec::cross_entropy());
  EXPECT_NEAR(lg.loss, -std::log(kProbabilityFloor), 1e-9);
  for (double g : lg.grad) EXPECT_TRUE(std::isfinite(g));
}

TEST(Loss, ProximalAtAnchorEqualsCrossEntropy) {
  Rng rng(8);
  const auto params = init_mlp(3, 4, 2, rng);
  const auto b = random_batch(5, 3, 2, rng);
  const auto ex = b.examples();
  const auto ce = loss_and_grad(params, ex, LossSpec::cross_entropy());
  const auto prox = loss_and_grad(params, ex, LossSpec::proximal(0.5, params));
  EXPECT_DOUBLE_EQ(prox.loss, ce.loss);
  EXPECT_EQ(prox.grad, ce.grad);
}

TEST(Loss, ProximalPenaltyValue) {
  const auto params = ModelParams::zeros({{1, 2}});
  auto anchor = params;
  anchor.values[0] = 3.0;
  anchor.values[1] = 4.0;  // distance 5
  const std::vector<double> x{0.0};
  const std::vector<Example> ex{{x, 0}};
  const double ce = std::log(2.0);
  EXPECT_NEAR(loss_and_grad(params, ex, LossSpec::proximal(0.2, anchor)).loss, ce + 0.1 * 25.0, 1e-12);
  EXPECT_NEAR(loss_and_grad(params, ex, LossSpec::proximal(0.2, anchor, true)).loss, ce + 0.1 * 5.0, 1e-12);
}

TEST(Loss, Errors) {
  const auto p = ModelParams::zeros({{2, 2}});
  const std::vector<double> x{1.0, 2.0}, bad{1.0};
  EXPECT_THROW(loss_and_grad(p, std::span<const Example>{}, LossSpec::cross_entropy()), DomainError);
  const std::vector<Example> wrong_dim{{bad, 0}}, wrong_target{{x, 5}}, ok{{x, 0}};
  EXPECT_THROW(loss_and_grad(p, wrong_dim, LossSpec::cross_entropy()), ShapeError);
  EXPECT_THROW(loss_and_grad(p, wrong_target, LossSpec::cross_entropy()), IndexError);
  EXPECT_THROW(loss_and_grad(p, ok, LossSpec::gce(0.0)), DomainError);
  EXPECT_THROW(loss_and_grad(p, ok, LossSpec::proximal(0.1, ModelParams::zeros({{3, 2}}))), ShapeError);
}

TEST(Sgd, ZeroLearningRateKeepsParams) {
  Rng rng(2);
  const auto params = init_mlp(3, 4, 2, rng);
  const auto b = random_batch(20, 3, 2, rng);
  const auto r = sgd_train(params, b.examples(), {3, 7, 0.0, 1, false}, LossSpec::cross_entropy());
  EXPECT_EQ(r.params.values, params.values);
  EXPECT_EQ(r.steps, 3 * 3);  // ceil(20/7) batches per epoch
}

TEST(Sgd, FullBatchStepMatchesManualUpdate) {
  Rng rng(3);
  const auto params = init_mlp(3, 4, 2, rng);
  const auto b = random_batch(10, 3, 2, rng);
  const auto ex = b.examples();
  const auto r = sgd_train(params, ex, {1, 10, 0.1, 1, false}, LossSpec::cross_entropy());
  const auto g = loss_and_grad(params, ex, LossSpec::cross_entropy()).grad;
  ASSERT_EQ(r.steps, 1);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(r.params.values[i], params.values[i] - 0.1 * g[i], 1e-12);
}

TEST(Sgd, LearnsSeparableData) {
  Rng rng(5);
  const auto b = blobs(200, 4, rng);
  const auto ex = b.examples();
  const auto r = sgd_train(init_mlp(4, 8, 2, rng), ex, {20, 16, 0.05, 9, false}, LossSpec::cross_entropy());
  EXPECT_GE(accuracy(r.params, ex), 0.98);
  EXPECT_LT(mean_cross_entropy(r.params, ex), 0.2);
}

TEST(Sgd, EarlyStopAtFullAccuracy) {
  Rng rng(6);
  const auto b = blobs(60, 3, rng);
  const auto ex = b.examples();
  const auto r = sgd_train(init_mlp(3, 4, 2, rng), ex, {100, 10, 0.1, 2, true}, LossSpec::cross_entropy());
  EXPECT_EQ(accuracy(r.params, ex), 1.0);
  EXPECT_LT(r.steps, 100 * 6);
}

TEST(Sgd, SameSeedSameResult) {
  Rng rng(7);
  const auto params = init_mlp(3, 5, 3, rng);
  const auto data = random_batch(40, 3, 3, rng);
  const auto ex = data.examples();
  const TrainConfig cfg{4, 8, 0.05, 42, false};
  const auto a = sgd_train(params, ex, cfg, LossSpec::gce());
  const auto b = sgd_train(params, ex, cfg, LossSpec::gce());
  EXPECT_EQ(params_digest(a.params), params_digest(b.params));
  EXPECT_NE(params_digest(a.params), params_digest(sgd_train(params, ex, {4, 8, 0.05, 43, false}, LossSpec::gce()).params));
}

TEST(Sgd, RejectsBadInput) {
  const auto p = ModelParams::zeros({{2, 2}});
  EXPECT_THROW(sgd_train(p, std::span<const Example>{}, {}, LossSpec::cross_entropy()), DomainError);
  const std::vector<double> x{1.0, 2.0};
  const std::vector<Example> ex{{x, 0}};
  EXPECT_THROW(sgd_train(p, ex, {1, 0, 0.1, 0, false}, LossSpec::cross_entropy()), DomainError);
}

TEST(Params, JsonRoundTripAndDigest) {
  Rng rng(1);
  const auto p = init_mlp(3, 4, 2, rng);
  const nlohmann::json j = p;
  const auto back = j.get<ModelParams>();
  EXPECT_EQ(back.values, p.values);
  EXPECT_EQ(params_digest(back), params_digest(p));
  EXPECT_EQ(p.size(), 3u * 4 + 4 + 4 * 2 + 2);
}

TEST(Params, ReinitHeadKeepsTrunk) {
  Rng rng(1);
  const auto p = init_mlp(3, 4, 2, rng);
  const auto q = reinit_head(p, 5, rng);
  EXPECT_EQ(q.output_dim(), 5u);
  for (std::size_t i = 0; i < 3 * 4 + 4; ++i) EXPECT_EQ(q.values[i], p.values[i]);
}

}  // namespace
}  // namespace fedsim
