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

#include <algorithm>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "fedsim/engine.hpp"
#include "scenarios.hpp"

namespace fedsim {
namespace {

ModelParams scalar(double v) {
  auto p = ModelParams::zeros({{0, 1}});
  p.values = {v};
  return p;
}

FederatedDataset small_federation(std::size_t k = 6, std::uint64_t seed = 3) {
  FederationRecipe r;
  r.name = "small";
  r.seed = seed;
  r.test_per_group = 20;
  for (std::size_t i = 0; i < k; ++i)
    r.client_matrices.push_back(InteractionMatrix::from_rows(
        i % 2 == 0 ? std::vector<std::vector<std::int64_t>>{{30, 4}, {5, 28}}
                   : std::vector<std::vector<std::int64_t>>{{6, 25}, {27, 3}}));
  return build_federation(r, GeneratorSpec::with_default_means(2, 2));
}

FederationConfig small_config(Strategy s = Strategy::kUniform) {
  FederationConfig c;
  c.rounds = 4;
  c.clients_per_round = 3;
  c.strategy = s;
  c.learning_rate = 0.01;
  c.estimation.biased_train.epochs = 3;
  c.estimation.attr_train.epochs = 3;
  return c;
}

TEST(Aggregate, FedAvgWeightedMean) {
  std::vector<ClientUpdate> u{{0, scalar(0.0), 1, 1}, {1, scalar(4.0), 3, 1}};
  EXPECT_DOUBLE_EQ(aggregate(scalar(9.0), u, {Aggregator::kFedAvg, 0.0, WeightMode::kBySamples}, {}).params.values[0], 3.0);
  EXPECT_DOUBLE_EQ(aggregate(scalar(9.0), u, {Aggregator::kFedAvg, 0.0, WeightMode::kUniform}, {}).params.values[0], 2.0);
}

TEST(Aggregate, IdentitiesOnRandomUpdates) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto g = scenarios::aggregator_identity_gaps(s);
    EXPECT_LT(g.fedavgm, 1e-10);
    EXPECT_LT(g.fednova, 1e-10);
  }
}

TEST(Aggregate, FedAvgMomentumAccumulates) {
  // Each round the clients sit 1 below the global model: v = 1, then 1 + beta.
  MomentumState m;
  std::vector<ClientUpdate> u{{0, scalar(9.0), 5, 1}};
  const AggregatorSpec spec{Aggregator::kFedAvgM, 0.5, WeightMode::kUniform};
  auto r1 = aggregate(scalar(10.0), u, spec, m);
  EXPECT_DOUBLE_EQ(r1.params.values[0], 9.0);
  u[0].params = scalar(8.0);
  auto r2 = aggregate(r1.params, u, spec, r1.momentum);
  EXPECT_DOUBLE_EQ(r2.momentum.velocity[0], 1.5);
  EXPECT_DOUBLE_EQ(r2.params.values[0], 7.5);
}

TEST(Aggregate, FedNovaNormalizesBySteps) {
  // d_0 = (10 - 6) / 4 = 1, d_1 = (10 - 8) / 1 = 2; tau_eff = 2.5; theta' = 10 - 2.5 * 1.5
  std::vector<ClientUpdate> u{{0, scalar(6.0), 1, 4}, {1, scalar(8.0), 1, 1}};
  const auto r = aggregate(scalar(10.0), u, {Aggregator::kFedNova, 0.0, WeightMode::kUniform}, {});
  EXPECT_DOUBLE_EQ(r.params.values[0], 10.0 - 2.5 * 1.5);
}

TEST(Aggregate, ConvexCombination) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto global = init_mlp(3, 4, 2, rng);
    std::vector<ClientUpdate> u;
    for (std::size_t k = 0; k < 5; ++k) {
      ModelParams p = global;
      for (double& v : p.values) v = 4.0 * uniform01(rng) - 2.0;
      u.push_back({k, p, 1 + uniform_index(rng, 100), 1});
    }
    const auto out = aggregate(global, u, {Aggregator::kFedAvg, 0.0, WeightMode::kBySamples}, {}).params;
    for (std::size_t i = 0; i < out.size(); ++i) {
      double lo = INFINITY, hi = -INFINITY;
      for (const auto& c : u) {
        lo = std::min(lo, c.params.values[i]);
        hi = std::max(hi, c.params.values[i]);
      }
      EXPECT_GE(out.values[i], lo - 1e-12);
      EXPECT_LE(out.values[i], hi + 1e-12);
    }
  }
}

TEST(Aggregate, Errors) {
  EXPECT_THROW(aggregate(scalar(1.0), {}, {}, {}), DomainError);
  std::vector<ClientUpdate> zero{{0, scalar(1.0), 0, 1}};
  EXPECT_THROW(aggregate(scalar(1.0), zero, {Aggregator::kFedAvg, 0.0, WeightMode::kBySamples}, {}), DomainError);
  std::vector<ClientUpdate> shape{{0, ModelParams::zeros({{1, 1}}), 1, 1}};
  EXPECT_THROW(aggregate(scalar(1.0), shape, {}, {}), ShapeError);
}

TEST(WorstGroup, Examples) {
  const auto fd = small_federation();
  // Output bias only: always predicts class 0.
  auto always0 = ModelParams::zeros({{fd.feature_dim(), 2}});
  always0.values[always0.size() - 2] = 5.0;
  const auto r0 = worst_group_accuracy(always0, fd.test_set, 2, 2);
  EXPECT_EQ(r0.worst, 0.0);
  EXPECT_EQ(*r0.per_group[0], 1.0);
  EXPECT_EQ(*r0.per_group[2], 0.0);
  EXPECT_DOUBLE_EQ(r0.overall, 0.5);

  // Reads the class block directly: perfect on noiseless data.
  auto spec = GeneratorSpec::with_default_means(2, 2);
  spec.noise_std = 0.0;
  spec.attribute_noise_std = 0.0;
  const auto clean = build_federation(FederationRecipe{"clean", {InteractionMatrix::from_rows({{1, 1}, {1, 1}})}, 10, 1}, spec);
  auto perfect = ModelParams::zeros({{10, 2}});
  perfect.values[0] = 1.0;
  perfect.values[10 + 1] = 1.0;
  const auto r1 = worst_group_accuracy(perfect, clean.test_set, 2, 2);
  EXPECT_EQ(r1.worst, 1.0);
  for (const auto& g : r1.per_group) EXPECT_EQ(*g, 1.0);
}

TEST(WorstGroup, OverallIsMeanOnBalancedTestSet) {
  const auto fd = small_federation();
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const auto p = init_mlp(fd.feature_dim(), 8, 2, rng);
    const auto r = worst_group_accuracy(p, fd.test_set, 2, 2);
    double mean = 0.0;
    for (const auto& g : r.per_group) mean += *g / 4.0;
    EXPECT_NEAR(r.overall, mean, 1e-12);
    EXPECT_LE(r.worst, r.overall + 1e-12);
  }
}

TEST(WorstGroup, EmptyGroupIsSkippedWithWarning) {
  const auto fd = small_federation();
  std::vector<Sample> partial;
  for (const auto& s : fd.test_set)
    if (!(s.y == 1 && s.a == 1)) partial.push_back(s);
  auto always0 = ModelParams::zeros({{fd.feature_dim(), 2}});
  always0.values[always0.size() - 2] = 5.0;
  const auto r = worst_group_accuracy(always0, partial, 2, 2);
  EXPECT_FALSE(r.per_group[3].has_value());
  EXPECT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(r.worst, 0.0);
}

TEST(Federation, NoLocalTrainingKeepsGlobal) {
  const auto fd = small_federation(4);
  auto cfg = small_config();
  cfg.clients_per_round = 4;
  cfg.local_epochs = 0;
  cfg.aggregator = {Aggregator::kFedAvg, 0.0, WeightMode::kUniform};
  Federation fed(fd, cfg);
  const auto before = fed.global().values;
  fed.run_round();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(fed.global().values[i], before[i], 1e-15);
}

TEST(Federation, OneRoundTwoClients) {
  const auto fd = small_federation(2);
  auto cfg = small_config();
  cfg.rounds = 1;
  cfg.clients_per_round = 2;
  const auto r = run_federation(cfg, fd);
  ASSERT_EQ(r.rounds.size(), 1u);
  auto sel = r.rounds[0].selected;
  std::sort(sel.begin(), sel.end());
  EXPECT_EQ(sel, (std::vector<ClientId>{0, 1}));
  EXPECT_EQ(r.final_params_digest, params_digest(r.final_params));
}

TEST(Federation, EveryStrategyRunsWithDistinctSelections) {
  const auto fd = small_federation();
  for (auto s : {Strategy::kFedDiverse, Strategy::kUniform, Strategy::kRoundRobin, Strategy::kPowD, Strategy::kFedPns,
                 Strategy::kHcsFed, Strategy::kVarianceOracle}) {
    SCOPED_TRACE(to_string(s));
    const auto r = run_federation(small_config(s), fd);
    ASSERT_EQ(r.rounds.size(), 4u);
    for (const auto& rec : r.rounds) {
      EXPECT_EQ(std::set<ClientId>(rec.selected.begin(), rec.selected.end()).size(), 3u);
      EXPECT_EQ(rec.steps.size(), 3u);
      EXPECT_GE(rec.worst_group_accuracy, 0.0);
      EXPECT_LE(rec.worst_group_accuracy, rec.overall_accuracy + 1e-12);
      EXPECT_TRUE(std::isfinite(rec.test_loss));
    }
  }
}

TEST(Federation, SameSeedSameRun) {
  const auto fd = small_federation();
  for (auto s : {Strategy::kFedDiverse, Strategy::kPowD, Strategy::kHcsFed}) {
    const auto a = run_federation(small_config(s), fd);
    const auto b = run_federation(small_config(s), fd);
    EXPECT_EQ(a.final_params_digest, b.final_params_digest);
    for (std::size_t t = 0; t < a.rounds.size(); ++t) {
      EXPECT_EQ(a.rounds[t].selected, b.rounds[t].selected);
      EXPECT_EQ(a.rounds[t].test_loss, b.rounds[t].test_loss);
    }
  }
}

TEST(Federation, WorkerCountDoesNotChangeResults) {
  const auto fd = small_federation();
  auto one = small_config(Strategy::kFedDiverse), four = one;
  one.threads = 1;
  four.threads = 4;
  const auto a = run_federation(one, fd), b = run_federation(four, fd);
  EXPECT_EQ(a.final_params.values, b.final_params.values);
  EXPECT_EQ(a.dht_diagnostics.dump(), b.dht_diagnostics.dump());
}

TEST(Federation, ZeroMomentumMatchesFedAvgEveryRound) {
  const auto fd = small_federation();
  auto avg = small_config(), avgm = small_config();
  avg.aggregator = {Aggregator::kFedAvg, 0.0, WeightMode::kUniform};
  avgm.aggregator = {Aggregator::kFedAvgM, 0.0, WeightMode::kUniform};
  Federation a(fd, avg), b(fd, avgm);
  for (int t = 0; t < 5; ++t) {
    a.run_round();
    b.run_round();
    for (std::size_t i = 0; i < a.global().size(); ++i) EXPECT_NEAR(a.global().values[i], b.global().values[i], 1e-10);
  }
}

TEST(Federation, AblationDiagnostics) {
  const auto fd = small_federation();
  auto est = small_config(Strategy::kFedDiverse), known = est, weights = est;
  known.dht_source = DhtSource::kKnownDht;
  weights.dht_source = DhtSource::kKnownMatrixWeights;
  const auto re = run_federation(est, fd), rk = run_federation(known, fd), rw = run_federation(weights, fd);
  EXPECT_FALSE(re.dht_diagnostics.at("estimation_skipped").get<bool>());
  EXPECT_TRUE(re.dht_diagnostics.contains("mean_abs_error"));
  EXPECT_TRUE(rk.dht_diagnostics.at("estimation_skipped").get<bool>());
  EXPECT_EQ(rk.dht_diagnostics.at("triplets"), rk.dht_diagnostics.at("true_triplets"));
  EXPECT_TRUE(rw.dht_diagnostics.at("estimation_skipped").get<bool>());
  EXPECT_TRUE(rw.dht_diagnostics.contains("oracle_weights"));
  EXPECT_EQ(rw.dht_diagnostics.at("source"), "known_matrix_weights");
}

TEST(Federation, ProximalTermRuns) {
  const auto fd = small_federation();
  auto cfg = small_config();
  cfg.prox_mu = 0.1;
  const auto with = run_federation(cfg, fd);
  const auto without = run_federation(small_config(), fd);
  EXPECT_NE(with.final_params_digest, without.final_params_digest);
}

TEST(Federation, InvalidConfigs) {
  const auto fd = small_federation(3);
  auto cfg = small_config();
  cfg.clients_per_round = 4;
  EXPECT_THROW(Federation(fd, cfg), ConfigError);
  cfg = small_config();
  cfg.aggregator.beta = 1.0;
  EXPECT_THROW(Federation(fd, cfg), ConfigError);
  cfg = small_config(Strategy::kUniform);
  cfg.dht_source = DhtSource::kKnownDht;
  EXPECT_THROW(Federation(fd, cfg), ConfigError);
}

}  // namespace
}  // namespace fedsim
