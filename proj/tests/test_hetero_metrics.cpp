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
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "fedsim/hetero_metrics.hpp"
#include "oracle.hpp"

namespace fedsim {
namespace {

using Rows = std::vector<std::vector<std::int64_t>>;

InteractionMatrix M(const Rows& rows) { return InteractionMatrix::from_rows(rows); }

Rows random_rows(std::mt19937_64& gen, std::size_t max_y = 5, std::size_t max_a = 5, int max_count = 100) {
  std::uniform_int_distribution<std::size_t> dy(1, max_y), da(1, max_a);
  std::uniform_int_distribution<int> cnt(0, max_count);
  std::bernoulli_distribution zero(0.25);
  Rows rows(dy(gen), std::vector<std::int64_t>(da(gen)));
  std::int64_t total = 0;
  for (auto& r : rows)
    for (auto& c : r) total += c = zero(gen) ? 0 : cnt(gen);
  if (total == 0) rows[0][0] = 1;
  return rows;
}

TEST(Entropy, WorkedExamples) {
  const std::vector<std::int64_t> a{50, 50}, b{100, 0}, c{150, 50};
  EXPECT_NEAR(entropy(a), std::log(2.0), 1e-12);
  EXPECT_EQ(entropy(b), 0.0);
  EXPECT_NEAR(entropy(c), 0.562335, 1e-6);
}

TEST(Entropy, EmptyDistributionThrows) {
  const std::vector<std::int64_t> z{0, 0, 0};
  EXPECT_THROW(entropy(z), DomainError);
  EXPECT_THROW(entropy(std::span<const std::int64_t>{}), DomainError);
}

TEST(MutualInformation, WorkedExamples) {
  EXPECT_NEAR(mutual_information(M({{50, 50}, {50, 50}})), 0.0, 1e-12);
  EXPECT_NEAR(mutual_information(M({{100, 0}, {0, 100}})), std::log(2.0), 1e-12);
  EXPECT_NEAR(mutual_information(M({{90, 10}, {10, 90}})), 0.368064, 1e-6);
}

TEST(DhtFromMatrix, WorkedExamples) {
  auto t = dht_from_matrix(M({{50, 50}, {50, 50}}));
  EXPECT_NEAR(t.ci, 0, 1e-12);
  EXPECT_NEAR(t.ai, 0, 1e-12);
  EXPECT_NEAR(t.sc, 0, 1e-12);
  t = dht_from_matrix(M({{100, 0}, {0, 100}}));
  EXPECT_NEAR(t.sc, 1.0, 1e-12);
  t = dht_from_matrix(M({{90, 10}, {10, 90}}));
  EXPECT_NEAR(t.ci, 0, 1e-12);
  EXPECT_NEAR(t.sc, 0.531004, 1e-6);
  t = dht_from_matrix(M({{150, 50}, {0, 0}}));
  EXPECT_NEAR(t.ci, 1.0, 1e-12);
  EXPECT_NEAR(t.ai, 0.188722, 1e-6);
  EXPECT_NEAR(t.sc, 0.0, 1e-12);
}

TEST(DhtFromMatrix, DegenerateConventions) {
  auto t = dht_from_matrix(M({{7, 3}}));  // |Y| = 1
  EXPECT_EQ(t.ci, 1.0);
  t = dht_from_matrix(M({{7}, {3}}));  // |A| = 1
  EXPECT_EQ(t.ai, 1.0);
  EXPECT_EQ(t.sc, 0.0);
  t = dht_from_matrix(M({{0, 0}, {0, 5}}));  // H(Y) + H(A) = 0
  EXPECT_EQ(t.ci, 1.0);
  EXPECT_EQ(t.ai, 1.0);
  EXPECT_EQ(t.sc, 0.0);
  EXPECT_THROW(dht_from_matrix(M({{0, 0}, {0, 0}})), DomainError);
}

TEST(DhtFromMatrix, MatchesIndependentOracleOnRandomMatrices) {
  std::mt19937_64 gen(2024);
  for (int i = 0; i < 2000; ++i) {
    const auto rows = random_rows(gen);
    const auto t = dht_from_matrix(M(rows));
    const auto o = oracle::triplet(rows);
    ASSERT_NEAR(t.ci, o.ci, 1e-9) << "case " << i;
    ASSERT_NEAR(t.ai, o.ai, 1e-9) << "case " << i;
    ASSERT_NEAR(t.sc, o.sc, 1e-9) << "case " << i;
  }
}

TEST(DhtFromMatrix, RangeOnRandomMatrices) {
  std::mt19937_64 gen(7);
  for (int i = 0; i < 2000; ++i) {
    const auto t = dht_from_matrix(M(random_rows(gen, 6, 4, 1000)));
    for (std::size_t d = 0; d < 3; ++d) {
      ASSERT_GE(t[d], -1e-12);
      ASSERT_LE(t[d], 1 + 1e-12);
    }
  }
}

TEST(DhtFromMatrix, ScaleInvariance) {
  std::mt19937_64 gen(11);
  std::uniform_int_distribution<int> factor(2, 50);
  for (int i = 0; i < 1000; ++i) {
    auto rows = random_rows(gen);
    const auto base = dht_from_matrix(M(rows));
    const int f = factor(gen);
    for (auto& r : rows)
      for (auto& c : r) c *= f;
    const auto scaled = dht_from_matrix(M(rows));
    for (std::size_t d = 0; d < 3; ++d) ASSERT_NEAR(base[d], scaled[d], 1e-9);
  }
}

TEST(DhtFromMatrix, PermutationInvariance) {
  std::mt19937_64 gen(13);
  for (int i = 0; i < 1000; ++i) {
    auto rows = random_rows(gen);
    const auto base = dht_from_matrix(M(rows));
    std::shuffle(rows.begin(), rows.end(), gen);
    std::vector<std::size_t> perm(rows.front().size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    Rows permuted = rows;
    for (std::size_t y = 0; y < rows.size(); ++y)
      for (std::size_t a = 0; a < perm.size(); ++a) permuted[y][a] = rows[y][perm[a]];
    const auto p = dht_from_matrix(M(permuted));
    ASSERT_EQ(base.ci, p.ci);
    ASSERT_EQ(base.ai, p.ai);
    ASSERT_EQ(base.sc, p.sc);
  }
}

TEST(FederationMetrics, WorkedExamples) {
  std::vector<InteractionMatrix> balanced{M({{50, 50}, {50, 50}}), M({{50, 50}, {50, 50}})};
  const auto b = federation_metrics(balanced);
  for (double v : {b.gci, b.gai, b.gsc, b.cci, b.cai, b.csc}) EXPECT_NEAR(v, 0.0, 1e-12);

  std::vector<InteractionMatrix> split{M({{100, 0}, {0, 0}}), M({{0, 0}, {0, 100}})};
  const auto s = federation_metrics(split);
  EXPECT_NEAR(s.gci, 0.0, 1e-12);
  EXPECT_NEAR(s.gsc, 1.0, 1e-12);
  EXPECT_EQ(s.cci, 1.0);
  EXPECT_EQ(s.cai, 1.0);
  EXPECT_EQ(s.csc, 0.0);
}

TEST(FederationMetrics, IdenticalClientsAgreeWithSingleMatrix) {
  const auto m = M({{30, 5, 2}, {4, 20, 9}});
  const std::vector<InteractionMatrix> k(5, m);
  const auto f = federation_metrics(k);
  const auto t = dht_from_matrix(m);
  EXPECT_NEAR(f.gci, t.ci, 1e-12);
  EXPECT_NEAR(f.gai, t.ai, 1e-12);
  EXPECT_NEAR(f.gsc, t.sc, 1e-12);
  EXPECT_NEAR(f.cci, t.ci, 1e-12);
  EXPECT_NEAR(f.cai, t.ai, 1e-12);
  EXPECT_NEAR(f.csc, t.sc, 1e-12);
}

TEST(FederationMetrics, GlobalIsSummedMatrixAndClientIsMean) {
  std::mt19937_64 gen(17);
  for (int i = 0; i < 200; ++i) {
    const auto first = random_rows(gen, 4, 3);
    std::vector<InteractionMatrix> ms{M(first)};
    std::uniform_int_distribution<int> cnt(0, 60);
    for (int k = 0; k < 4; ++k) {
      Rows r(first.size(), std::vector<std::int64_t>(first.front().size()));
      for (auto& row : r)
        for (auto& c : row) c = cnt(gen);
      r[0][0] += 1;
      ms.push_back(M(r));
    }
    const auto f = federation_metrics(ms);
    const auto g = dht_from_matrix(sum_matrices(ms));
    ASSERT_EQ(f.gci, g.ci);
    ASSERT_EQ(f.gai, g.ai);
    ASSERT_EQ(f.gsc, g.sc);
    double cci = 0, cai = 0, csc = 0;
    for (const auto& m : ms) {
      const auto o = oracle::triplet([&] {
        Rows r(m.num_classes(), std::vector<std::int64_t>(m.num_attributes()));
        for (std::size_t y = 0; y < m.num_classes(); ++y)
          for (std::size_t a = 0; a < m.num_attributes(); ++a) r[y][a] = m.at(y, a);
        return r;
      }());
      cci += o.ci / ms.size();
      cai += o.ai / ms.size();
      csc += o.sc / ms.size();
    }
    ASSERT_NEAR(f.cci, cci, 1e-9);
    ASSERT_NEAR(f.cai, cai, 1e-9);
    ASSERT_NEAR(f.csc, csc, 1e-9);
  }
}

TEST(FederationMetrics, MismatchedLabelsThrow) {
  std::vector<InteractionMatrix> ms{M({{1, 2}, {3, 4}}), M({{1, 2, 3}, {3, 4, 5}})};
  EXPECT_THROW(federation_metrics(ms), ShapeError);
  EXPECT_THROW(federation_metrics(std::vector<InteractionMatrix>{}), DomainError);
}

TEST(InteractionMatrix, MarginalsAndJsonRoundTrip) {
  const auto m = M({{3, 1, 0}, {2, 5, 7}});
  EXPECT_EQ(m.row_sums(), (std::vector<std::int64_t>{4, 14}));
  EXPECT_EQ(m.col_sums(), (std::vector<std::int64_t>{5, 6, 7}));
  EXPECT_EQ(m.total(), 18);
  const nlohmann::json j = m;
  EXPECT_EQ(j.at("counts"), nlohmann::json::parse("[[3,1,0],[2,5,7]]"));
  EXPECT_EQ(j.at("classes"), nlohmann::json::parse("[0,1]"));
  EXPECT_EQ(j.get<InteractionMatrix>(), m);
  EXPECT_THROW(M({{1, -1}}), DomainError);
  EXPECT_THROW(M({{1, 2}, {3}}), ShapeError);
}

}  // namespace
}  // namespace fedsim
