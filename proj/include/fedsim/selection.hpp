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
#pragma once

// Client selection: the diversity-driven geometric selector over
// heterogeneity triplets, the baseline selectors it is compared against, and
// the variance-minimizing client weights used when full interaction matrices
// are known.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/dht_estimator.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/hetero_metrics.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

using ClientId = std::size_t;
using Triplet = std::array<double, 3>;  // (ci, ai, sc)

enum class Strategy { kFedDiverse, kUniform, kRoundRobin, kPowD, kFedPns, kHcsFed, kVarianceOracle };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kFedDiverse: return "feddiverse";
    case Strategy::kUniform: return "uniform";
    case Strategy::kRoundRobin: return "round_robin";
    case Strategy::kPowD: return "pow_d";
    case Strategy::kFedPns: return "fedpns";
    case Strategy::kHcsFed: return "hcsfed";
    case Strategy::kVarianceOracle: return "variance_oracle";
  }
  return "?";
}

inline std::optional<Strategy> parse_strategy(const std::string& s) {
  for (auto k : {Strategy::kFedDiverse, Strategy::kUniform, Strategy::kRoundRobin, Strategy::kPowD, Strategy::kFedPns,
                 Strategy::kHcsFed, Strategy::kVarianceOracle})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

// Geometry helpers ------------------------------------------------------------

inline Triplet as_array(const HeterogeneityTriplet& t) { return {t.ci, t.ai, t.sc}; }

inline double dot(const Triplet& a, const Triplet& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

inline Triplet cross(const Triplet& a, const Triplet& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

/// Each client's triplet divided by its component sum. A client with an
/// all-zero triplet maps to (1/3, 1/3, 1/3).
struct NormalizedDht {
  std::vector<Triplet> rows;

  static NormalizedDht from(const DhtMatrix& dht) {
    NormalizedDht out;
    out.rows.reserve(dht.num_clients());
    for (const auto& t : dht.columns) {
      const double s = t.ci + t.ai + t.sc;
      if (s > 0.0) {
        out.rows.push_back({t.ci / s, t.ai / s, t.sc / s});
      } else {
        out.rows.push_back({1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});
      }
    }
    return out;
  }
};

namespace detail {

// Index into `pool` drawn with probability proportional to weight(pool[i]);
// uniform when all weights are zero.
template <typename WeightFn>
std::size_t weighted_pick(const std::vector<ClientId>& pool, WeightFn weight, Rng& rng) {
  double total = 0.0;
  for (auto k : pool) total += std::max(0.0, weight(k));
  if (!(total > 0.0)) return static_cast<std::size_t>(uniform_index(rng, pool.size()));
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const double w = std::max(0.0, weight(pool[i]));
    if (w <= 0.0) continue;
    last_positive = i;
    acc += w;
    if (u < acc) return i;
  }
  return last_positive;
}

inline std::vector<ClientId> all_ids(std::size_t k) {
  std::vector<ClientId> ids(k);
  std::iota(ids.begin(), ids.end(), ClientId{0});
  return ids;
}

inline ClientId take(std::vector<ClientId>& pool, std::size_t index) {
  const ClientId id = pool[index];
  pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(index));
  return id;
}

// Weighted draws without replacement.
template <typename WeightFn>
std::vector<ClientId> weighted_sample(std::size_t k, std::size_t m, WeightFn weight, Rng& rng) {
  auto pool = all_ids(k);
  std::vector<ClientId> out;
  while (out.size() < m && !pool.empty()) out.push_back(take(pool, weighted_pick(pool, weight, rng)));
  return out;
}

inline void check_count(std::size_t m, std::size_t k) {
  if (m > k) throw DomainError("cannot select " + std::to_string(m) + " clients from " + std::to_string(k));
}

}  // namespace detail

/// Triplet index used for the probabilistic step of block `block`: the
/// priority rotates SC -> CI -> AI.
inline std::size_t priority_dimension(std::size_t block) {
  static constexpr std::array<std::size_t, 3> kOrder{2, 0, 1};
  return kOrder[block % 3];
}

/// Selects m distinct clients in blocks of three: a draw proportional to the
/// block's priority dimension, the remaining client least aligned with it,
/// and the remaining client most aligned with the cross product of the two.
/// `round` is 1-based; the priority keeps rotating across rounds.
inline std::vector<ClientId> feddiverse_select(const DhtMatrix& dht, std::size_t m, std::size_t round, Rng& rng) {
  const std::size_t k = dht.num_clients();
  detail::check_count(m, k);
  const auto norm = NormalizedDht::from(dht);
  const std::size_t blocks_per_round = (m + 2) / 3;
  std::size_t block = (round > 0 ? round - 1 : 0) * blocks_per_round;

  auto pool = detail::all_ids(k);
  std::vector<ClientId> selected;
  selected.reserve(m);
  while (selected.size() < m) {
    const std::size_t dim = priority_dimension(block++);
    const ClientId kp = detail::take(pool, detail::weighted_pick(pool, [&](ClientId c) { return dht.columns[c][dim]; }, rng));
    selected.push_back(kp);
    if (selected.size() == m) break;

    std::size_t best = 0;
    for (std::size_t i = 1; i < pool.size(); ++i)
      if (dot(norm.rows[kp], norm.rows[pool[i]]) < dot(norm.rows[kp], norm.rows[pool[best]])) best = i;
    const ClientId kc = detail::take(pool, best);
    selected.push_back(kc);
    if (selected.size() == m) break;

    const Triplet normal = cross(norm.rows[kp], norm.rows[kc]);
    if (dot(normal, normal) < 1e-24) {
      selected.push_back(detail::take(pool, static_cast<std::size_t>(uniform_index(rng, pool.size()))));
      continue;
    }
    best = 0;
    for (std::size_t i = 1; i < pool.size(); ++i)
      if (dot(normal, norm.rows[pool[i]]) > dot(normal, norm.rows[pool[best]])) best = i;
    selected.push_back(detail::take(pool, best));
  }
  return selected;
}

// Variance-minimizing weights ------------------------------------------------

struct VarianceMinResult {
  std::vector<double> weights;
  double variance = 0.0;          // Var(S) at `weights`, in raw counts
  double uniform_variance = 0.0;  // Var(S) at uniform weights
  bool converged = true;
};

/// Euclidean projection onto the probability simplex.
inline std::vector<double> project_to_simplex(std::vector<double> v) {
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cumulative += u[i];
    const double t = (cumulative - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) theta = t;
  }
  for (double& x : v) x = std::max(0.0, x - theta);
  return v;
}

/// Var(S) = mean over cells of (s - mean(s))^2 with S = sum_k w_k N^k.
inline double mixture_variance(std::span<const InteractionMatrix> matrices, std::span<const double> weights) {
  const std::size_t cells = matrices.front().cells().size();
  std::vector<double> s(cells, 0.0);
  for (std::size_t k = 0; k < matrices.size(); ++k)
    for (std::size_t c = 0; c < cells; ++c) s[c] += weights[k] * static_cast<double>(matrices[k].cells()[c]);
  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(cells);
  double var = 0.0;
  for (double x : s) var += (x - mean) * (x - mean);
  return var / static_cast<double>(cells);
}

/// Projected gradient descent on the simplex from uniform weights, with step
/// 1/L for the (exact) gradient Lipschitz constant L of the rescaled problem.
/// Returns the best iterate.
inline VarianceMinResult variance_min_weights(std::span<const InteractionMatrix> matrices, int iterations = 500) {
  if (matrices.empty()) throw DomainError("variance_min_weights: no clients");
  for (const auto& m : matrices)
    if (!m.same_labels(matrices.front())) throw ShapeError("variance_min_weights: mismatched label sets");
  const std::size_t k = matrices.size();
  const std::size_t cells = matrices.front().cells().size();

  // Centered, rescaled client vectors; the minimizer is scale-invariant.
  double scale = 0.0;
  for (const auto& m : matrices)
    for (auto c : m.cells()) scale = std::max(scale, static_cast<double>(c));
  if (scale <= 0.0) scale = 1.0;
  std::vector<std::vector<double>> centered(k, std::vector<double>(cells));
  for (std::size_t i = 0; i < k; ++i) {
    double mean = 0.0;
    for (std::size_t c = 0; c < cells; ++c) mean += static_cast<double>(matrices[i].cells()[c]) / scale;
    mean /= static_cast<double>(cells);
    for (std::size_t c = 0; c < cells; ++c) centered[i][c] = static_cast<double>(matrices[i].cells()[c]) / scale - mean;
  }
  // Hessian H = (2/C) X X^T over centered rows.
  std::vector<std::vector<double>> hess(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < cells; ++c) s += centered[i][c] * centered[j][c];
      hess[i][j] = 2.0 * s / static_cast<double>(cells);
    }
  auto grad_at = [&](const std::vector<double>& w) {
    std::vector<double> g(k, 0.0);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) g[i] += hess[i][j] * w[j];
    return g;
  };
  // Largest eigenvalue of the PSD Hessian by power iteration.
  double lipschitz = 0.0;
  {
    std::vector<double> v(k, 1.0);
    for (std::size_t i = 0; i < k; ++i) v[i] += 0.01 * static_cast<double>(i);
    for (int it = 0; it < 200; ++it) {
      auto hv = grad_at(v);
      double norm = std::sqrt(std::inner_product(hv.begin(), hv.end(), hv.begin(), 0.0));
      if (norm <= 0.0) break;
      lipschitz = norm / std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
      for (std::size_t i = 0; i < k; ++i) v[i] = hv[i] / norm;
    }
  }

  VarianceMinResult out;
  std::vector<double> w(k, 1.0 / static_cast<double>(k));
  out.uniform_variance = mixture_variance(matrices, w);
  out.weights = w;
  out.variance = out.uniform_variance;
  if (k == 1 || lipschitz <= 0.0) return out;

  const double step = 1.0 / lipschitz;
  double mapping_norm = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const auto g = grad_at(w);
    std::vector<double> next(k);
    for (std::size_t i = 0; i < k; ++i) next[i] = w[i] - step * g[i];
    next = project_to_simplex(std::move(next));
    mapping_norm = 0.0;
    for (std::size_t i = 0; i < k; ++i) mapping_norm += (w[i] - next[i]) * (w[i] - next[i]);
    mapping_norm = std::sqrt(mapping_norm) / step;
    w = std::move(next);
    const double v = mixture_variance(matrices, w);
    if (v < out.variance) {
      out.variance = v;
      out.weights = w;
    }
    if (mapping_norm < 1e-9) break;
  }
  out.converged = mapping_norm <= 1e-3;
  return out;
}

// K-means (used by cluster-stratified selection) -----------------------------

inline std::vector<int> kmeans(const std::vector<std::vector<double>>& points, std::size_t clusters, Rng& rng,
                               int max_iterations = 100) {
  const std::size_t n = points.size();
  if (n == 0) return {};
  clusters = std::min(clusters, n);
  const std::size_t dim = points.front().size();
  auto dist2 = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < dim; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
  };
  // k-means++ seeding.
  std::vector<std::vector<double>> centers;
  centers.push_back(points[uniform_index(rng, n)]);
  while (centers.size() < clusters) {
    std::vector<double> d(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = INFINITY;
      for (const auto& c : centers) d[i] = std::min(d[i], dist2(points[i], c));
      total += d[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = uniform01(rng) * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        if (u < d[pick]) break;
        u -= d[pick];
      }
    } else {
      pick = uniform_index(rng, n);
    }
    centers.push_back(points[pick]);
  }
  std::vector<int> assign(n, -1);
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      for (std::size_t c = 1; c < centers.size(); ++c)
        if (dist2(points[i], centers[c]) < dist2(points[i], centers[best])) best = static_cast<int>(c);
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    for (std::size_t c = 0; c < centers.size(); ++c) {
      std::vector<double> mean(dim, 0.0);
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (assign[i] == static_cast<int>(c)) {
          for (std::size_t j = 0; j < dim; ++j) mean[j] += points[i][j];
          ++count;
        }
      if (count == 0) continue;  // keep an emptied center where it was
      for (double& v : mean) v /= static_cast<double>(count);
      centers[c] = std::move(mean);
    }
  }
  return assign;
}

// Selection state and dispatch -----------------------------------------------

struct SelectionOptions {
  bool powd_ascending = false;
  std::size_t hcsfed_clusters = 3;
  double hcsfed_ratio = 1e-5;
  double fedpns_penalty = 0.5;
  double fedpns_floor = 0.05;
};

struct SelectionState {
  Strategy strategy = Strategy::kUniform;
  std::size_t num_clients = 0;
  SelectionOptions options;
  std::uint64_t seed = 0;

  std::vector<std::uint64_t> rr_counts;        // round robin R_k
  std::vector<double> pns_weights;             // FedPNS sampling weights
  std::vector<int> clusters;                   // HCSFed assignment, empty until fitted
  std::optional<DhtMatrix> dht;                // FedDiverse
  std::vector<double> oracle_weights;          // variance oracle

  static SelectionState make(Strategy s, std::size_t k, std::uint64_t seed, SelectionOptions opt = {}) {
    SelectionState st;
    st.strategy = s;
    st.num_clients = k;
    st.seed = seed;
    st.options = opt;
    st.rr_counts.assign(k, 0);
    st.pns_weights.assign(k, 1.0);
    return st;
  }
};

/// What the coordinator can provide to a selector in a given round.
struct RoundContext {
  std::size_t round = 1;
  // Local loss of client k on the current global parameters (pow-d).
  std::function<double(ClientId)> client_loss;
  // One update vector per client, all K of them (HCSFed clustering).
  const std::vector<std::vector<double>>* all_client_updates = nullptr;
};

/// Candidate pool size for pow-d.
inline std::size_t powd_pool_size(std::size_t k, std::size_t m) { return std::min(k, 2 * m); }

/// Compressed dimension for HCSFed.
inline std::size_t hcsfed_dimension(std::size_t num_params, double ratio) {
  return std::max<std::size_t>(8, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(num_params))));
}

/// Projects every update through a fixed Gaussian matrix and clusters them.
inline void hcsfed_fit(SelectionState& st, const std::vector<std::vector<double>>& updates) {
  if (updates.size() != st.num_clients) throw ContractError("hcsfed: need one update per client");
  const std::size_t p = updates.front().size();
  const std::size_t dc = hcsfed_dimension(p, st.options.hcsfed_ratio);
  Rng proj_rng = make_rng(st.seed, Stream::kProjection);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dc)));
  std::vector<double> proj(dc * p);
  for (double& v : proj) v = normal(proj_rng);
  std::vector<std::vector<double>> points(updates.size(), std::vector<double>(dc, 0.0));
  for (std::size_t k = 0; k < updates.size(); ++k)
    for (std::size_t r = 0; r < dc; ++r) {
      double s = 0.0;
      for (std::size_t i = 0; i < p; ++i) s += proj[r * p + i] * updates[k][i];
      points[k][r] = s;
    }
  Rng km_rng = make_rng(st.seed, Stream::kClustering);
  st.clusters = kmeans(points, st.options.hcsfed_clusters, km_rng);
}

/// Flags every participant whose removal would leave the aggregate update
/// more aligned with itself (<g, g - g_k> > 0) and down-weights it.
/// Weights are then rescaled to average 1 over all clients.
inline std::vector<ClientId> fedpns_update(SelectionState& st, std::span<const double> aggregate,
                                           const std::vector<std::pair<ClientId, std::vector<double>>>& updates) {
  std::vector<ClientId> flagged;
  for (const auto& [id, g] : updates) {
    double score = 0.0;
    for (std::size_t i = 0; i < aggregate.size(); ++i) score += aggregate[i] * (aggregate[i] - g[i]);
    if (score > 0.0) {
      flagged.push_back(id);
      st.pns_weights[id] = std::max(st.options.fedpns_floor, st.pns_weights[id] * st.options.fedpns_penalty);
    }
  }
  const double mean = std::accumulate(st.pns_weights.begin(), st.pns_weights.end(), 0.0) /
                      static_cast<double>(st.pns_weights.size());
  if (mean > 0.0)
    for (double& w : st.pns_weights) w /= mean;
  return flagged;
}

namespace detail {

inline std::vector<ClientId> select_uniform(std::size_t k, std::size_t m, Rng& rng) {
  auto pool = all_ids(k);
  std::vector<ClientId> out;
  while (out.size() < m) out.push_back(take(pool, static_cast<std::size_t>(uniform_index(rng, pool.size()))));
  return out;
}

inline std::vector<ClientId> select_round_robin(SelectionState& st, std::size_t m) {
  auto ids = all_ids(st.num_clients);
  std::stable_sort(ids.begin(), ids.end(), [&](ClientId a, ClientId b) { return st.rr_counts[a] < st.rr_counts[b]; });
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  for (auto id : ids) ++st.rr_counts[id];
  return ids;
}

inline std::vector<ClientId> select_powd(const SelectionState& st, std::size_t m, const RoundContext& ctx, Rng& rng) {
  if (!ctx.client_loss) throw ContractError("pow_d requires round context field 'client_loss'");
  auto candidates = select_uniform(st.num_clients, powd_pool_size(st.num_clients, m), rng);
  std::sort(candidates.begin(), candidates.end());
  std::vector<std::pair<double, ClientId>> scored;
  for (auto c : candidates) scored.emplace_back(ctx.client_loss(c), c);
  std::stable_sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    return st.options.powd_ascending ? a.first < b.first : a.first > b.first;
  });
  std::vector<ClientId> out;
  for (std::size_t i = 0; i < m; ++i) out.push_back(scored[i].second);
  return out;
}

inline std::vector<ClientId> select_hcsfed(const SelectionState& st, std::size_t m, Rng& rng) {
  if (st.clusters.empty()) return select_uniform(st.num_clients, m, rng);
  int num_clusters = *std::max_element(st.clusters.begin(), st.clusters.end()) + 1;
  std::vector<std::vector<ClientId>> members(num_clusters);
  for (ClientId k = 0; k < st.num_clients; ++k) members[st.clusters[k]].push_back(k);
  // Largest-remainder allocation proportional to cluster size.
  std::vector<std::size_t> quota(num_clusters);
  std::vector<std::pair<double, int>> remainders;
  std::size_t assigned = 0;
  for (int c = 0; c < num_clusters; ++c) {
    const double exact = static_cast<double>(m) * static_cast<double>(members[c].size()) /
                         static_cast<double>(st.num_clients);
    quota[c] = std::min(members[c].size(), static_cast<std::size_t>(std::floor(exact)));
    assigned += quota[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  while (assigned < m) {
    bool progressed = false;
    for (const auto& [r, c] : remainders) {
      if (assigned == m) break;
      if (quota[c] < members[c].size()) {
        ++quota[c];
        ++assigned;
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  std::vector<ClientId> out;
  for (int c = 0; c < num_clusters; ++c) {
    auto pool = members[c];
    for (std::size_t i = 0; i < quota[c]; ++i)
      out.push_back(take(pool, static_cast<std::size_t>(uniform_index(rng, pool.size()))));
  }
  return out;
}

}  // namespace detail

/// Baselines: uniform, round robin, pow-d, FedPNS and HCSFed.
inline std::vector<ClientId> baseline_select(SelectionState& st, std::size_t m, const RoundContext& ctx, Rng& rng) {
  detail::check_count(m, st.num_clients);
  switch (st.strategy) {
    case Strategy::kUniform: return detail::select_uniform(st.num_clients, m, rng);
    case Strategy::kRoundRobin: return detail::select_round_robin(st, m);
    case Strategy::kPowD: return detail::select_powd(st, m, ctx, rng);
    case Strategy::kFedPns:
      return detail::weighted_sample(st.num_clients, m, [&](ClientId k) { return st.pns_weights[k]; }, rng);
    case Strategy::kHcsFed:
      if (st.clusters.empty() && ctx.all_client_updates != nullptr) hcsfed_fit(st, *ctx.all_client_updates);
      if (st.clusters.empty()) throw ContractError("hcsfed requires round context field 'all_client_updates'");
      return detail::select_hcsfed(st, m, rng);
    default: throw ContractError("baseline_select called with strategy " + to_string(st.strategy));
  }
}

/// Dispatches to the configured strategy.
inline std::vector<ClientId> select_clients(SelectionState& st, std::size_t m, const RoundContext& ctx, Rng& rng) {
  detail::check_count(m, st.num_clients);
  switch (st.strategy) {
    case Strategy::kFedDiverse:
      if (!st.dht) throw ContractError("feddiverse requires a heterogeneity matrix");
      return feddiverse_select(*st.dht, m, ctx.round, rng);
    case Strategy::kVarianceOracle:
      if (st.oracle_weights.size() != st.num_clients) throw ContractError("variance_oracle requires client weights");
      return detail::weighted_sample(st.num_clients, m, [&](ClientId k) { return st.oracle_weights[k]; }, rng);
    default: return baseline_select(st, m, ctx, rng);
  }
}

}  // namespace fedsim
