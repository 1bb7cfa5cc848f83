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

// Round-based federation: broadcast, local SGD, server aggregation
// (FedAvg / FedAvgM / FedNova, optional proximal client loss), per-group
// evaluation and run bookkeeping.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/datagen.hpp"
#include "fedsim/dht_estimator.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/hetero_metrics.hpp"
#include "fedsim/model.hpp"
#include "fedsim/parallel.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/selection.hpp"
#include "json.hpp"

namespace fedsim {

enum class Aggregator { kFedAvg, kFedAvgM, kFedNova };
enum class WeightMode { kUniform, kBySamples };
enum class DhtSource { kEstimated, kKnownDht, kKnownMatrixWeights };

inline std::string to_string(Aggregator a) {
  switch (a) {
    case Aggregator::kFedAvg: return "fedavg";
    case Aggregator::kFedAvgM: return "fedavgm";
    case Aggregator::kFedNova: return "fednova";
  }
  return "?";
}

inline std::string to_string(WeightMode w) { return w == WeightMode::kUniform ? "uniform" : "by_samples"; }

inline std::string to_string(DhtSource s) {
  switch (s) {
    case DhtSource::kEstimated: return "estimated";
    case DhtSource::kKnownDht: return "known_dht";
    case DhtSource::kKnownMatrixWeights: return "known_matrix_weights";
  }
  return "?";
}

struct AggregatorSpec {
  Aggregator kind = Aggregator::kFedAvgM;
  double beta = 0.95;
  WeightMode weights = WeightMode::kUniform;
};

struct ClientUpdate {
  ClientId id = 0;
  ModelParams params;
  std::size_t num_samples = 0;
  int steps = 0;
};

struct MomentumState {
  std::vector<double> velocity;  // empty until the first momentum step
};

struct AggregationResult {
  ModelParams params;
  MomentumState momentum;
};

inline std::vector<double> aggregation_weights(std::span<const ClientUpdate> updates, WeightMode mode) {
  double total = 0.0;
  for (const auto& u : updates) total += static_cast<double>(u.num_samples);
  if (total <= 0.0) throw DomainError("aggregate: participants hold zero samples");
  std::vector<double> w;
  w.reserve(updates.size());
  for (const auto& u : updates)
    w.push_back(mode == WeightMode::kBySamples ? static_cast<double>(u.num_samples) / total
                                               : 1.0 / static_cast<double>(updates.size()));
  return w;
}

/// fedavg:  theta' = sum_k p_k theta_k
/// fedavgm: v' = beta v + (theta - sum_k p_k theta_k);  theta' = theta - v'
/// fednova: d_k = (theta - theta_k) / tau_k;  v' = beta v + sum_k p_k d_k;
///          theta' = theta - tau_eff v'  with tau_eff = sum_k p_k tau_k
inline AggregationResult aggregate(const ModelParams& global, std::span<const ClientUpdate> updates,
                                   const AggregatorSpec& spec, const MomentumState& momentum) {
  if (updates.empty()) throw DomainError("aggregate: no updates");
  for (const auto& u : updates)
    if (!u.params.same_shape(global) || u.params.size() != global.size())
      throw ShapeError("aggregate: client " + std::to_string(u.id) + " has a different model shape");
  const auto p = aggregation_weights(updates, spec.weights);
  const std::size_t n = global.size();

  AggregationResult out{global, momentum};
  if (spec.kind == Aggregator::kFedAvg) {
    std::fill(out.params.values.begin(), out.params.values.end(), 0.0);
    for (std::size_t k = 0; k < updates.size(); ++k)
      for (std::size_t i = 0; i < n; ++i) out.params.values[i] += p[k] * updates[k].params.values[i];
    return out;
  }

  std::vector<double> direction(n, 0.0);
  double tau_eff = 1.0;
  if (spec.kind == Aggregator::kFedAvgM) {
    std::vector<double> mean(n, 0.0);
    for (std::size_t k = 0; k < updates.size(); ++k)
      for (std::size_t i = 0; i < n; ++i) mean[i] += p[k] * updates[k].params.values[i];
    for (std::size_t i = 0; i < n; ++i) direction[i] = global.values[i] - mean[i];
  } else {
    tau_eff = 0.0;
    for (std::size_t k = 0; k < updates.size(); ++k) {
      tau_eff += p[k] * static_cast<double>(updates[k].steps);
      if (updates[k].steps <= 0) continue;
      const double inv_tau = 1.0 / static_cast<double>(updates[k].steps);
      for (std::size_t i = 0; i < n; ++i)
        direction[i] += p[k] * (global.values[i] - updates[k].params.values[i]) * inv_tau;
    }
  }
  auto& v = out.momentum.velocity;
  if (v.size() != n) v.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = spec.beta * v[i] + direction[i];
    out.params.values[i] = global.values[i] - tau_eff * v[i];
  }
  return out;
}

struct GroupAccuracy {
  double worst = 0.0;
  double overall = 0.0;
  // Row-major over (y, a); nullopt for groups absent from the test set.
  std::vector<std::optional<double>> per_group;
  std::vector<std::string> warnings;
};

inline GroupAccuracy worst_group_accuracy(const ModelParams& params, std::span<const Sample> test,
                                          std::size_t num_classes, std::size_t num_attributes) {
  std::vector<std::size_t> correct(num_classes * num_attributes, 0), total(num_classes * num_attributes, 0);
  std::size_t all_correct = 0;
  for (const auto& s : test) {
    const std::size_t g = static_cast<std::size_t>(s.y) * num_attributes + static_cast<std::size_t>(s.a);
    if (g >= total.size()) throw IndexError("worst_group_accuracy: sample label out of range");
    ++total[g];
    if (predict(params, s.features) == s.y) {
      ++correct[g];
      ++all_correct;
    }
  }
  GroupAccuracy out;
  out.worst = INFINITY;
  for (std::size_t g = 0; g < total.size(); ++g) {
    if (total[g] == 0) {
      out.per_group.push_back(std::nullopt);
      out.warnings.push_back("group (" + std::to_string(g / num_attributes) + "," +
                             std::to_string(g % num_attributes) + ") has no test samples");
      continue;
    }
    const double acc = static_cast<double>(correct[g]) / static_cast<double>(total[g]);
    out.per_group.push_back(acc);
    out.worst = std::min(out.worst, acc);
  }
  if (!std::isfinite(out.worst)) out.worst = 0.0;
  out.overall = test.empty() ? 0.0 : static_cast<double>(all_correct) / static_cast<double>(test.size());
  return out;
}

struct FederationConfig {
  int rounds = 60;
  std::size_t clients_per_round = 9;
  AggregatorSpec aggregator;
  double prox_mu = 0.0;
  bool prox_unsquared = false;
  int local_epochs = 1;
  int batch_size = 28;
  double learning_rate = 0.001;
  std::size_t hidden = 16;
  Strategy strategy = Strategy::kFedDiverse;
  SelectionOptions selection;
  EstimationConfig estimation;
  DhtSource dht_source = DhtSource::kEstimated;
  std::uint64_t seed = 7;
  std::size_t threads = 0;  // 0: worker_count()

  // Strategies that run the pre-training + heterogeneity pipeline.
  bool uses_dht_pipeline() const {
    return strategy == Strategy::kFedDiverse || strategy == Strategy::kVarianceOracle;
  }
};

inline nlohmann::json config_to_json(const FederationConfig& c) {
  return {{"rounds", c.rounds},
          {"clients_per_round", c.clients_per_round},
          {"aggregator", to_string(c.aggregator.kind)},
          {"momentum", c.aggregator.beta},
          {"weight_mode", to_string(c.aggregator.weights)},
          {"prox_mu", c.prox_mu},
          {"prox_unsquared", c.prox_unsquared},
          {"local_epochs", c.local_epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"hidden", c.hidden},
          {"strategy", to_string(c.strategy)},
          {"powd_ascending", c.selection.powd_ascending},
          {"ablation", to_string(c.dht_source)},
          {"seed", c.seed},
          {"estimation",
           {{"pretrain_rounds", c.estimation.pretrain_rounds},
            {"biased_epochs", c.estimation.biased_train.epochs},
            {"biased_lr", c.estimation.biased_train.learning_rate},
            {"attr_epochs", c.estimation.attr_train.epochs},
            {"attr_lr", c.estimation.attr_train.learning_rate},
            {"gce_q", c.estimation.gce_q}}}};
}

struct RoundRecord {
  int round = 0;
  std::vector<ClientId> selected;
  std::vector<int> steps;
  double test_loss = 0.0;
  std::vector<std::optional<double>> group_accuracy;
  double worst_group_accuracy = 0.0;
  double overall_accuracy = 0.0;
};

struct RunResult {
  FederationConfig config;
  std::string recipe_name;
  std::size_t num_classes = 0;
  std::size_t num_attributes = 0;
  std::vector<RoundRecord> rounds;
  ModelParams final_params;
  std::string final_params_digest;
  nlohmann::json dht_diagnostics = nlohmann::json::object();
  double wall_time_seconds = 0.0;
};

/// Coordinator state of one federation run.
class Federation {
 public:
  Federation(const FederatedDataset& fd, FederationConfig cfg) : fd_(fd), cfg_(std::move(cfg)) {
    validate();
    Rng init_rng = make_rng(cfg_.seed, Stream::kModelInit);
    global_ = init_mlp(fd_.feature_dim(), cfg_.hidden, fd_.num_classes, init_rng);
    selection_ = SelectionState::make(cfg_.strategy, fd_.num_clients(), cfg_.seed, cfg_.selection);
    examples_.reserve(fd_.num_clients());
    for (const auto& c : fd_.client_datasets) examples_.push_back(class_examples(c));
    test_examples_ = class_examples(fd_.test_set);
  }

  const ModelParams& global() const { return global_; }
  const std::vector<RoundRecord>& records() const { return records_; }
  const SelectionState& selection() const { return selection_; }
  const nlohmann::json& dht_diagnostics() const { return diagnostics_; }

  /// FedAvg with every client for `rounds` rounds.
  void pretrain(int rounds) {
    AggregatorSpec plain{Aggregator::kFedAvg, 0.0, cfg_.aggregator.weights};
    for (int r = 0; r < rounds; ++r) {
      auto ids = detail::all_ids(fd_.num_clients());
      auto updates = train_clients(ids, [&](ClientId k) {
        return derive_seed(cfg_.seed, Stream::kPretrain, {static_cast<std::uint64_t>(r), k});
      });
      global_ = aggregate(global_, updates, plain, {}).params;
    }
  }

  /// Fills the selector's heterogeneity input from the configured source.
  void prepare_selection() {
    diagnostics_ = nlohmann::json::object();
    diagnostics_["source"] = to_string(cfg_.dht_source);
    if (!cfg_.uses_dht_pipeline()) {
      diagnostics_["estimation_skipped"] = true;
      return;
    }
    std::vector<HeterogeneityTriplet> truth;
    for (const auto& m : fd_.true_matrices) truth.push_back(dht_from_matrix(m));
    diagnostics_["true_triplets"] = truth;

    if (cfg_.dht_source == DhtSource::kKnownMatrixWeights || cfg_.strategy == Strategy::kVarianceOracle) {
      const auto vm = variance_min_weights(fd_.true_matrices);
      selection_.oracle_weights = vm.weights;
      selection_.strategy = Strategy::kVarianceOracle;
      diagnostics_["estimation_skipped"] = true;
      diagnostics_["oracle_weights"] = vm.weights;
      diagnostics_["oracle_variance"] = vm.variance;
      diagnostics_["uniform_variance"] = vm.uniform_variance;
      diagnostics_["oracle_converged"] = vm.converged;
      return;
    }
    DhtMatrix dht;
    if (cfg_.dht_source == DhtSource::kKnownDht) {
      dht.columns = truth;
      diagnostics_["estimation_skipped"] = true;
    } else {
      std::vector<ClientEstimate> estimates(fd_.num_clients());
      const ModelParams start = global_;
      parallel_for(fd_.num_clients(), threads(), [&](std::size_t k) {
        estimates[k] = client_dht(fd_.client_datasets[k], start, fd_.num_classes, cfg_.estimation,
                                  ClientKey{cfg_.seed, k});
      });
      std::array<double, 3> err{0.0, 0.0, 0.0};
      for (std::size_t k = 0; k < estimates.size(); ++k) {
        dht.columns.push_back(estimates[k].triplet);
        for (std::size_t i = 0; i < 3; ++i) err[i] += std::abs(estimates[k].triplet[i] - truth[k][i]);
      }
      for (double& e : err) e /= static_cast<double>(estimates.size());
      diagnostics_["estimation_skipped"] = false;
      diagnostics_["clients"] = estimates;
      diagnostics_["mean_abs_error"] = {{"ci", err[0]}, {"ai", err[1]}, {"sc", err[2]}};
    }
    diagnostics_["triplets"] = dht.columns;
    selection_.dht = std::move(dht);
  }

  /// select -> local training -> aggregate -> evaluate.
  const RoundRecord& run_round() {
    const int t = static_cast<int>(records_.size()) + 1;
    const auto seed_for = [&](ClientId k) {
      return derive_seed(cfg_.seed, Stream::kLocalTrain, {static_cast<std::uint64_t>(t), k});
    };

    RoundContext ctx;
    ctx.round = static_cast<std::size_t>(t);
    std::vector<double> losses;
    std::vector<char> known;
    if (selection_.strategy == Strategy::kPowD) {
      losses.assign(fd_.num_clients(), 0.0);
      known.assign(fd_.num_clients(), 0);
      ctx.client_loss = [&](ClientId k) {
        if (!known[k]) {
          losses[k] = mean_cross_entropy(global_, examples_[k]);
          known[k] = 1;
        }
        return losses[k];
      };
    }
    std::vector<std::vector<double>> probe;
    if (selection_.strategy == Strategy::kHcsFed && selection_.clusters.empty()) {
      auto updates = train_clients(detail::all_ids(fd_.num_clients()), seed_for);
      for (const auto& u : updates) probe.push_back(delta(u.params));
      ctx.all_client_updates = &probe;
    }

    Rng sel_rng = make_rng(cfg_.seed, Stream::kSelection, {static_cast<std::uint64_t>(t)});
    RoundRecord rec;
    rec.round = t;
    rec.selected = select_clients(selection_, cfg_.clients_per_round, ctx, sel_rng);

    auto ordered = rec.selected;
    std::sort(ordered.begin(), ordered.end());
    auto updates = train_clients(ordered, seed_for);
    for (auto id : rec.selected)
      for (const auto& u : updates)
        if (u.id == id) rec.steps.push_back(u.steps);

    if (selection_.strategy == Strategy::kFedPns) {
      const auto p = aggregation_weights(updates, cfg_.aggregator.weights);
      std::vector<double> agg(global_.size(), 0.0);
      std::vector<std::pair<ClientId, std::vector<double>>> deltas;
      for (std::size_t k = 0; k < updates.size(); ++k) {
        auto d = delta(updates[k].params);
        for (std::size_t i = 0; i < d.size(); ++i) agg[i] += p[k] * d[i];
        deltas.emplace_back(updates[k].id, std::move(d));
      }
      fedpns_update(selection_, agg, deltas);
    }

    auto result = aggregate(global_, updates, cfg_.aggregator, momentum_);
    global_ = std::move(result.params);
    momentum_ = std::move(result.momentum);

    const auto eval = worst_group_accuracy(global_, fd_.test_set, fd_.num_classes, fd_.num_attributes);
    rec.test_loss = mean_cross_entropy(global_, test_examples_);
    rec.group_accuracy = eval.per_group;
    rec.worst_group_accuracy = eval.worst;
    rec.overall_accuracy = eval.overall;
    records_.push_back(std::move(rec));
    return records_.back();
  }

 private:
  void validate() const {
    if (fd_.num_clients() == 0) throw ConfigError("federation has no clients");
    if (cfg_.rounds <= 0) throw ConfigError("rounds must be positive");
    if (cfg_.clients_per_round == 0) throw ConfigError("clients_per_round must be positive");
    if (cfg_.clients_per_round > fd_.num_clients()) throw ConfigError("clients_per_round exceeds federation size");
    if (cfg_.local_epochs < 0) throw ConfigError("local_epochs must be non-negative");
    if (cfg_.batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (!(cfg_.learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
    if (!(cfg_.aggregator.beta >= 0.0 && cfg_.aggregator.beta < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(cfg_.prox_mu >= 0.0)) throw ConfigError("prox_mu must be non-negative");
    if (cfg_.dht_source != DhtSource::kEstimated && !cfg_.uses_dht_pipeline())
      throw ConfigError("ablation modes other than 'estimated' need strategy feddiverse or variance_oracle");
    for (std::size_t k = 0; k < fd_.num_clients(); ++k)
      if (fd_.client_datasets[k].empty()) throw ConfigError("client " + std::to_string(k) + " has no samples");
  }

  std::size_t threads() const { return cfg_.threads > 0 ? cfg_.threads : worker_count(); }

  std::vector<double> delta(const ModelParams& local) const {
    std::vector<double> d(global_.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = global_.values[i] - local.values[i];
    return d;
  }

  template <typename SeedFn>
  std::vector<ClientUpdate> train_clients(const std::vector<ClientId>& ids, SeedFn seed_for) const {
    std::vector<ClientUpdate> updates(ids.size());
    const LossSpec loss =
        cfg_.prox_mu > 0.0 ? LossSpec::proximal(cfg_.prox_mu, global_, cfg_.prox_unsquared) : LossSpec::cross_entropy();
    parallel_for(ids.size(), threads(), [&](std::size_t i) {
      const ClientId k = ids[i];
      TrainConfig tc{cfg_.local_epochs, cfg_.batch_size, cfg_.learning_rate, seed_for(k), false};
      auto trained = sgd_train(global_, examples_[k], tc, loss);
      updates[i] = ClientUpdate{k, std::move(trained.params), examples_[k].size(), trained.steps};
    });
    return updates;
  }

  const FederatedDataset& fd_;
  FederationConfig cfg_;
  ModelParams global_;
  MomentumState momentum_;
  SelectionState selection_;
  std::vector<std::vector<Example>> examples_;
  std::vector<Example> test_examples_;
  std::vector<RoundRecord> records_;
  nlohmann::json diagnostics_ = nlohmann::json::object();
};

/// Optional pre-training, heterogeneity estimation (or injection of the
/// true matrices), then `rounds` selection-driven rounds.
inline RunResult run_federation(const FederationConfig& cfg, const FederatedDataset& fd) {
  const auto start = std::chrono::steady_clock::now();
  Federation fed(fd, cfg);
  if (cfg.uses_dht_pipeline()) fed.pretrain(cfg.estimation.pretrain_rounds);
  fed.prepare_selection();
  for (int t = 0; t < cfg.rounds; ++t) fed.run_round();

  RunResult out;
  out.config = cfg;
  out.recipe_name = fd.name;
  out.num_classes = fd.num_classes;
  out.num_attributes = fd.num_attributes;
  out.rounds = fed.records();
  out.final_params = fed.global();
  out.final_params_digest = params_digest(out.final_params);
  out.dht_diagnostics = fed.dht_diagnostics();
  out.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace fedsim
