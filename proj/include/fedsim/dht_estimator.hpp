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

// Client-side estimation of the interaction matrix without attribute labels:
// a deliberately biased model (generalized cross-entropy) splits each class
// into predicted majority/minority groups, the class with the most even split
// becomes the pivot, and an attribute classifier trained on the pivot's
// pseudo-labels assigns an attribute to every local sample.

#include <cstdint>
#include <cstdlib>
#include <string>
#include <vector>

#include "fedsim/datagen.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/hetero_metrics.hpp"
#include "fedsim/model.hpp"
#include "fedsim/rng.hpp"
#include "json.hpp"

namespace fedsim {

/// Examples with the class label as target. The spans point into `samples`.
inline std::vector<Example> class_examples(std::span<const Sample> samples) {
  std::vector<Example> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.features, s.y});
  return out;
}

struct EstimationConfig {
  int pretrain_rounds = 1;
  TrainConfig biased_train{50, 28, 0.005, 0, true};
  // The attribute head starts from scratch on a small, imbalanced pseudo-labeled
  // set, so it gets a larger step than the biased model.
  TrainConfig attr_train{50, 28, 0.05, 0, false};
  double gce_q = 0.7;
};

/// A GCE-trained classifier. `positive_class` is -1 for the multiclass model
/// used when |Y| = 2, otherwise the class of a one-vs-rest head (output 1 =
/// "is this class").
struct BiasedClassifier {
  int positive_class = -1;
  ModelParams params;
};

/// Predicted majority (correctly classified) and minority (misclassified)
/// sample indices per class.
struct GroupAssignment {
  std::vector<std::vector<std::size_t>> majority;
  std::vector<std::vector<std::size_t>> minority;

  std::size_t num_classes() const { return majority.size(); }
};

struct DhtMatrix {
  std::vector<HeterogeneityTriplet> columns;

  std::size_t num_clients() const { return columns.size(); }
};

/// Key of a client's random streams.
struct ClientKey {
  std::uint64_t run_seed = 0;
  std::uint64_t client_id = 0;
};

inline std::vector<BiasedClassifier> fit_biased_models(const ModelParams& global_params,
                                                       std::span<const Sample> data, std::size_t num_classes,
                                                       const EstimationConfig& cfg, ClientKey key) {
  if (data.empty() || num_classes < 2) return {};
  std::vector<BiasedClassifier> out;
  const LossSpec loss = LossSpec::gce(cfg.gce_q);
  if (num_classes == 2) {
    if (global_params.output_dim() != 2) throw ShapeError("biased model: global model must have 2 outputs");
    TrainConfig tc = cfg.biased_train;
    tc.seed = derive_seed(key.run_seed, Stream::kBiasedModel, {key.client_id, 0});
    const auto examples = class_examples(data);
    out.push_back({-1, sgd_train(global_params, examples, tc, loss).params});
    return out;
  }
  for (std::size_t y = 0; y < num_classes; ++y) {
    Rng head_rng = make_rng(key.run_seed, Stream::kBiasedModel, {key.client_id, y + 1, 1});
    ModelParams init = reinit_head(global_params, 2, head_rng);
    std::vector<Example> examples;
    examples.reserve(data.size());
    for (const auto& s : data) examples.push_back({s.features, s.y == static_cast<int>(y) ? 1 : 0});
    TrainConfig tc = cfg.biased_train;
    tc.seed = derive_seed(key.run_seed, Stream::kBiasedModel, {key.client_id, y + 1});
    out.push_back({static_cast<int>(y), sgd_train(std::move(init), examples, tc, loss).params});
  }
  return out;
}

inline GroupAssignment split_groups(std::span<const BiasedClassifier> classifiers, std::span<const Sample> data,
                                    std::size_t num_classes) {
  GroupAssignment ga;
  ga.majority.resize(num_classes);
  ga.minority.resize(num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto y = static_cast<std::size_t>(data[i].y);
    if (y >= num_classes) throw IndexError("split_groups: class label out of range");
    bool correct = true;
    if (classifiers.size() == 1 && classifiers.front().positive_class < 0) {
      correct = predict(classifiers.front().params, data[i].features) == data[i].y;
    } else {
      for (const auto& c : classifiers) {
        if (c.positive_class == data[i].y) {
          correct = predict(c.params, data[i].features) == 1;
          break;
        }
      }
    }
    (correct ? ga.majority : ga.minority)[y].push_back(i);
  }
  return ga;
}

/// Class with the smallest | |majority| - |minority| | among classes present;
/// ties go to the lowest class id.
inline int pick_pivot_class(const GroupAssignment& ga) {
  int best = -1;
  std::size_t best_gap = 0;
  for (std::size_t y = 0; y < ga.num_classes(); ++y) {
    const std::size_t big = ga.majority[y].size();
    const std::size_t small = ga.minority[y].size();
    if (big + small == 0) continue;
    const std::size_t gap = big > small ? big - small : small - big;
    if (best < 0 || gap < best_gap) {
      best = static_cast<int>(y);
      best_gap = gap;
    }
  }
  if (best < 0) throw DomainError("pick_pivot_class: no class has samples");
  return best;
}

struct EstimatedMatrix {
  InteractionMatrix matrix;
  bool fallback = false;
};

/// |Y| x 2 counts of (true class, predicted attribute). Predicted attribute 1
/// means "looks like the pivot's majority group".
inline EstimatedMatrix estimate_interaction_matrix(std::span<const Sample> data, const GroupAssignment& ga, int pivot,
                                                   const ModelParams& global_params, const EstimationConfig& cfg,
                                                   ClientKey key) {
  const std::size_t num_classes = ga.num_classes();
  EstimatedMatrix out{InteractionMatrix(num_classes, 2), false};
  if (pivot < 0 || static_cast<std::size_t>(pivot) >= num_classes) throw IndexError("pivot class out of range");
  const auto& big = ga.majority[pivot];
  const auto& small = ga.minority[pivot];
  if (big.empty() || small.empty()) {
    out.fallback = true;
    for (const auto& s : data) out.matrix.add(static_cast<std::size_t>(s.y), 1);
    return out;
  }
  std::vector<Example> pseudo;
  pseudo.reserve(big.size() + small.size());
  for (auto i : big) pseudo.push_back({data[i].features, 1});
  for (auto i : small) pseudo.push_back({data[i].features, 0});

  Rng head_rng = make_rng(key.run_seed, Stream::kAttributeModel, {key.client_id, 1});
  ModelParams init = reinit_head(global_params, 2, head_rng);
  TrainConfig tc = cfg.attr_train;
  tc.seed = derive_seed(key.run_seed, Stream::kAttributeModel, {key.client_id});
  const auto attr_model = sgd_train(std::move(init), pseudo, tc, LossSpec::cross_entropy()).params;
  for (const auto& s : data) out.matrix.add(static_cast<std::size_t>(s.y), static_cast<std::size_t>(predict(attr_model, s.features)));
  return out;
}

struct ClientEstimate {
  HeterogeneityTriplet triplet;
  InteractionMatrix matrix;
  std::vector<std::size_t> majority_sizes;
  std::vector<std::size_t> minority_sizes;
  int pivot = -1;
  bool fallback = false;
  bool failed = false;
  std::vector<std::string> flags;
};

inline void to_json(nlohmann::json& j, const ClientEstimate& e) {
  j = nlohmann::json{{"triplet", e.triplet},   {"matrix", e.matrix},     {"majority_sizes", e.majority_sizes},
                     {"minority_sizes", e.minority_sizes}, {"pivot", e.pivot}, {"fallback", e.fallback},
                     {"failed", e.failed},     {"flags", e.flags}};
}

/// Triplet from class counts alone: (ci, 1, 0).
inline HeterogeneityTriplet class_only_triplet(std::span<const Sample> data, std::size_t num_classes) {
  InteractionMatrix m(num_classes, 1);
  for (const auto& s : data) m.add(static_cast<std::size_t>(s.y), 0);
  HeterogeneityTriplet t{1.0, 1.0, 0.0};
  if (m.total() > 0) t.ci = dht_from_matrix(m).ci;
  return t;
}

/// Full client pipeline. Never throws for degenerate data; failures produce the
/// class-only triplet and are flagged.
inline ClientEstimate client_dht(std::span<const Sample> data, const ModelParams& global_params,
                                 std::size_t num_classes, const EstimationConfig& cfg, ClientKey key) {
  ClientEstimate est;
  for (std::size_t y = 0; y < num_classes; ++y) {
    std::size_t n = 0;
    for (const auto& s : data) n += s.y == static_cast<int>(y) ? 1 : 0;
    if (n == 1) est.flags.push_back("class " + std::to_string(y) + " has fewer than 2 samples");
  }
  try {
    if (data.empty()) throw DomainError("client has no samples");
    const auto classifiers = fit_biased_models(global_params, data, num_classes, cfg, key);
    const auto ga = split_groups(classifiers, data, num_classes);
    for (std::size_t y = 0; y < num_classes; ++y) {
      est.majority_sizes.push_back(ga.majority[y].size());
      est.minority_sizes.push_back(ga.minority[y].size());
    }
    est.pivot = pick_pivot_class(ga);
    auto em = estimate_interaction_matrix(data, ga, est.pivot, global_params, cfg, key);
    est.fallback = em.fallback;
    if (em.fallback) est.flags.push_back("pivot class has an empty group; single-attribute fallback");
    est.matrix = std::move(em.matrix);
    est.triplet = dht_from_matrix(est.matrix);
  } catch (const Error& e) {
    est.failed = true;
    est.flags.push_back(std::string("estimation failed: ") + e.what());
    est.triplet = class_only_triplet(data, num_classes);
  }
  return est;
}

}  // namespace fedsim
