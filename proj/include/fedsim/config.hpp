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

// Run configuration files: JSON, unknown keys rejected, defaults filled in.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/datagen.hpp"
#include "fedsim/engine.hpp"
#include "fedsim/errors.hpp"
#include "json.hpp"

namespace fedsim {

struct RunConfig {
  std::string recipe_path;
  RecipeFile recipe;
  FederationConfig federation;
  std::vector<std::uint64_t> seeds{7};
  std::optional<std::string> output_dir;

  // True when the selector gets its heterogeneity input without running the
  // client-side estimation pipeline.
  bool estimation_skipped() const {
    return !federation.uses_dht_pipeline() || federation.dht_source != DhtSource::kEstimated;
  }
};

namespace detail {

inline std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

inline void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, _] : obj.items())
    if (!known.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
T field(const nlohmann::json& obj, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("field '" + key + "' has the wrong type");
  }
}

inline void require(bool ok, const std::string& field_name, const std::string& constraint) {
  if (!ok) throw ConfigError("field '" + field_name + "' must " + constraint);
}

}  // namespace detail

/// Parses and validates a configuration document. `base_dir` resolves a
/// relative recipe path.
inline RunConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  using detail::field;
  using detail::require;
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  detail::reject_unknown(j,
                         {"recipe", "strategy", "rounds", "clients_per_round", "aggregator", "momentum",
                          "weight_mode", "prox_mu", "prox_unsquared", "local_epochs", "batch_size", "learning_rate",
                          "hidden", "ablation", "seed", "seeds", "powd_ascending", "estimation", "output_dir"},
                         "config");
  RunConfig rc;
  auto& f = rc.federation;

  require(j.contains("recipe"), "recipe", "be present");
  rc.recipe_path = field<std::string>(j, "recipe", "");
  std::filesystem::path rp(rc.recipe_path);
  if (rp.is_relative() && !base_dir.empty()) rp = base_dir / rp;
  rc.recipe_path = rp.string();

  require(j.contains("strategy"), "strategy", "be present");
  const auto strategy = parse_strategy(field<std::string>(j, "strategy", ""));
  require(strategy.has_value(), "strategy",
          "be one of feddiverse|uniform|round_robin|pow_d|fedpns|hcsfed|variance_oracle");
  f.strategy = *strategy;

  f.rounds = field(j, "rounds", 60);
  require(f.rounds > 0, "rounds", "be positive");
  const auto m = field<std::int64_t>(j, "clients_per_round", 9);
  require(m > 0, "clients_per_round", "be positive");
  f.clients_per_round = static_cast<std::size_t>(m);

  const auto agg = field<std::string>(j, "aggregator", "fedavgm");
  if (agg == "fedavg") {
    f.aggregator.kind = Aggregator::kFedAvg;
  } else if (agg == "fedavgm") {
    f.aggregator.kind = Aggregator::kFedAvgM;
  } else if (agg == "fednova") {
    f.aggregator.kind = Aggregator::kFedNova;
  } else {
    require(false, "aggregator", "be one of fedavg|fedavgm|fednova");
  }
  f.aggregator.beta = field(j, "momentum", 0.95);
  require(f.aggregator.beta >= 0.0 && f.aggregator.beta < 1.0, "momentum", "lie in [0, 1)");
  const auto wm = field<std::string>(j, "weight_mode", "uniform");
  require(wm == "uniform" || wm == "by_samples", "weight_mode", "be uniform or by_samples");
  f.aggregator.weights = wm == "uniform" ? WeightMode::kUniform : WeightMode::kBySamples;

  f.prox_mu = field(j, "prox_mu", 0.0);
  require(f.prox_mu >= 0.0, "prox_mu", "be non-negative");
  f.prox_unsquared = field(j, "prox_unsquared", false);
  f.local_epochs = field(j, "local_epochs", 1);
  require(f.local_epochs >= 0, "local_epochs", "be non-negative");
  f.batch_size = field(j, "batch_size", 28);
  require(f.batch_size > 0, "batch_size", "be positive");
  f.learning_rate = field(j, "learning_rate", 0.001);
  require(f.learning_rate > 0.0, "learning_rate", "be positive");
  const auto hidden = field<std::int64_t>(j, "hidden", 16);
  require(hidden >= 0, "hidden", "be non-negative");
  f.hidden = static_cast<std::size_t>(hidden);
  f.selection.powd_ascending = field(j, "powd_ascending", false);

  const auto ablation = field<std::string>(j, "ablation", "estimated");
  if (ablation == "estimated") {
    f.dht_source = DhtSource::kEstimated;
  } else if (ablation == "known_dht") {
    f.dht_source = DhtSource::kKnownDht;
  } else if (ablation == "known_matrix_weights") {
    f.dht_source = DhtSource::kKnownMatrixWeights;
  } else {
    require(false, "ablation", "be one of estimated|known_dht|known_matrix_weights");
  }
  if (f.dht_source != DhtSource::kEstimated)
    require(f.uses_dht_pipeline(), "ablation", "be 'estimated' unless strategy is feddiverse or variance_oracle");

  if (j.contains("seeds")) {
    require(!j.contains("seed"), "seeds", "not be combined with 'seed'");
    rc.seeds = field<std::vector<std::uint64_t>>(j, "seeds", {});
    require(!rc.seeds.empty(), "seeds", "be a non-empty list");
  } else {
    rc.seeds = {field<std::uint64_t>(j, "seed", 7)};
  }
  f.seed = rc.seeds.front();

  if (j.contains("estimation")) {
    const auto& e = j.at("estimation");
    require(e.is_object(), "estimation", "be an object");
    detail::reject_unknown(e, {"pretrain_rounds", "biased_epochs", "biased_lr", "attr_epochs", "attr_lr", "gce_q", "batch_size"},
                           "estimation");
    auto& est = f.estimation;
    est.pretrain_rounds = field(e, "pretrain_rounds", est.pretrain_rounds);
    require(est.pretrain_rounds >= 0, "estimation.pretrain_rounds", "be non-negative");
    est.biased_train.epochs = field(e, "biased_epochs", est.biased_train.epochs);
    est.biased_train.learning_rate = field(e, "biased_lr", est.biased_train.learning_rate);
    est.attr_train.epochs = field(e, "attr_epochs", est.attr_train.epochs);
    est.attr_train.learning_rate = field(e, "attr_lr", est.attr_train.learning_rate);
    est.gce_q = field(e, "gce_q", est.gce_q);
    const int bs = field(e, "batch_size", est.biased_train.batch_size);
    est.biased_train.batch_size = est.attr_train.batch_size = bs;
    require(est.biased_train.epochs > 0 && est.attr_train.epochs > 0, "estimation epochs", "be positive");
    require(est.biased_train.learning_rate > 0.0 && est.attr_train.learning_rate > 0.0, "estimation learning rates",
            "be positive");
    require(est.gce_q > 0.0 && est.gce_q <= 1.0, "estimation.gce_q", "lie in (0, 1]");
    require(bs > 0, "estimation.batch_size", "be positive");
  }
  if (j.contains("output_dir")) rc.output_dir = field<std::string>(j, "output_dir", "");

  rc.recipe = load_recipe(rc.recipe_path);
  if (f.clients_per_round > rc.recipe.recipe.num_clients())
    throw ConfigError("clients_per_round exceeds federation size");
  return rc;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + ": parse error at " + detail::line_col(text, e.byte > 0 ? e.byte - 1 : 0));
  }
  return config_from_json(j, std::filesystem::path(path).parent_path());
}

}  // namespace fedsim
