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

// Synthetic federations. Every sample carries a task-intrinsic block drawn
// around its class mean and an attribute block drawn around its attribute
// mean; recipes pin the exact per-client (class, attribute) counts.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/hetero_metrics.hpp"
#include "fedsim/rng.hpp"
#include "json.hpp"

namespace fedsim {

struct Sample {
  std::vector<double> features;
  int y = 0;
  int a = 0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct GeneratorSpec {
  int d_y = 5;
  int d_a = 5;
  std::vector<std::vector<double>> class_means;
  std::vector<std::vector<double>> attribute_means;
  double noise_std = 1.0;
  double attribute_noise_std = 0.5;

  std::size_t num_classes() const { return class_means.size(); }
  std::size_t num_attributes() const { return attribute_means.size(); }
  std::size_t feature_dim() const { return static_cast<std::size_t>(d_y + d_a); }

  // One-hot means scaled by `class_scale` / `attribute_scale`.
  static GeneratorSpec with_default_means(std::size_t num_classes, std::size_t num_attributes, int d_y = 5,
                                          int d_a = 5, double class_scale = 1.5, double attribute_scale = 2.5) {
    if (static_cast<std::size_t>(d_y) < num_classes || static_cast<std::size_t>(d_a) < num_attributes) {
      throw ValidationError("default one-hot means need d_y >= |Y| and d_a >= |A|");
    }
    GeneratorSpec spec;
    spec.d_y = d_y;
    spec.d_a = d_a;
    spec.class_means.assign(num_classes, std::vector<double>(d_y, 0.0));
    for (std::size_t y = 0; y < num_classes; ++y) spec.class_means[y][y] = class_scale;
    spec.attribute_means.assign(num_attributes, std::vector<double>(d_a, 0.0));
    for (std::size_t a = 0; a < num_attributes; ++a) spec.attribute_means[a][a] = attribute_scale;
    return spec;
  }

  double min_class_mean_distance() const { return min_pairwise_distance(class_means); }
  double min_attribute_mean_distance() const { return min_pairwise_distance(attribute_means); }

  void validate() const {
    if (d_y <= 0 || d_a <= 0) throw ValidationError("generator: dimensions must be positive");
    if (!(noise_std >= 0.0) || !(attribute_noise_std >= 0.0)) {
      throw ValidationError("generator: noise must be non-negative");
    }
    if (class_means.empty() || attribute_means.empty()) throw ValidationError("generator: missing means");
    for (const auto& m : class_means)
      if (m.size() != static_cast<std::size_t>(d_y)) throw ValidationError("generator: class mean has wrong dimension");
    for (const auto& m : attribute_means)
      if (m.size() != static_cast<std::size_t>(d_a))
        throw ValidationError("generator: attribute mean has wrong dimension");
    if (num_classes() > 1 && min_class_mean_distance() <= 0.0)
      throw ValidationError("generator: class means must be pairwise distinct");
    if (num_attributes() > 1 && min_attribute_mean_distance() <= 0.0)
      throw ValidationError("generator: attribute means must be pairwise distinct");
  }

 private:
  static double min_pairwise_distance(const std::vector<std::vector<double>>& means) {
    double best = INFINITY;
    for (std::size_t i = 0; i < means.size(); ++i)
      for (std::size_t j = i + 1; j < means.size(); ++j) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < means[i].size(); ++c) d2 += (means[i][c] - means[j][c]) * (means[i][c] - means[j][c]);
        best = std::min(best, std::sqrt(d2));
      }
    return best;
  }
};

struct FederationRecipe {
  std::string name;
  std::vector<InteractionMatrix> client_matrices;
  int test_per_group = 100;
  std::uint64_t seed = 0;

  std::size_t num_clients() const { return client_matrices.size(); }
  std::size_t num_classes() const { return client_matrices.empty() ? 0 : client_matrices.front().num_classes(); }
  std::size_t num_attributes() const {
    return client_matrices.empty() ? 0 : client_matrices.front().num_attributes();
  }

  /// Throws ValidationError listing every offending client or cell.
  void validate() const {
    std::vector<std::string> problems;
    if (client_matrices.empty()) problems.push_back("recipe has no clients");
    if (test_per_group <= 0) problems.push_back("test_per_group must be positive");
    for (std::size_t k = 0; k < client_matrices.size(); ++k) {
      const auto& m = client_matrices[k];
      if (m.empty()) {
        problems.push_back("client " + std::to_string(k) + ": empty matrix");
        continue;
      }
      if (!m.same_labels(client_matrices.front())) {
        problems.push_back("client " + std::to_string(k) + ": label sets differ from client 0");
        continue;
      }
      if (m.total() <= 0) problems.push_back("client " + std::to_string(k) + ": no samples");
    }
    if (problems.empty()) {
      // A cell that is zero in the summed matrix is absent from the federation;
      // non-negative counts make that hold per client as well.
      const auto total = sum_matrices(client_matrices);
      for (std::size_t y = 0; y < total.num_classes(); ++y)
        for (std::size_t a = 0; a < total.num_attributes(); ++a)
          if (total.at(y, a) == 0)
            for (std::size_t k = 0; k < client_matrices.size(); ++k)
              if (client_matrices[k].at(y, a) != 0)
                problems.push_back("client " + std::to_string(k) + " cell (" + std::to_string(y) + "," +
                                   std::to_string(a) + ") nonzero where federation total is zero");
    }
    if (!problems.empty()) {
      std::string msg = "invalid recipe '" + name + "':";
      for (const auto& p : problems) msg += "\n  " + p;
      throw ValidationError(msg);
    }
  }
};

struct FederatedDataset {
  std::string name;
  std::size_t num_classes = 0;
  std::size_t num_attributes = 0;
  std::vector<std::vector<Sample>> client_datasets;
  std::vector<Sample> test_set;
  std::vector<InteractionMatrix> true_matrices;

  std::size_t num_clients() const { return client_datasets.size(); }
  std::size_t feature_dim() const {
    if (!test_set.empty()) return test_set.front().features.size();
    for (const auto& c : client_datasets)
      if (!c.empty()) return c.front().features.size();
    return 0;
  }

  friend bool operator==(const FederatedDataset&, const FederatedDataset&) = default;
};

/// Draws one sample of class `y` with attribute `a`.
inline Sample sample_point(const GeneratorSpec& spec, int y, int a, Rng& rng) {
  if (y < 0 || static_cast<std::size_t>(y) >= spec.num_classes()) {
    throw IndexError("sample_point: class id " + std::to_string(y) + " out of range");
  }
  if (a < 0 || static_cast<std::size_t>(a) >= spec.num_attributes()) {
    throw IndexError("sample_point: attribute id " + std::to_string(a) + " out of range");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Sample s;
  s.y = y;
  s.a = a;
  s.features.reserve(spec.feature_dim());
  for (double mu : spec.class_means[y]) s.features.push_back(mu + spec.noise_std * normal(rng));
  for (double mu : spec.attribute_means[a]) s.features.push_back(mu + spec.attribute_noise_std * normal(rng));
  return s;
}

inline InteractionMatrix matrix_from_samples(std::span<const Sample> samples, std::size_t num_classes,
                                             std::size_t num_attributes) {
  InteractionMatrix m(num_classes, num_attributes);
  for (const auto& s : samples) m.add(static_cast<std::size_t>(s.y), static_cast<std::size_t>(s.a));
  return m;
}

/// Materializes a recipe. Client k draws from its own stream keyed by
/// (seed, k), so clients can be generated in any order.
inline FederatedDataset build_federation(const FederationRecipe& recipe, const GeneratorSpec& spec) {
  recipe.validate();
  spec.validate();
  if (spec.num_classes() != recipe.num_classes() || spec.num_attributes() != recipe.num_attributes()) {
    throw ValidationError("generator means do not match the recipe's class/attribute counts");
  }
  FederatedDataset fd;
  fd.name = recipe.name;
  fd.num_classes = recipe.num_classes();
  fd.num_attributes = recipe.num_attributes();
  fd.true_matrices = recipe.client_matrices;
  fd.client_datasets.resize(recipe.num_clients());
  for (std::size_t k = 0; k < recipe.num_clients(); ++k) {
    Rng rng = make_rng(recipe.seed, Stream::kClientData, {k});
    const auto& m = recipe.client_matrices[k];
    auto& out = fd.client_datasets[k];
    out.reserve(static_cast<std::size_t>(m.total()));
    for (std::size_t y = 0; y < m.num_classes(); ++y)
      for (std::size_t a = 0; a < m.num_attributes(); ++a)
        for (std::int64_t i = 0; i < m.at(y, a); ++i)
          out.push_back(sample_point(spec, static_cast<int>(y), static_cast<int>(a), rng));
  }
  Rng test_rng = make_rng(recipe.seed, Stream::kTestData);
  for (std::size_t y = 0; y < fd.num_classes; ++y)
    for (std::size_t a = 0; a < fd.num_attributes; ++a)
      for (int i = 0; i < recipe.test_per_group; ++i)
        fd.test_set.push_back(sample_point(spec, static_cast<int>(y), static_cast<int>(a), test_rng));
  return fd;
}

/// Recounts the realized labels, checks them against the recipe and returns
/// the federation metrics of the realized data.
inline FederationMetrics verify_recipe(const FederatedDataset& fd, const FederationRecipe& recipe) {
  if (fd.num_clients() != recipe.num_clients() || fd.true_matrices.size() != recipe.num_clients()) {
    throw IntegrityError("dataset has " + std::to_string(fd.num_clients()) + " clients, recipe has " +
                         std::to_string(recipe.num_clients()));
  }
  std::vector<InteractionMatrix> realized;
  realized.reserve(fd.num_clients());
  for (std::size_t k = 0; k < fd.num_clients(); ++k) {
    auto m = matrix_from_samples(fd.client_datasets[k], fd.num_classes, fd.num_attributes);
    const auto& want = recipe.client_matrices[k];
    for (std::size_t y = 0; y < want.num_classes(); ++y)
      for (std::size_t a = 0; a < want.num_attributes(); ++a) {
        if (m.at(y, a) != want.at(y, a) || fd.true_matrices[k].at(y, a) != want.at(y, a)) {
          throw IntegrityError("client " + std::to_string(k) + " cell (" + std::to_string(y) + "," +
                               std::to_string(a) + "): expected " + std::to_string(want.at(y, a)) + ", found " +
                               std::to_string(m.at(y, a)));
        }
      }
    realized.push_back(std::move(m));
  }
  const auto test = matrix_from_samples(fd.test_set, fd.num_classes, fd.num_attributes);
  for (auto c : test.cells()) {
    if (c != recipe.test_per_group) throw IntegrityError("test set is not group-balanced");
  }
  return federation_metrics(realized);
}

// Recipe files ---------------------------------------------------------------

struct RecipeFile {
  FederationRecipe recipe;
  GeneratorSpec generator;
};

inline RecipeFile recipe_from_json(const nlohmann::json& j) {
  RecipeFile out;
  try {
    auto& r = out.recipe;
    r.name = j.at("name").get<std::string>();
    r.seed = j.value("seed", std::uint64_t{0});
    r.test_per_group = j.value("test_per_group", 100);
    for (const auto& c : j.at("clients")) {
      InteractionMatrix m;
      from_json(c, m);
      r.client_matrices.push_back(std::move(m));
    }
    r.validate();

    const auto g = j.value("generator", nlohmann::json::object());
    const int d_y = g.value("d_y", 5);
    const int d_a = g.value("d_a", 5);
    out.generator = GeneratorSpec::with_default_means(r.num_classes(), r.num_attributes(), d_y, d_a,
                                                      g.value("class_scale", 1.5), g.value("attribute_scale", 2.5));
    if (g.contains("class_means")) out.generator.class_means = g.at("class_means").get<std::vector<std::vector<double>>>();
    if (g.contains("attribute_means"))
      out.generator.attribute_means = g.at("attribute_means").get<std::vector<std::vector<double>>>();
    out.generator.noise_std = g.value("noise_std", 1.0);
    out.generator.attribute_noise_std = g.value("attribute_noise_std", 0.5);
    out.generator.validate();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("recipe: ") + e.what());
  }
  return out;
}

inline nlohmann::json recipe_to_json(const FederationRecipe& r, const GeneratorSpec& g) {
  nlohmann::json clients = nlohmann::json::array();
  for (std::size_t k = 0; k < r.num_clients(); ++k) {
    nlohmann::json c = r.client_matrices[k];
    c["id"] = k;
    clients.push_back(std::move(c));
  }
  return {{"name", r.name},
          {"seed", r.seed},
          {"test_per_group", r.test_per_group},
          {"clients", clients},
          {"generator",
           {{"d_y", g.d_y},
            {"d_a", g.d_a},
            {"class_means", g.class_means},
            {"attribute_means", g.attribute_means},
            {"noise_std", g.noise_std},
            {"attribute_noise_std", g.attribute_noise_std}}}};
}

inline RecipeFile load_recipe(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open recipe file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("recipe " + path + ": " + e.what());
  }
  return recipe_from_json(j);
}

// CSV export: one row per sample, `client_id,y,a,f0..fD`. Test rows use
// client_id -1.

inline void write_samples_csv(std::ostream& out, const FederatedDataset& fd, bool test) {
  const std::size_t dim = fd.feature_dim();
  out << "client_id,y,a";
  for (std::size_t i = 0; i < dim; ++i) out << ",f" << i;
  out << '\n';
  char buf[32];
  auto emit = [&](long client, const Sample& s) {
    out << client << ',' << s.y << ',' << s.a;
    for (double f : s.features) {
      std::snprintf(buf, sizeof buf, "%.17g", f);
      out << ',' << buf;
    }
    out << '\n';
  };
  if (test) {
    for (const auto& s : fd.test_set) emit(-1, s);
  } else {
    for (std::size_t k = 0; k < fd.num_clients(); ++k)
      for (const auto& s : fd.client_datasets[k]) emit(static_cast<long>(k), s);
  }
}

/// Reads rows written by write_samples_csv, grouped by client id.
/// Rows with client_id -1 go to the test set.
inline void read_samples_csv(std::istream& in, FederatedDataset& fd) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("client_id,y,a", 0) != 0) {
    throw ValidationError("sample CSV: missing header");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 3) throw ValidationError("sample CSV line " + std::to_string(lineno) + ": too few columns");
    Sample s;
    long client = 0;
    try {
      client = std::stol(cells[0]);
      s.y = std::stoi(cells[1]);
      s.a = std::stoi(cells[2]);
      for (std::size_t i = 3; i < cells.size(); ++i) s.features.push_back(std::stod(cells[i]));
    } catch (const std::exception&) {
      throw ValidationError("sample CSV line " + std::to_string(lineno) + ": malformed number");
    }
    if (s.y < 0 || s.a < 0) throw ValidationError("sample CSV line " + std::to_string(lineno) + ": negative label");
    fd.num_classes = std::max(fd.num_classes, static_cast<std::size_t>(s.y) + 1);
    fd.num_attributes = std::max(fd.num_attributes, static_cast<std::size_t>(s.a) + 1);
    if (client < 0) {
      fd.test_set.push_back(std::move(s));
    } else {
      if (fd.client_datasets.size() <= static_cast<std::size_t>(client)) fd.client_datasets.resize(client + 1);
      fd.client_datasets[client].push_back(std::move(s));
    }
  }
}

}  // namespace fedsim
