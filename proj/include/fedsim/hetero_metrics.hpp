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

// Statistical data heterogeneity metrics computed from class/attribute
// interaction matrices: class imbalance (CI), attribute imbalance (AI) and
// spurious correlation (SC), centrally and over a federation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedsim/errors.hpp"
#include "json.hpp"

namespace fedsim {

/// Joint count table of samples by class (rows) and attribute (columns).
class InteractionMatrix {
 public:
  InteractionMatrix() = default;

  InteractionMatrix(std::size_t num_classes, std::size_t num_attributes)
      : InteractionMatrix(iota_labels(num_classes), iota_labels(num_attributes)) {}

  InteractionMatrix(std::vector<int> class_labels, std::vector<int> attribute_labels)
      : class_labels_(std::move(class_labels)),
        attribute_labels_(std::move(attribute_labels)),
        counts_(class_labels_.size() * attribute_labels_.size(), 0) {}

  // Rows are classes. Labels default to 0..n-1.
  static InteractionMatrix from_rows(const std::vector<std::vector<std::int64_t>>& rows) {
    if (rows.empty() || rows.front().empty()) throw ShapeError("interaction matrix is empty");
    InteractionMatrix m(rows.size(), rows.front().size());
    for (std::size_t y = 0; y < rows.size(); ++y) {
      if (rows[y].size() != m.num_attributes()) {
        throw ShapeError("interaction matrix rows have different lengths");
      }
      for (std::size_t a = 0; a < rows[y].size(); ++a) m.set(y, a, rows[y][a]);
    }
    return m;
  }

  std::size_t num_classes() const { return class_labels_.size(); }
  std::size_t num_attributes() const { return attribute_labels_.size(); }
  const std::vector<int>& class_labels() const { return class_labels_; }
  const std::vector<int>& attribute_labels() const { return attribute_labels_; }
  bool empty() const { return counts_.empty(); }

  std::int64_t at(std::size_t y, std::size_t a) const { return counts_.at(index(y, a)); }

  void set(std::size_t y, std::size_t a, std::int64_t value) {
    if (value < 0) throw DomainError("interaction counts must be non-negative");
    counts_.at(index(y, a)) = value;
  }

  void add(std::size_t y, std::size_t a, std::int64_t delta = 1) { set(y, a, at(y, a) + delta); }

  std::span<const std::int64_t> cells() const { return counts_; }

  std::int64_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

  /// Class marginal (the marginal interaction vector).
  std::vector<std::int64_t> row_sums() const {
    std::vector<std::int64_t> out(num_classes(), 0);
    for (std::size_t y = 0; y < num_classes(); ++y)
      for (std::size_t a = 0; a < num_attributes(); ++a) out[y] += at(y, a);
    return out;
  }

  std::vector<std::int64_t> col_sums() const {
    std::vector<std::int64_t> out(num_attributes(), 0);
    for (std::size_t y = 0; y < num_classes(); ++y)
      for (std::size_t a = 0; a < num_attributes(); ++a) out[a] += at(y, a);
    return out;
  }

  bool same_labels(const InteractionMatrix& other) const {
    return class_labels_ == other.class_labels_ && attribute_labels_ == other.attribute_labels_;
  }

  InteractionMatrix& operator+=(const InteractionMatrix& other) {
    if (!same_labels(other)) throw ShapeError("interaction matrices have different label sets");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
  }

  std::vector<std::vector<std::int64_t>> rows() const {
    std::vector<std::vector<std::int64_t>> out(num_classes(), std::vector<std::int64_t>(num_attributes()));
    for (std::size_t y = 0; y < num_classes(); ++y)
      for (std::size_t a = 0; a < num_attributes(); ++a) out[y][a] = at(y, a);
    return out;
  }

  friend bool operator==(const InteractionMatrix&, const InteractionMatrix&) = default;

 private:
  static std::vector<int> iota_labels(std::size_t n) {
    std::vector<int> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
  }

  std::size_t index(std::size_t y, std::size_t a) const {
    if (y >= num_classes() || a >= num_attributes()) throw IndexError("interaction matrix index out of range");
    return y * num_attributes() + a;
  }

  std::vector<int> class_labels_;
  std::vector<int> attribute_labels_;
  std::vector<std::int64_t> counts_;
};

inline void to_json(nlohmann::json& j, const InteractionMatrix& m) {
  j = nlohmann::json{{"classes", m.class_labels()}, {"attributes", m.attribute_labels()}, {"counts", m.rows()}};
}

inline void from_json(const nlohmann::json& j, InteractionMatrix& m) {
  auto rows = j.at("counts").get<std::vector<std::vector<std::int64_t>>>();
  InteractionMatrix tmp = InteractionMatrix::from_rows(rows);
  auto classes = j.contains("classes") ? j.at("classes").get<std::vector<int>>() : tmp.class_labels();
  auto attributes = j.contains("attributes") ? j.at("attributes").get<std::vector<int>>() : tmp.attribute_labels();
  if (classes.size() != tmp.num_classes() || attributes.size() != tmp.num_attributes()) {
    throw ShapeError("interaction matrix labels do not match counts shape");
  }
  m = InteractionMatrix(std::move(classes), std::move(attributes));
  for (std::size_t y = 0; y < rows.size(); ++y)
    for (std::size_t a = 0; a < rows[y].size(); ++a) m.set(y, a, rows[y][a]);
}

/// [ci, ai, sc] for one dataset.
struct HeterogeneityTriplet {
  double ci = 0.0;
  double ai = 0.0;
  double sc = 0.0;

  double operator[](std::size_t i) const { return i == 0 ? ci : (i == 1 ? ai : sc); }
  friend bool operator==(const HeterogeneityTriplet&, const HeterogeneityTriplet&) = default;
};

inline void to_json(nlohmann::json& j, const HeterogeneityTriplet& t) {
  j = nlohmann::json{{"ci", t.ci}, {"ai", t.ai}, {"sc", t.sc}};
}

inline void from_json(const nlohmann::json& j, HeterogeneityTriplet& t) {
  t.ci = j.at("ci").get<double>();
  t.ai = j.at("ai").get<double>();
  t.sc = j.at("sc").get<double>();
}

struct FederationMetrics {
  double gci = 0.0, gai = 0.0, gsc = 0.0;
  double cci = 0.0, cai = 0.0, csc = 0.0;
};

inline void to_json(nlohmann::json& j, const FederationMetrics& m) {
  j = nlohmann::json{{"gci", m.gci}, {"gai", m.gai}, {"gsc", m.gsc},
                     {"cci", m.cci}, {"cai", m.cai}, {"csc", m.csc}};
}

inline void from_json(const nlohmann::json& j, FederationMetrics& m) {
  m.gci = j.at("gci").get<double>();
  m.gai = j.at("gai").get<double>();
  m.gsc = j.at("gsc").get<double>();
  m.cci = j.at("cci").get<double>();
  m.cai = j.at("cai").get<double>();
  m.csc = j.at("csc").get<double>();
}

/// Shannon entropy in nats of the empirical distribution c_i / sum(c).
inline double entropy(std::span<const std::int64_t> counts) {
  std::int64_t n = 0;
  for (auto c : counts) {
    if (c < 0) throw DomainError("entropy: negative count");
    n += c;
  }
  if (n == 0) throw DomainError("empty distribution");
  const double total = static_cast<double>(n);
  // Terms are summed in sorted order so that any permutation of the cells
  // yields a bit-identical result.
  std::vector<double> terms;
  terms.reserve(counts.size());
  for (auto c : counts) {
    if (c == 0) continue;  // 0 ln 0 := 0
    const double p = static_cast<double>(c) / total;
    terms.push_back(-p * std::log(p));
  }
  std::sort(terms.begin(), terms.end());
  return std::accumulate(terms.begin(), terms.end(), 0.0);
}

/// I(Y;A) = H(Y) + H(A) - H(Y,A), clamped at zero.
inline double mutual_information(const InteractionMatrix& m) {
  if (m.empty()) throw DomainError("empty distribution");
  const auto rows = m.row_sums();
  const auto cols = m.col_sums();
  const double mi = entropy(rows) + entropy(cols) - entropy(m.cells());
  return std::max(0.0, mi);
}

namespace detail {
inline double unit_clamp(double v) { return std::clamp(v, 0.0, 1.0); }
}  // namespace detail

/// Heterogeneity triplet of one dataset. Degenerate normalizers follow fixed
/// conventions: one class gives ci = 1, one attribute gives ai = 1, and
/// H(Y) + H(A) = 0 gives sc = 0.
inline HeterogeneityTriplet dht_from_matrix(const InteractionMatrix& m) {
  if (m.empty()) throw DomainError("dht_from_matrix: empty matrix");
  if (m.total() <= 0) throw DomainError("empty distribution");
  const double hy = entropy(m.row_sums());
  const double ha = entropy(m.col_sums());
  const double hya = entropy(m.cells());

  HeterogeneityTriplet t;
  const auto ny = m.num_classes();
  const auto na = m.num_attributes();
  t.ci = ny == 1 ? 1.0 : detail::unit_clamp(1.0 - hy / std::log(static_cast<double>(ny)));
  t.ai = na == 1 ? 1.0 : detail::unit_clamp(1.0 - ha / std::log(static_cast<double>(na)));
  const double denom = hy + ha;
  t.sc = denom <= 0.0 ? 0.0 : detail::unit_clamp(2.0 * std::max(0.0, hy + ha - hya) / denom);
  return t;
}

inline InteractionMatrix sum_matrices(std::span<const InteractionMatrix> matrices) {
  if (matrices.empty()) throw DomainError("no interaction matrices");
  InteractionMatrix total = matrices.front();
  for (std::size_t k = 1; k < matrices.size(); ++k) total += matrices[k];
  return total;
}

/// Global metrics on the summed matrix, client metrics as the unweighted mean
/// of per-client triplets.
inline FederationMetrics federation_metrics(std::span<const InteractionMatrix> matrices) {
  if (matrices.empty()) throw DomainError("federation_metrics: no clients");
  for (const auto& m : matrices) {
    if (!m.same_labels(matrices.front())) throw ShapeError("federation_metrics: mismatched label sets");
  }
  const auto global = dht_from_matrix(sum_matrices(matrices));
  FederationMetrics out{global.ci, global.ai, global.sc, 0.0, 0.0, 0.0};
  for (const auto& m : matrices) {
    const auto t = dht_from_matrix(m);
    out.cci += t.ci;
    out.cai += t.ai;
    out.csc += t.sc;
  }
  const double k = static_cast<double>(matrices.size());
  out.cci /= k;
  out.cai /= k;
  out.csc /= k;
  return out;
}

}  // namespace fedsim
