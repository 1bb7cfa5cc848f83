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

// Small feed-forward classifier with hand-written backpropagation: tanh hidden
// layers, softmax output, and three per-sample losses (cross-entropy,
// generalized cross-entropy, cross-entropy plus a proximal term).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"
#include "json.hpp"

namespace fedsim {

inline constexpr double kProbabilityFloor = 1e-12;

struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

/// Flat parameter vector. Each layer stores its out x in weight matrix
/// (row-major) followed by its out biases, layers in declaration order.
struct ModelParams {
  std::vector<LayerShape> layer_shapes;
  std::vector<double> values;

  static std::size_t count_for(std::span<const LayerShape> shapes) {
    std::size_t n = 0;
    for (const auto& s : shapes) n += s.in * s.out + s.out;
    return n;
  }

  static ModelParams zeros(std::vector<LayerShape> shapes) {
    ModelParams p;
    p.values.assign(count_for(shapes), 0.0);
    p.layer_shapes = std::move(shapes);
    return p;
  }

  std::size_t input_dim() const { return layer_shapes.empty() ? 0 : layer_shapes.front().in; }
  std::size_t output_dim() const { return layer_shapes.empty() ? 0 : layer_shapes.back().out; }
  std::size_t size() const { return values.size(); }

  bool same_shape(const ModelParams& o) const { return layer_shapes == o.layer_shapes; }

  void validate() const {
    if (layer_shapes.empty()) throw ShapeError("model has no layers");
    for (std::size_t l = 1; l < layer_shapes.size(); ++l)
      if (layer_shapes[l].in != layer_shapes[l - 1].out) throw ShapeError("model layers do not chain");
    if (values.size() != count_for(layer_shapes)) throw ShapeError("parameter count does not match layer shapes");
    for (double v : values)
      if (!std::isfinite(v)) throw DomainError("non-finite model parameter");
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline void to_json(nlohmann::json& j, const ModelParams& p) {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& s : p.layer_shapes) shapes.push_back({s.in, s.out});
  j = nlohmann::json{{"layer_shapes", shapes}, {"values", p.values}};
}

inline void from_json(const nlohmann::json& j, ModelParams& p) {
  p.layer_shapes.clear();
  for (const auto& s : j.at("layer_shapes")) p.layer_shapes.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
  p.values = j.at("values").get<std::vector<double>>();
  p.validate();
}

/// FNV-1a over the raw bytes of the parameter values.
inline std::string params_digest(const ModelParams& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : p.values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline void glorot_fill(std::span<double> weights, std::size_t in, std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  for (double& w : weights) w = (2.0 * uniform01(rng) - 1.0) * limit;
}

inline std::size_t layer_offset(const ModelParams& p, std::size_t layer) {
  std::size_t off = 0;
  for (std::size_t l = 0; l < layer; ++l) off += p.layer_shapes[l].in * p.layer_shapes[l].out + p.layer_shapes[l].out;
  return off;
}

}  // namespace detail

/// input -> hidden (tanh) -> outputs (softmax), Glorot-uniform weights, zero biases.
inline ModelParams init_mlp(std::size_t input_dim, std::size_t hidden, std::size_t outputs, Rng& rng) {
  std::vector<LayerShape> shapes;
  if (hidden > 0) {
    shapes = {{input_dim, hidden}, {hidden, outputs}};
  } else {
    shapes = {{input_dim, outputs}};
  }
  ModelParams p = ModelParams::zeros(shapes);
  std::size_t off = 0;
  for (const auto& s : p.layer_shapes) {
    detail::glorot_fill(std::span<double>(p.values).subspan(off, s.in * s.out), s.in, s.out, rng);
    off += s.in * s.out + s.out;
  }
  return p;
}

/// Keeps every layer but the last and replaces the output layer with a
/// freshly initialized one of `outputs` units.
inline ModelParams reinit_head(const ModelParams& trunk, std::size_t outputs, Rng& rng) {
  trunk.validate();
  std::vector<LayerShape> shapes = trunk.layer_shapes;
  const std::size_t head_in = shapes.back().in;
  shapes.back().out = outputs;
  ModelParams p = ModelParams::zeros(shapes);
  const std::size_t head_off = detail::layer_offset(trunk, trunk.layer_shapes.size() - 1);
  std::copy(trunk.values.begin(), trunk.values.begin() + static_cast<std::ptrdiff_t>(head_off), p.values.begin());
  detail::glorot_fill(std::span<double>(p.values).subspan(head_off, head_in * outputs), head_in, outputs, rng);
  return p;
}

namespace detail {

// Activations of every layer for one input; the last entry holds softmax
// probabilities.
inline std::vector<std::vector<double>> forward_all(const ModelParams& params, std::span<const double> x) {
  if (x.size() != params.input_dim()) {
    throw ShapeError("feature dimension " + std::to_string(x.size()) + " does not match model input " +
                     std::to_string(params.input_dim()));
  }
  std::vector<std::vector<double>> acts;
  acts.reserve(params.layer_shapes.size() + 1);
  acts.emplace_back(x.begin(), x.end());
  std::size_t off = 0;
  for (std::size_t l = 0; l < params.layer_shapes.size(); ++l) {
    const auto [in, out] = params.layer_shapes[l];
    const double* w = params.values.data() + off;
    const double* b = w + in * out;
    const auto& prev = acts.back();
    std::vector<double> z(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) s += row[i] * prev[i];
      z[o] = s;
    }
    const bool last = l + 1 == params.layer_shapes.size();
    if (last) {
      const double zmax = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (double& v : z) {
        v = std::exp(v - zmax);
        sum += v;
      }
      for (double& v : z) v /= sum;
    } else {
      for (double& v : z) v = std::tanh(v);
    }
    acts.push_back(std::move(z));
    off += in * out + out;
  }
  return acts;
}

}  // namespace detail

/// Softmax class probabilities.
inline std::vector<double> forward(const ModelParams& params, std::span<const double> features) {
  return std::move(detail::forward_all(params, features).back());
}

inline int predict(const ModelParams& params, std::span<const double> features) {
  const auto p = forward(params, features);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

enum class LossKind { kCrossEntropy, kGce, kProximal };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kCrossEntropy: return "cross_entropy";
    case LossKind::kGce: return "gce";
    case LossKind::kProximal: return "proximal";
  }
  return "?";
}

struct LossSpec {
  LossKind kind = LossKind::kCrossEntropy;
  double gce_q = 0.7;
  double prox_mu = 0.0;
  // (mu/2)||theta - anchor|| instead of the squared norm.
  bool prox_unsquared = false;
  std::optional<ModelParams> anchor;

  static LossSpec cross_entropy() { return {}; }
  static LossSpec gce(double q = 0.7) { return {LossKind::kGce, q, 0.0, false, std::nullopt}; }
  static LossSpec proximal(double mu, ModelParams anchor, bool unsquared = false) {
    return {LossKind::kProximal, 0.7, mu, unsquared, std::move(anchor)};
  }

  void validate(const ModelParams& params) const {
    if (kind == LossKind::kGce && !(gce_q > 0.0 && gce_q <= 1.0)) throw DomainError("gce_q must lie in (0, 1]");
    if (kind == LossKind::kProximal) {
      if (!(prox_mu >= 0.0)) throw DomainError("prox_mu must be non-negative");
      if (!anchor) throw DomainError("proximal loss requires anchor parameters");
      if (!anchor->same_shape(params) || anchor->size() != params.size())
        throw ShapeError("proximal anchor has a different shape");
    }
  }
};

struct Example {
  std::span<const double> features;
  int target = 0;
};

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Mean loss over the batch and its exact gradient.
inline LossAndGrad loss_and_grad(const ModelParams& params, std::span<const Example> batch, const LossSpec& spec) {
  if (batch.empty()) throw DomainError("loss_and_grad: empty batch");
  spec.validate(params);
  const std::size_t num_layers = params.layer_shapes.size();
  std::vector<std::size_t> offsets(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) offsets[l] = detail::layer_offset(params, l);

  LossAndGrad out;
  out.grad.assign(params.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  for (const auto& ex : batch) {
    if (ex.target < 0 || static_cast<std::size_t>(ex.target) >= params.output_dim()) {
      throw IndexError("target class out of range");
    }
    const auto acts = detail::forward_all(params, ex.features);
    const auto& probs = acts.back();
    const double p_raw = probs[ex.target];
    const bool clamped = p_raw < kProbabilityFloor;
    const double p = std::max(p_raw, kProbabilityFloor);

    // dL/dz for the output logits. A clamped probability is constant in z.
    std::vector<double> delta(probs.size(), 0.0);
    if (spec.kind == LossKind::kGce) {
      const double pq = std::pow(p, spec.gce_q);
      out.loss += (1.0 - pq) / spec.gce_q * inv_n;
      if (!clamped)
        for (std::size_t j = 0; j < probs.size(); ++j)
          delta[j] = pq * (probs[j] - (static_cast<int>(j) == ex.target ? 1.0 : 0.0));
    } else {
      out.loss += -std::log(p) * inv_n;
      if (!clamped)
        for (std::size_t j = 0; j < probs.size(); ++j)
          delta[j] = probs[j] - (static_cast<int>(j) == ex.target ? 1.0 : 0.0);
    }

    for (std::size_t l = num_layers; l-- > 0;) {
      const auto [in, outd] = params.layer_shapes[l];
      const auto& prev = acts[l];
      double* gw = out.grad.data() + offsets[l];
      double* gb = gw + in * outd;
      for (std::size_t o = 0; o < outd; ++o) {
        const double d = delta[o] * inv_n;
        gb[o] += d;
        double* row = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) row[i] += d * prev[i];
      }
      if (l == 0) break;
      const double* w = params.values.data() + offsets[l];
      std::vector<double> back(in, 0.0);
      for (std::size_t o = 0; o < outd; ++o) {
        const double* row = w + o * in;
        for (std::size_t i = 0; i < in; ++i) back[i] += row[i] * delta[o];
      }
      for (std::size_t i = 0; i < in; ++i) back[i] *= 1.0 - prev[i] * prev[i];  // tanh'
      delta = std::move(back);
    }
  }

  if (spec.kind == LossKind::kProximal && spec.prox_mu > 0.0) {
    const auto& anchor = spec.anchor->values;
    double sq = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) sq += (params.values[i] - anchor[i]) * (params.values[i] - anchor[i]);
    if (spec.prox_unsquared) {
      const double norm = std::sqrt(sq);
      out.loss += 0.5 * spec.prox_mu * norm;
      if (norm > 0.0)
        for (std::size_t i = 0; i < params.size(); ++i)
          out.grad[i] += 0.5 * spec.prox_mu * (params.values[i] - anchor[i]) / norm;
    } else {
      out.loss += 0.5 * spec.prox_mu * sq;
      for (std::size_t i = 0; i < params.size(); ++i) out.grad[i] += spec.prox_mu * (params.values[i] - anchor[i]);
    }
  }
  return out;
}

struct TrainConfig {
  int epochs = 1;
  int batch_size = 28;
  double learning_rate = 0.001;
  std::uint64_t seed = 0;
  // Checked after every epoch.
  bool stop_at_full_accuracy = false;
};

struct TrainResult {
  ModelParams params;
  int steps = 0;  // tau, consumed by step-normalized aggregation
};

inline double accuracy(const ModelParams& params, std::span<const Example> data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : data) correct += predict(params, ex.features) == ex.target ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

/// Mini-batch SGD, reshuffling from a stream seeded by cfg.seed every epoch.
inline TrainResult sgd_train(ModelParams params, std::span<const Example> data, const TrainConfig& cfg,
                             const LossSpec& spec) {
  if (data.empty()) throw DomainError("sgd_train: no data");
  if (cfg.batch_size <= 0) throw DomainError("sgd_train: batch_size must be positive");
  if (cfg.epochs < 0 || cfg.learning_rate < 0.0) throw DomainError("sgd_train: negative epochs or learning rate");
  params.validate();
  spec.validate(params);

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Example> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));
  TrainResult result{std::move(params), 0};

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
      const auto lg = loss_and_grad(result.params, batch, spec);
      for (std::size_t i = 0; i < lg.grad.size(); ++i) result.params.values[i] -= cfg.learning_rate * lg.grad[i];
      ++result.steps;
    }
    if (cfg.stop_at_full_accuracy && accuracy(result.params, data) >= 1.0) break;
  }
  return result;
}

/// Mean cross-entropy of the model on `data` (no gradient).
inline double mean_cross_entropy(const ModelParams& params, std::span<const Example> data) {
  if (data.empty()) throw DomainError("mean_cross_entropy: no data");
  double total = 0.0;
  for (const auto& ex : data) total -= std::log(std::max(forward(params, ex.features)[ex.target], kProbabilityFloor));
  return total / static_cast<double>(data.size());
}

}  // namespace fedsim
