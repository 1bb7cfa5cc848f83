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

// Result files: rounds.csv (schema=1), summary.json, sweep.csv and the
// mean/std report table built from sweep results.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/engine.hpp"
#include "fedsim/errors.hpp"
#include "json.hpp"

namespace fedsim {

inline constexpr const char* kRoundsSchemaLine = "# schema=1";

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string join_ids(const std::vector<ClientId>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? ";" : "") + std::to_string(ids[i]);
  return s;
}

inline void write_rounds_csv(std::ostream& out, const RunResult& r) {
  out << kRoundsSchemaLine << '\n';
  out << "round,strategy,selected_ids,test_loss";
  for (std::size_t y = 0; y < r.num_classes; ++y)
    for (std::size_t a = 0; a < r.num_attributes; ++a) out << ",acc_g" << y << a;
  out << ",worst_group_acc\n";
  const std::string strategy = to_string(r.config.strategy);
  for (const auto& rec : r.rounds) {
    out << rec.round << ',' << strategy << ',' << join_ids(rec.selected) << ',' << format_number(rec.test_loss);
    for (const auto& g : rec.group_accuracy) out << ',' << (g ? format_number(*g) : "nan");
    out << ',' << format_number(rec.worst_group_accuracy) << '\n';
  }
}

struct RoundsRow {
  int round = 0;
  std::string strategy;
  std::vector<ClientId> selected;
  double test_loss = 0.0;
  std::vector<double> group_accuracy;
  double worst_group_accuracy = 0.0;
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(s);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
  if (s == "nan") return NAN;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(what + ": malformed number '" + s + "'");
  }
}

}  // namespace detail

inline std::vector<RoundsRow> read_rounds_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kRoundsSchemaLine) throw ValidationError("rounds.csv: missing '# schema=1'");
  if (!std::getline(in, line)) throw ValidationError("rounds.csv: missing header");
  const auto header = detail::split(line, ',');
  if (header.size() < 5 || header[0] != "round" || header[1] != "strategy" || header[2] != "selected_ids" ||
      header[3] != "test_loss" || header.back() != "worst_group_acc") {
    throw ValidationError("rounds.csv: unexpected header");
  }
  std::vector<RoundsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = detail::split(line, ',');
    if (cells.size() != header.size()) throw ValidationError("rounds.csv: wrong column count");
    RoundsRow r;
    r.round = static_cast<int>(detail::parse_double(cells[0], "round"));
    r.strategy = cells[1];
    for (const auto& id : detail::split(cells[2], ';'))
      if (!id.empty()) r.selected.push_back(static_cast<ClientId>(detail::parse_double(id, "selected_ids")));
    r.test_loss = detail::parse_double(cells[3], "test_loss");
    for (std::size_t i = 4; i + 1 < cells.size(); ++i) r.group_accuracy.push_back(detail::parse_double(cells[i], header[i]));
    r.worst_group_accuracy = detail::parse_double(cells.back(), "worst_group_acc");
    rows.push_back(std::move(r));
  }
  return rows;
}

inline nlohmann::json summary_json(const RunResult& r) {
  nlohmann::json j;
  j["schema"] = 1;
  j["recipe"] = r.recipe_name;
  j["config"] = config_to_json(r.config);
  const auto& last = r.rounds.back();
  nlohmann::json groups = nlohmann::json::object();
  for (std::size_t y = 0; y < r.num_classes; ++y)
    for (std::size_t a = 0; a < r.num_attributes; ++a) {
      const auto& g = last.group_accuracy[y * r.num_attributes + a];
      groups["g" + std::to_string(y) + std::to_string(a)] = g ? nlohmann::json(*g) : nlohmann::json(nullptr);
    }
  j["final"] = {{"round", last.round},
                {"worst_group_acc", last.worst_group_accuracy},
                {"overall_acc", last.overall_accuracy},
                {"test_loss", last.test_loss},
                {"group_acc", groups}};
  j["final_params_digest"] = r.final_params_digest;
  j["dht_estimation"] = r.dht_diagnostics;
  j["wall_time_s"] = r.wall_time_seconds;
  return j;
}

// Sweeps ---------------------------------------------------------------------

struct SweepRow {
  std::string recipe;
  std::string strategy;
  std::uint64_t seed = 0;
  double worst_group_acc = 0.0;
  double overall_acc = 0.0;
  double test_loss = 0.0;
};

inline constexpr const char* kSweepHeader = "recipe,strategy,seed,final_worst_group_acc,final_overall_acc,final_test_loss";

// Ablation runs are labelled `strategy+ablation` so they get their own row.
inline std::string strategy_label(const FederationConfig& c) {
  auto s = to_string(c.strategy);
  if (c.dht_source != DhtSource::kEstimated) s += "+" + to_string(c.dht_source);
  return s;
}

inline SweepRow sweep_row(const RunResult& r) {
  const auto& last = r.rounds.back();
  return {r.recipe_name, strategy_label(r.config), r.config.seed, last.worst_group_accuracy,
          last.overall_accuracy, last.test_loss};
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << kSweepHeader << '\n';
  for (const auto& r : rows)
    out << r.recipe << ',' << r.strategy << ',' << r.seed << ',' << format_number(r.worst_group_acc) << ','
        << format_number(r.overall_acc) << ',' << format_number(r.test_loss) << '\n';
}

inline std::vector<SweepRow> read_sweep_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kSweepHeader) throw ValidationError("sweep.csv: unexpected header");
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = detail::split(line, ',');
    if (c.size() != 6) throw ValidationError("sweep.csv: wrong column count");
    rows.push_back({c[0], c[1], static_cast<std::uint64_t>(std::stoull(c[2])), detail::parse_double(c[3], "worst"),
                    detail::parse_double(c[4], "overall"), detail::parse_double(c[5], "loss")});
  }
  return rows;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd out;
  out.n = v.size();
  if (v.empty()) return out;
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  for (double x : v) out.std += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(out.std / static_cast<double>(v.size()));
  return out;
}

/// strategy -> recipe -> final worst-group accuracy statistics.
struct ReportTable {
  std::vector<std::string> strategies;  // first-seen order
  std::vector<std::string> recipes;
  std::map<std::string, std::map<std::string, MeanStd>> cells;
};

inline ReportTable build_report(const std::vector<SweepRow>& rows) {
  ReportTable t;
  std::map<std::string, std::map<std::string, std::vector<double>>> values;
  for (const auto& r : rows) {
    if (std::find(t.strategies.begin(), t.strategies.end(), r.strategy) == t.strategies.end())
      t.strategies.push_back(r.strategy);
    if (std::find(t.recipes.begin(), t.recipes.end(), r.recipe) == t.recipes.end()) t.recipes.push_back(r.recipe);
    values[r.strategy][r.recipe].push_back(r.worst_group_acc);
  }
  for (const auto& [s, per_recipe] : values)
    for (const auto& [rec, v] : per_recipe) t.cells[s][rec] = mean_std(v);
  return t;
}

/// Worst-group accuracy in percent, mean±std, one row per strategy.
inline void print_report(std::ostream& out, const ReportTable& t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-18s", "strategy");
  out << buf;
  for (const auto& r : t.recipes) {
    std::snprintf(buf, sizeof buf, " %16s", r.c_str());
    out << buf;
  }
  out << '\n';
  for (const auto& s : t.strategies) {
    std::snprintf(buf, sizeof buf, "%-18s", s.c_str());
    out << buf;
    for (const auto& r : t.recipes) {
      auto it = t.cells.at(s).find(r);
      if (it == t.cells.at(s).end()) {
        std::snprintf(buf, sizeof buf, " %16s", "-");
      } else {
        char cell[40];
        std::snprintf(cell, sizeof cell, "%.2f±%.2f", 100.0 * it->second.mean, 100.0 * it->second.std);
        std::snprintf(buf, sizeof buf, " %17s", cell);  // ± is two bytes
      }
      out << buf;
    }
    out << '\n';
  }
}

/// Collects sweep.csv from `dir` itself or from its immediate subdirectories.
inline std::vector<SweepRow> collect_sweeps(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (fs::exists(dir / "sweep.csv")) {
    files.push_back(dir / "sweep.csv");
  } else if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_directory() && fs::exists(e.path() / "sweep.csv")) files.push_back(e.path() / "sweep.csv");
    std::sort(files.begin(), files.end());
  }
  if (files.empty()) throw ValidationError("no sweep.csv found under " + dir.string());
  std::vector<SweepRow> rows;
  for (const auto& f : files) {
    std::ifstream in(f);
    auto part = read_sweep_csv(in);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

}  // namespace fedsim
