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

// Subcommands: gen-data, metrics, run, sweep, report.
// Exit codes: 0 ok, 2 config error, 3 data error, 4 runtime error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedsim/config.hpp"
#include "fedsim/datagen.hpp"
#include "fedsim/engine.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/hetero_metrics.hpp"
#include "fedsim/io.hpp"
#include "json.hpp"

namespace fedsim {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitData = 3, kExitRuntime = 4 };

namespace cli {

namespace fs = std::filesystem;

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

inline FederatedDataset materialize(const RecipeFile& rf) {
  rf.recipe.validate();
  rf.generator.validate();
  auto fd = build_federation(rf.recipe, rf.generator);
  verify_recipe(fd, rf.recipe);
  return fd;
}

inline nlohmann::json metrics_record(std::span<const InteractionMatrix> matrices) {
  return nlohmann::json(federation_metrics(matrices));
}

inline void gen_data(const std::string& recipe_path, const fs::path& out_dir, std::ostream& out) {
  const auto rf = load_recipe(recipe_path);
  const auto fd = materialize(rf);
  fs::create_directories(out_dir);
  {
    auto f = open_out(out_dir / "train.csv");
    write_samples_csv(f, fd, false);
  }
  {
    auto f = open_out(out_dir / "test.csv");
    write_samples_csv(f, fd, true);
  }
  {
    auto f = open_out(out_dir / "recipe.json");
    f << recipe_to_json(rf.recipe, rf.generator).dump(2) << '\n';
  }
  nlohmann::json m = metrics_record(fd.true_matrices);
  nlohmann::json clients = nlohmann::json::array();
  for (const auto& cm : fd.true_matrices) clients.push_back(dht_from_matrix(cm));
  m["clients"] = clients;
  {
    auto f = open_out(out_dir / "metrics.json");
    f << m.dump(2) << '\n';
  }
  out << "wrote " << fd.num_clients() << " clients to " << out_dir.string() << '\n';
}

// A data directory holds train.csv (and usually recipe.json for label sets).
inline std::vector<InteractionMatrix> matrices_from_data_dir(const fs::path& dir) {
  std::ifstream train(dir / "train.csv");
  if (!train) throw ValidationError("data directory " + dir.string() + " has no train.csv");
  FederatedDataset fd;
  read_samples_csv(train, fd);
  if (std::ifstream test(dir / "test.csv"); test) read_samples_csv(test, fd);
  if (fs::exists(dir / "recipe.json")) {
    const auto rf = load_recipe((dir / "recipe.json").string());
    fd.num_classes = std::max(fd.num_classes, rf.recipe.num_classes());
    fd.num_attributes = std::max(fd.num_attributes, rf.recipe.num_attributes());
  }
  if (fd.client_datasets.empty()) throw ValidationError("train.csv has no client rows");
  std::vector<InteractionMatrix> out;
  for (const auto& c : fd.client_datasets) out.push_back(matrix_from_samples(c, fd.num_classes, fd.num_attributes));
  return out;
}

inline void metrics(const std::string& source, std::ostream& out) {
  std::vector<InteractionMatrix> matrices;
  if (fs::is_directory(source)) {
    matrices = matrices_from_data_dir(source);
  } else {
    const auto rf = load_recipe(source);
    rf.recipe.validate();
    matrices = rf.recipe.client_matrices;
  }
  out << metrics_record(matrices).dump(2) << '\n';
}

inline void write_run(const RunResult& r, const fs::path& dir, bool save_params) {
  fs::create_directories(dir);
  {
    auto f = open_out(dir / "rounds.csv");
    write_rounds_csv(f, r);
  }
  auto summary = summary_json(r);
  if (save_params) summary["final_params"] = r.final_params;
  auto f = open_out(dir / "summary.json");
  f << summary.dump(2) << '\n';
}

struct RunOptions {
  std::string config_path;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;  // overrides the config's seeds
  std::size_t threads = 0;
  bool save_params = false;
};

inline fs::path resolve_out(const RunConfig& rc, const std::string& cli_out) {
  if (!cli_out.empty()) return cli_out;
  if (rc.output_dir) return *rc.output_dir;
  throw ConfigError("no output directory: pass -o or set 'output_dir'");
}

inline std::vector<RunResult> run(const RunOptions& opt, std::ostream& out) {
  auto rc = load_config(opt.config_path);
  const auto dir = resolve_out(rc, opt.out_dir);
  if (!opt.seeds.empty()) rc.seeds = opt.seeds;
  rc.federation.threads = opt.threads;
  const auto fd = materialize(rc.recipe);
  std::vector<RunResult> results;
  for (auto seed : rc.seeds) {
    auto cfg = rc.federation;
    cfg.seed = seed;
    auto r = run_federation(cfg, fd);
    write_run(r, dir / ("seed_" + std::to_string(seed)), opt.save_params);
    const auto& last = r.rounds.back();
    out << to_string(cfg.strategy) << " seed " << seed << ": worst-group " << format_number(last.worst_group_accuracy)
        << ", overall " << format_number(last.overall_accuracy) << '\n';
    results.push_back(std::move(r));
  }
  return results;
}

inline std::vector<SweepRow> sweep(const RunOptions& opt, const std::vector<std::string>& strategies, std::ostream& out) {
  auto rc = load_config(opt.config_path);
  const auto dir = resolve_out(rc, opt.out_dir);
  if (!opt.seeds.empty()) rc.seeds = opt.seeds;
  if (strategies.empty()) throw ConfigError("--strategies must name at least one strategy");
  std::vector<Strategy> parsed;
  for (const auto& s : strategies) {
    auto st = parse_strategy(s);
    if (!st) throw ConfigError("unknown strategy '" + s + "'");
    FederationConfig probe = rc.federation;
    probe.strategy = *st;
    if (probe.dht_source != DhtSource::kEstimated && !probe.uses_dht_pipeline())
      throw ConfigError("ablation '" + to_string(probe.dht_source) + "' does not apply to strategy '" + s + "'");
    parsed.push_back(*st);
  }
  const auto fd = materialize(rc.recipe);
  std::vector<SweepRow> rows;
  for (auto st : parsed) {
    for (auto seed : rc.seeds) {
      auto cfg = rc.federation;
      cfg.strategy = st;
      cfg.seed = seed;
      cfg.threads = opt.threads;
      const auto r = run_federation(cfg, fd);
      write_run(r, dir / to_string(st) / ("seed_" + std::to_string(seed)), opt.save_params);
      rows.push_back(sweep_row(r));
      out << to_string(st) << " seed " << seed << ": worst-group " << format_number(rows.back().worst_group_acc) << '\n';
    }
  }
  auto f = open_out(dir / "sweep.csv");
  write_sweep_csv(f, rows);
  return rows;
}

inline void report(const std::string& dir, std::ostream& out) { print_report(out, build_report(collect_sweeps(dir))); }

}  // namespace cli

/// Entry point shared by the binary and the tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Federated learning simulator with diversity-driven client selection", "fedsim"};
  app.require_subcommand(1);

  std::string recipe_path, out_dir, source, config_path, report_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> strategies;
  std::size_t threads = 0;
  bool save_params = false;

  auto* gen = app.add_subcommand("gen-data", "Materialize a recipe and export CSV files");
  gen->add_option("recipe", recipe_path, "Recipe JSON")->required();
  gen->add_option("-o,--out", out_dir, "Output directory")->required();

  auto* met = app.add_subcommand("metrics", "Print federation heterogeneity metrics as JSON");
  met->add_option("source", source, "Recipe JSON or data directory")->required();

  auto add_run_options = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "Run configuration JSON")->required();
    sub->add_option("-o,--out", out_dir, "Output directory");
    sub->add_option("--seeds", seeds, "Override the configured seeds")->delimiter(',');
    sub->add_option("--threads", threads, "Worker threads (0: FEDSIM_THREADS or hardware)");
    sub->add_flag("--save-params", save_params, "Include final parameters in summary.json");
  };
  auto* run = app.add_subcommand("run", "Run a federation for each configured seed");
  add_run_options(run);
  auto* sw = app.add_subcommand("sweep", "Compare strategies across seeds");
  add_run_options(sw);
  sw->add_option("--strategies", strategies, "Comma-separated strategies")->delimiter(',')->required();

  auto* rep = app.add_subcommand("report", "Print mean±std worst-group accuracy per strategy");
  rep->add_option("dir", report_dir, "Sweep directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "fedsim: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    cli::RunOptions opt{config_path, out_dir, seeds, threads, save_params};
    if (gen->parsed()) {
      cli::gen_data(recipe_path, out_dir, out);
    } else if (met->parsed()) {
      cli::metrics(source, out);
    } else if (run->parsed()) {
      cli::run(opt, out);
    } else if (sw->parsed()) {
      cli::sweep(opt, strategies, out);
    } else if (rep->parsed()) {
      cli::report(report_dir, out);
    }
  } catch (const ConfigError& e) {
    err << "fedsim: config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ValidationError& e) {
    err << "fedsim: data error: " << e.what() << '\n';
    return kExitData;
  } catch (const IntegrityError& e) {
    err << "fedsim: data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "fedsim: error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace fedsim
