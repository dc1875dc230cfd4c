#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ccica/dataset_io.hpp"
#include "ccica/error.hpp"
#include "ccica/experiment.hpp"
#include "ccica/identcheck.hpp"
#include "ccica/mcc.hpp"
#include "ccica/nets.hpp"
#include "ccica/trainer.hpp"

namespace fs = std::filesystem;
using namespace ccica;

namespace {

void configure_logging() {
  const char* env = std::getenv("CCICA_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "warn") {
    spdlog::set_level(spdlog::level::warn);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
  }
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("--seeds needs at least one seed");
  return out;
}

std::vector<int> parse_ints(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

struct Common {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::string scenario;
  std::string scenario_file;
};

ExperimentConfig load_config(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_experiment_config(c.config);
  if (!c.scenario.empty()) cfg.scenario = scenario_from_string(c.scenario);
  if (!c.scenario_file.empty()) {
    cfg.scenario_file = c.scenario_file;
    if (c.scenario.empty()) cfg.scenario = Scenario::custom;
  }
  if (c.seed) cfg.seeds = {*c.seed};
  cfg.validate();
  return cfg;
}

// Loads DIR/dataset.csv with n_s from DIR/dataset.json.
Dataset load_data_dir(const std::string& dir) {
  const Sidecar side = read_sidecar((fs::path(dir) / "dataset.json").string());
  return read_dataset_csv((fs::path(dir) / "dataset.csv").string(), side.config.n_s);
}

int cmd_generate(const Common& c) {
  const ExperimentConfig cfg = load_config(c);
  const GeneratedData gen = scenario_data(cfg, cfg.seeds.front());
  fs::create_directories(c.out);
  const std::string csv = dataset_csv(gen.data);
  {
    std::ofstream os(fs::path(c.out) / "dataset.csv", std::ios::binary);
    os << csv;
  }
  write_sidecar((fs::path(c.out) / "dataset.json").string(), gen);
  std::size_t train_rows = 0;
  for (const auto& d : gen.data.domains) train_rows += d.x_train.rows();
  spdlog::info("wrote {} domains, {} training rows to {}", gen.data.domains.size(), train_rows, c.out);
  std::cout << content_hash(csv) << "\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& data_dir, const std::string& regime) {
  ExperimentConfig cfg = load_config(c);
  const std::uint64_t seed = cfg.seeds.front();
  Dataset data;
  std::string hash;
  if (!data_dir.empty()) {
    data = load_data_dir(data_dir);
    hash = file_content_hash((fs::path(data_dir) / "dataset.csv").string());
  } else {
    data = scenario_data(cfg, seed).data;
    hash = content_hash(dataset_csv(data));
  }
  TrainConfig tc = cfg.training;
  tc.seed = seed;
  tc.regime = regime.empty() ? Regime::continual_gem : regime_from_string(regime);
  tc.gem_diagnostics = cfg.gem_diagnostics;
  const RunRecord run = train(data, tc);

  const fs::path root(c.out);
  fs::create_directories(root / "checkpoints");
  for (const auto& ck : run.checkpoints) {
    nlohmann::json extra = {{"regime", to_string(tc.regime)}, {"seed", seed}, {"trained_domains", ck.trained_domains},
                            {"dataset_hash", hash}};
    nets::save_checkpoint(
        (root / "checkpoints" / fmt::format("{}_s{}_d{}.ckpt", to_string(tc.regime), seed, ck.trained_domains.size()))
            .string(),
        ck.model, &ck.adam, extra.dump());
  }
  write_train_log((root / "train_log.csv").string(), run);
  if (tc.gem_diagnostics) write_gem_diagnostics((root / "gem_diagnostics.csv").string(), run);
  nlohmann::json manifest = {{"config", nlohmann::json::parse(experiment_config_json(cfg))},
                             {"regime", to_string(tc.regime)},
                             {"seed", seed},
                             {"dataset_hash", hash},
                             {"steps", run.steps},
                             {"projected_steps", run.projections},
                             {"wall_seconds", run.wall_seconds}};
  std::ofstream(root / "run_manifest.json") << manifest.dump(2) << "\n";
  spdlog::info("{} run finished: {} steps, {} checkpoints, {:.1f}s", to_string(tc.regime), run.steps,
               run.checkpoints.size(), run.wall_seconds);
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& domains,
             std::uint64_t mcc_seed, const std::string& out) {
  if (checkpoint.empty() || data_dir.empty()) throw ConfigError("eval needs --checkpoint and --data");
  const auto ck = nets::load_checkpoint(checkpoint);
  const Dataset data = load_data_dir(data_dir);
  std::vector<int> eval = parse_ints(domains);
  if (eval.empty())
    for (const auto& d : data.domains) eval.push_back(d.domain);
  const auto rep = evaluate_checkpoint(ck.model, data, eval, mcc_seed);
  const std::string js = rep.to_json();
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream(fs::path(out) / "mcc_report.json") << js << "\n";
  }
  std::cout << js << "\n";
  return 0;
}

int cmd_identcheck(const Common& c, const std::string& specs_file, const std::string& preset, const std::string& kind,
                   std::size_t points) {
  std::vector<DomainSpec> specs;
  if (!specs_file.empty()) {
    specs = read_scenario_specs(specs_file);
  } else if (preset == "degenerate-partial") {
    specs = ident::partial_change_specs(2);
  } else if (preset == "relaxed-partial") {
    specs = ident::partial_change_specs(3);
  } else if (preset.empty() || preset == "random") {
    ExperimentConfig cfg = load_config(c);
    GenerationConfig gen = cfg.generation;
    gen.seed = cfg.seeds.front();
    auto pinned = scenario_specs(cfg, gen);
    if (pinned) {
      specs = *pinned;
    } else {
      Rng r = Rng(gen.seed).split("specs");
      specs = sample_domain_specs(gen, r);
    }
  } else {
    throw ConfigError("unknown ident-check preset '" + preset +
                      "' (expected random, degenerate-partial or relaxed-partial)");
  }
  Rng rng(c.seed.value_or(0));
  ident::CheckOptions opts;
  opts.n_points = points;
  std::vector<ident::MatrixKind> kinds;
  if (kind == "both") {
    kinds = {ident::MatrixKind::theorem1, ident::MatrixKind::lemma1};
  } else {
    kinds = {ident::matrix_kind_from_string(kind)};
  }
  nlohmann::json all;
  for (auto k : kinds) {
    if (specs.size() < ident::rows_needed(k, specs.front().changing.size()) + 1) {
      spdlog::warn("{}: only {} domains, skipped", ident::to_string(k), specs.size());
      continue;
    }
    Rng kr = rng.split(ident::to_string(k));
    const auto rep = ident::check_scenario(specs, k, kr, opts);
    std::cout << rep.to_table();
    all[ident::to_string(k)] = nlohmann::json::parse(rep.to_json());
  }
  const auto audit = ident::minimal_change_audit(specs);
  std::cout << "distinct distributions per changing latent:";
  for (std::size_t i = 0; i < audit.distinct.size(); ++i) std::cout << " z" << i + 1 << "=" << audit.distinct[i];
  std::cout << "\n";
  for (auto i : audit.flagged) std::cout << "  z" << i + 1 << " has fewer than 3 distinct distributions\n";
  all["minimal_change"] = {{"distinct", audit.distinct}, {"flagged", audit.flagged}};
  all["specs"] = nlohmann::json::parse(specs_json(specs));
  fs::create_directories(c.out);
  std::ofstream(fs::path(c.out) / "ident_report.json") << all.dump(2) << "\n";
  return 0;
}

int cmd_experiment(const Common& c, const std::string& seeds, const std::string& regimes, std::size_t jobs,
                   bool timings) {
  ExperimentConfig cfg = load_config(c);
  if (!seeds.empty()) cfg.seeds = parse_seeds(seeds);
  if (!regimes.empty()) {
    cfg.regimes.clear();
    std::stringstream ss(regimes);
    std::string r;
    while (std::getline(ss, r, ',')) cfg.regimes.push_back(regime_from_string(r));
  }
  if (jobs) cfg.jobs = jobs;
  if (timings) cfg.timings_in_csv = true;
  cfg.validate();
  const auto res = run_experiment(cfg, c.out);
  for (const auto& a : res.aggregates) {
    std::cout << fmt::format("{:<14} domains={:<3} mcc={:.4f} ± {:.4f} (n={})\n", to_string(a.regime),
                             a.train_domains, a.mean, a.std, a.count);
  }
  for (const auto& f : res.failures) std::cerr << "failed: " << f << "\n";
  return res.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Continual nonlinear ICA: data generation, training, evaluation and identifiability checks"};
  app.require_subcommand(1);

  Common common;
  std::uint64_t seed_value = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "experiment config (JSON)");
    sub->add_option("--out", common.out, "output directory");
    sub->add_option("--seed", seed_value, "seed");
    sub->add_option("--scenario", common.scenario,
                    "default | increasing-domains | repeated-partial | ordering-z1 | custom");
    sub->add_option("--scenario-file", common.scenario_file, "domain specs for the custom scenario");
  };

  auto* gen = app.add_subcommand("generate", "generate a synthetic multi-domain dataset");
  add_common(gen);

  auto* tr = app.add_subcommand("train", "train one regime on one dataset");
  add_common(tr);
  std::string data_dir, regime;
  tr->add_option("--data", data_dir, "dataset directory written by 'generate'");
  tr->add_option("--regime", regime, "continual-gem | baseline | joint");

  auto* ev = app.add_subcommand("eval", "MCC of a checkpoint on a dataset's test split");
  std::string checkpoint, eval_domains, eval_out;
  std::uint64_t mcc_seed = 0;
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--domains", eval_domains, "comma-separated test domains (default: all)");
  ev->add_option("--mcc-seed", mcc_seed, "seed of the regression split");
  ev->add_option("--out", eval_out, "write mcc_report.json here");

  auto* id = app.add_subcommand("ident-check", "rank audit of the identifiability matrices");
  add_common(id);
  std::string specs_file, preset, kind = "both";
  std::size_t points = 200;
  id->add_option("--specs", specs_file, "domain spec file (scenario schema or dataset sidecar)");
  id->add_option("--preset", preset, "random | degenerate-partial | relaxed-partial");
  id->add_option("--kind", kind, "lemma1 | theorem1 | both");
  id->add_option("--points", points, "number of evaluation points");

  auto* ex = app.add_subcommand("experiment", "run regimes x seeds and write results, plots and checkpoints");
  add_common(ex);
  std::string seeds, regimes;
  std::size_t jobs = 0;
  bool timings = false;
  ex->add_option("--seeds", seeds, "comma-separated seeds");
  ex->add_option("--regime", regimes, "comma-separated regimes (default: all three)");
  ex->add_option("--jobs", jobs, "worker threads (default: logical cores)");
  ex->add_flag("--timings", timings, "fill the runtime_s column of results.csv");

  CLI11_PARSE(app, argc, argv);
  for (auto* sub : {gen, tr, id, ex})
    if (sub->parsed() && sub->count("--seed")) common.seed = seed_value;

  try {
    if (gen->parsed()) return cmd_generate(common);
    if (tr->parsed()) return cmd_train(common, data_dir, regime);
    if (ev->parsed()) return cmd_eval(checkpoint, data_dir, eval_domains, mcc_seed, eval_out);
    if (id->parsed()) return cmd_identcheck(common, specs_file, preset, kind, points);
    if (ex->parsed()) return cmd_experiment(common, seeds, regimes, jobs, timings);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
