#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ccica/mcc.hpp"
#include "ccica/synthgen.hpp"
#include "ccica/trainer.hpp"

namespace ccica {

/// Named experiment designs.
///  default            checkpoint t is scored on the test sets of the first t domains
///  increasing-domains every checkpoint is scored on all test domains
///  repeated-partial   the second changing latent cycles through 3 distributions (A, B, C, C, ...)
///  ordering-z1        3 domains: z1 changes in the second, z2 in the third
///  custom             domain specs pinned by a scenario file
enum class Scenario { default_, increasing_domains, repeated_partial, ordering_z1, custom };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

struct ExperimentConfig {
  GenerationConfig generation;
  TrainConfig training;
  std::vector<Regime> regimes{Regime::continual_gem, Regime::baseline, Regime::joint};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  Scenario scenario = Scenario::default_;
  std::string scenario_file;
  std::uint64_t mcc_seed = 0;
  mcc::RegressorOptions regressor;
  std::size_t jobs = 0;            // 0: hardware concurrency
  bool write_checkpoints = true;
  bool gem_diagnostics = false;
  bool timings_in_csv = false;     // runtime_s column is left empty otherwise

  /// Throws ConfigError listing every problem found.
  void validate() const;
};

/// Parses the JSON experiment schema; unknown keys are errors.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);
std::string experiment_config_json(const ExperimentConfig& cfg);

/// Applies scenario presets to the generation config and returns pinned specs
/// (if the scenario pins them) for one data seed.
std::optional<std::vector<DomainSpec>> scenario_specs(const ExperimentConfig& cfg, GenerationConfig& gen);

/// Generates the dataset of one seed with the scenario applied.
GeneratedData scenario_data(const ExperimentConfig& cfg, std::uint64_t seed);

/// Encoder means of the changing block against the true changing latents on
/// the pooled test sets of `domains`.
mcc::MccReport evaluate_checkpoint(const nets::Model& model, const Dataset& data, const std::vector<int>& domains,
                                   std::uint64_t mcc_seed, const mcc::RegressorOptions& opts = {});

struct ResultRow {
  Regime regime = Regime::continual_gem;
  std::uint64_t seed = 0;
  std::size_t train_domains = 0;
  std::vector<int> eval_domains;
  double mcc = 0.0;
  std::vector<double> per_latent;  // post-regression |corr| per true changing latent
  std::vector<double> per_latent_raw;
  double runtime_s = 0.0;          // training wall clock of the whole cell
  bool failed = false;
  std::string error;
};

struct CellAggregate {
  Regime regime = Regime::continual_gem;
  std::size_t train_domains = 0;
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single seed
  std::vector<double> per_latent_mean;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;  // ordered by (regime, seed, train_domains)
  std::vector<CellAggregate> aggregates;
  std::vector<std::string> failures;
  double wall_seconds = 0.0;

  bool ok() const { return failures.empty(); }
};

/// Runs every (regime, seed) cell in a bounded worker pool. When `out_dir` is
/// non-empty, writes results.csv, pairs.csv, summary.json, run_manifest.json,
/// plots/*.svg, checkpoints/*.ckpt and logs/*.csv below it.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

std::vector<CellAggregate> aggregate(const std::vector<ResultRow>& rows);

/// results.csv body: header regime,seed,train_domains,mcc,runtime_s, one row
/// per run, then one aggregate row per cell with seed "aggregate" and mcc "mean±std".
std::string results_csv(const ExperimentResult& res, bool with_timings);

/// Minimal self-contained SVG line chart.
struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};
std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series);

}  // namespace ccica
