#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ccica/elbo.hpp"
#include "ccica/gem.hpp"
#include "ccica/nets.hpp"
#include "ccica/synthgen.hpp"

namespace ccica {

enum class Regime { continual_gem, baseline, joint };

std::string to_string(Regime r);
/// Accepts "continual-gem" (or "continual"), "baseline", "joint".
Regime regime_from_string(const std::string& s);

struct TrainConfig {
  Regime regime = Regime::continual_gem;
  std::size_t epochs_per_domain = 50;
  std::size_t batch_size = 256;
  double lr = 0.002;
  elbo::Weights weights;
  std::size_t memory_capacity = 256;
  double gem_margin = 0.0;
  std::uint64_t seed = 0;
  /// Domains in arrival order; empty means dataset order.
  std::vector<int> domain_order;
  /// Record per-step projection diagnostics (continual only).
  bool gem_diagnostics = false;
  std::size_t hidden = 32;

  /// Throws ConfigError listing every violated constraint.
  void validate(const Dataset& data) const;
  std::vector<int> resolved_order(const Dataset& data) const;
};

struct EpochLog {
  int domain = -1;  // -1: the joint regime's mixed epochs
  std::size_t epoch = 0;
  elbo::LossBreakdown loss;
};

struct DomainCheckpoint {
  std::vector<int> trained_domains;
  nets::Model model;
  ndgrad::Adam adam;
};

struct GemStep {
  std::size_t step = 0;
  int domain = 0;
  std::size_t violated = 0;
  double norm_v = 0.0;
  double norm_projected = 0.0;
  double angle = 0.0;  // radians between v and v'
};

struct RunRecord {
  Regime regime = Regime::continual_gem;
  TrainConfig config;
  std::vector<EpochLog> log;
  /// One per completed domain (continual, baseline) or a single one (joint).
  std::vector<DomainCheckpoint> checkpoints;
  std::vector<GemStep> gem;
  std::size_t steps = 0;
  std::size_t projections = 0;  // steps whose gradient was actually changed
  /// Largest per-domain memory size seen at any step.
  std::size_t max_memory = 0;
  double wall_seconds = 0.0;
};

nets::ModelConfig model_config_for(const Dataset& data, const TrainConfig& cfg);

RunRecord train_continual(const Dataset& data, const TrainConfig& cfg);
RunRecord train_baseline(const Dataset& data, const TrainConfig& cfg);
RunRecord train_joint(const Dataset& data, const TrainConfig& cfg);
/// Dispatches on cfg.regime.
RunRecord train(const Dataset& data, const TrainConfig& cfg);

/// CSV: epoch,domain,recon,kl_c,kl_s,total
void write_train_log(const std::string& path, const RunRecord& run);
/// CSV: step,domain,violated,norm_v,norm_projected,angle
void write_gem_diagnostics(const std::string& path, const RunRecord& run);

}  // namespace ccica
