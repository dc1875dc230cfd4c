#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "ccica/ndgrad/graph.hpp"

namespace ccica::ndgrad {

struct AdamConfig {
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with per-parameter moments and step counters, keyed by parameter name.
/// Parameters that appear later (new flow domains) start their own count at 0.
class Adam {
 public:
  struct Moments {
    Tensor m;
    Tensor v;
    std::uint64_t t = 0;
  };

  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const noexcept { return cfg_; }

  /// One update using each parameter's accumulated `grad`.
  void step(std::span<Parameter* const> params);

  /// One update using a flat gradient laid out in `params` order.
  void step(std::span<Parameter* const> params, std::span<const double> flat_grad);

  const std::map<std::string, Moments>& moments() const noexcept { return moments_; }
  std::map<std::string, Moments>& moments() noexcept { return moments_; }

 private:
  void update(Parameter& p, std::span<const double> g);

  AdamConfig cfg_;
  std::map<std::string, Moments> moments_;
};

}  // namespace ccica::ndgrad
