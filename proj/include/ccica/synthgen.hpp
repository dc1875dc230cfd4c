#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ccica/ndgrad/tensor.hpp"
#include "ccica/rng.hpp"

namespace ccica {

using ndgrad::Tensor;

/// Distribution family of the latents. `summed_gaussian` is the
/// "sum of two Gaussians" reading of the mixed family, which collapses to a
/// Gaussian; it exists only for comparison runs.
enum class LatentFamily { gaussian, mixed_gaussian, summed_gaussian };

std::string to_string(LatentFamily f);
LatentFamily latent_family_from_string(const std::string& s);

/// Analytic moments of the equal-weight mixture of N(0,1) and N(0.25,1).
inline constexpr double kMixtureOffset = 0.25;
inline constexpr double kMixtureMean = 0.125;
inline constexpr double kMixtureVariance = 1.015625;

/// Parameters of one changing latent in one domain.
/// gaussian: N(mean, variance). mixed/summed: standardized base draw * scale + shift.
struct ChangingLatent {
  LatentFamily family = LatentFamily::gaussian;
  double mean = 0.0;
  double variance = 1.0;
  double scale = 1.0;
  double shift = 0.0;

  bool operator==(const ChangingLatent&) const = default;
};

struct DomainSpec {
  int domain = 0;
  std::vector<ChangingLatent> changing;  // one entry per changing latent

  bool operator==(const DomainSpec&) const = default;
};

enum class MixedCombine { mixture, sum };

struct GenerationConfig {
  std::size_t n = 4;    // total latent dimension
  std::size_t n_s = 2;  // changing latents (the last n_s coordinates)
  std::size_t domains = 5;
  std::size_t train_per_domain = 10000;
  std::size_t test_per_domain = 1000;
  std::uint64_t seed = 0;
  LatentFamily family = LatentFamily::gaussian;
  MixedCombine mixed_combine = MixedCombine::mixture;
  double condition_bound = 1e3;
  double mixing_slope = 0.2;

  std::size_t n_c() const noexcept { return n - n_s; }

  /// Sample counts per domain for the two standard settings (n_s = 2 and n_s = 4).
  static GenerationConfig defaults_for(std::size_t n, std::size_t n_s);

  /// Throws ConfigError listing every violated constraint.
  void validate() const;
};

/// Invertible two-layer map x = leaky(z W1) W2 applied to row vectors.
struct MixingFunction {
  std::vector<Tensor> weights;  // two n x n matrices
  double slope = 0.2;

  Tensor apply(const Tensor& z) const;
  /// Layer-wise inverse: solve against W2, undo the leaky ReLU, solve against W1.
  Tensor invert(const Tensor& x) const;
};

struct DomainData {
  int domain = 0;
  Tensor x_train, z_train;
  Tensor x_test, z_test;
};

/// Observations grouped by domain. Ground-truth latents are kept for evaluation only.
struct Dataset {
  std::size_t n = 0;
  std::size_t n_s = 0;
  std::vector<DomainData> domains;

  const DomainData& domain(int u) const;
  bool operator==(const Dataset& other) const;
};

struct GeneratedData {
  GenerationConfig config;
  Dataset data;
  std::vector<DomainSpec> specs;
  MixingFunction mixing;
};

std::vector<DomainSpec> sample_domain_specs(const GenerationConfig& cfg, Rng& rng);

/// Draws `count` latent rows (n_c invariant columns first, then n_s changing).
Tensor sample_latents(const DomainSpec& spec, const GenerationConfig& cfg, std::size_t count, Rng& rng);

/// One standardized draw of the mixed family base variable (mean 0, variance 1).
double standardized_mixed_draw(MixedCombine combine, Rng& rng);

MixingFunction build_mixing(const GenerationConfig& cfg, Rng& rng);

/// Generates specs, mixing and data. When `pinned_specs` is given those
/// specs are used verbatim instead of being sampled.
GeneratedData generate(const GenerationConfig& cfg, const std::optional<std::vector<DomainSpec>>& pinned_specs = {});

}  // namespace ccica
