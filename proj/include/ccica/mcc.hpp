#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ccica/ndgrad/tensor.hpp"

namespace ccica::mcc {

using ndgrad::Tensor;

/// Pearson correlation. Throws NumericalError when either series has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);
double pearson_abs(std::span<const double> a, std::span<const double> b);

/// table(i, j) = |corr(truth column i, estimate column j)|.
Tensor corr_table(const Tensor& estimate, const Tensor& truth);

/// perm[i] = estimated column matched to true column i, maximizing the total.
std::vector<std::size_t> assign(const Tensor& corr);

struct RegressorOptions {
  std::size_t hidden = 64;
  double slope = 0.2;
  double lr = 0.01;
  std::size_t epochs = 200;
  std::size_t batch_size = 256;
};

/// Scalar regressor y = w2 . leaky(w1 x + b1) + b2. Parameters are stored flat
/// as [w1 (h), b1 (h), w2 (h), b2].
struct ScalarMlp {
  std::size_t hidden = 64;
  double slope = 0.2;
  std::vector<double> theta;

  double predict(double x) const;
  /// Mean squared error over the rows `idx` of (x, y); gradient written into grad.
  double loss_and_gradient(std::span<const double> x, std::span<const double> y, std::span<const std::size_t> idx,
                           std::vector<double>& grad) const;
};

struct PairFit {
  double raw = 0.0;        // |corr| on the held-out half before regression
  double corr = 0.0;       // |corr(prediction, truth)| on the held-out half
  bool diverged = false;   // regression failed; corr falls back to raw
  std::size_t train_size = 0;
  std::size_t test_size = 0;
};

/// Fits estimate -> truth with a one-hidden-layer MLP on a shuffled half of the
/// pairs and scores the other half.
PairFit remove_nonlinearity(std::span<const double> estimate, std::span<const double> truth, std::uint64_t seed,
                            const RegressorOptions& opts = {});

struct MccReport {
  Tensor table;                     // raw |corr| table
  std::vector<std::size_t> assignment;
  std::vector<PairFit> pairs;       // indexed by true latent
  double mcc = 0.0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::vector<std::string> warnings;

  std::string to_json() const;
};

/// Correlation table -> assignment -> per-pair regression -> mean.
MccReport mcc(const Tensor& estimate, const Tensor& truth, std::uint64_t seed = 0, const RegressorOptions& opts = {});

}  // namespace ccica::mcc
