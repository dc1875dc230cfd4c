#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "ccica/ndgrad/tensor.hpp"
#include "ccica/rng.hpp"

namespace ccica::gem {

using ndgrad::Tensor;

/// Per-domain episodic memory filled by reservoir sampling.
class MemoryBank {
 public:
  explicit MemoryBank(std::size_t capacity = 256);

  std::size_t capacity() const noexcept { return capacity_; }

  /// Offers every row of `batch` to domain u's reservoir. After a stream of
  /// length N the store holds a uniform sample of min(N, capacity) rows.
  void reservoir_update(int u, const Tensor& batch, Rng& rng);

  bool has(int u) const { return stores_.count(u) != 0; }
  std::size_t size(int u) const;
  /// Number of rows offered so far for domain u.
  std::size_t seen(int u) const;
  /// Stored rows as a matrix (size(u) x width).
  Tensor memory(int u) const;
  std::vector<int> domains() const;

 private:
  struct Store {
    std::vector<std::vector<double>> rows;
    std::size_t seen = 0;
  };
  std::size_t capacity_;
  std::map<int, Store> stores_;
};

/// Flattened gradient of the training loss on a memory, evaluated with the
/// given domain's flow parameters.
using MemoryGradFn = std::function<std::vector<double>(int u, const Tensor& memory)>;

/// One row per past domain, in the order of `past_domains`.
std::vector<std::vector<double>> past_gradients(const MemoryBank& bank, std::span<const int> past_domains,
                                                const MemoryGradFn& grad_fn);

struct ProjectOptions {
  /// Optional constraint margin (B v' >= margin). The plain problem uses 0.
  double margin = 0.0;
  /// Tolerance on the scaled KKT residual of the dual.
  double kkt_tol = 1e-8;
  std::size_t max_iterations = 200000;
};

struct Projection {
  std::vector<double> v;            // projected gradient v'
  std::vector<double> multipliers;  // dual solution w*
  std::size_t violated = 0;         // constraints with B v < margin before projection
  bool projected = false;           // false when the no-op path was taken
  double kkt_residual = 0.0;
  std::size_t iterations = 0;
};

/// Solves min ||v - v'||^2 s.t. B v' >= 0 through its dual
///   min_w 0.5 w^T (B B^T) w + w^T B v,  w >= 0,   v' = v + B^T w.
/// Returns v unchanged (bitwise) when B v >= 0 already holds.
/// Throws QpError when the dual solver does not reach the KKT tolerance.
Projection project(std::span<const double> v, const std::vector<std::vector<double>>& rows,
                   const ProjectOptions& opts = {});

/// Cosine of the angle between two vectors; 1 when either is zero.
double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace ccica::gem
