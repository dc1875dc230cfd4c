#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ccica/ndgrad/tensor.hpp"
#include "ccica/rng.hpp"
#include "ccica/synthgen.hpp"

namespace ccica::ident {

using ndgrad::Tensor;

struct LogDensityDerivs {
  double d1 = 0.0;  // d/dz log p(z | u)
  double d2 = 0.0;  // d^2/dz^2 log p(z | u)
};

double log_density(const ChangingLatent& c, double z);
LogDensityDerivs log_density_derivs(const ChangingLatent& c, double z);
/// Derivatives for changing latent i of domain u.
LogDensityDerivs log_density_derivs(const std::vector<DomainSpec>& specs, std::size_t i, int u, double z);

enum class MatrixKind {
  lemma1,    // 2 n_s x 2 n_s: [phi''_1..phi''_ns | phi'_1..phi'_ns], rows u_1..u_{2 n_s}
  theorem1,  // n_s x n_s: phi'_i, rows u_1..u_{n_s}
};

std::string to_string(MatrixKind k);
MatrixKind matrix_kind_from_string(const std::string& s);
/// Number of non-reference domains the matrix needs.
std::size_t rows_needed(MatrixKind k, std::size_t n_s);

struct IdentMatrix {
  MatrixKind kind = MatrixKind::lemma1;
  std::vector<double> z;      // evaluation point z_s
  int u0 = 0;                 // reference domain
  std::vector<int> domains;   // u_1..u_m, one per row
  Tensor entries;
  std::vector<double> singular_values;  // descending
  std::size_t rank = 0;
  bool full_rank = false;
};

/// phi_i(k, 0) = d(i, u_k, z_i) - d(i, u_0, z_i). When `domains` is empty the
/// rows use the first m domains after u0 in spec order.
IdentMatrix build_matrix(const std::vector<DomainSpec>& specs, MatrixKind kind, const std::vector<double>& z, int u0,
                         std::vector<int> domains = {});

/// Column pairs (0-based) whose |cosine| exceeds the threshold. A zero column
/// is dependent on every other column.
std::vector<std::pair<std::size_t, std::size_t>> dependent_columns(const Tensor& m, double threshold = 0.999);

struct PointVerdict {
  std::vector<double> z;
  double sigma_min = 0.0;
  double sigma_max = 0.0;
  std::size_t rank = 0;
  bool full_rank = false;       // with the fixed domain set
  bool any_full_rank = false;   // with some admissible domain subset
  std::vector<std::pair<std::size_t, std::size_t>> dependent;
};

struct IdentReport {
  MatrixKind kind = MatrixKind::lemma1;
  std::size_t n_s = 0;
  int u0 = 0;
  std::vector<int> domains;
  std::vector<PointVerdict> points;
  /// Share of points where the fixed domain set gives a full-rank matrix.
  double full_rank_fraction = 0.0;
  /// Share of points where at least one choice of (u0, u_1..u_m) gives full rank.
  double exists_full_rank_fraction = 0.0;
  /// 1-based column pair -> share of points where it was flagged dependent.
  std::map<std::pair<std::size_t, std::size_t>, double> dependency_rate;

  std::string to_json() const;
  std::string to_table() const;
};

struct CheckOptions {
  std::size_t n_points = 200;  // half prior draws, half quasi-random grid
  double grid_bound = 5.0;
  double dependency_threshold = 0.999;
  /// Skip the subset search when the number of candidate subsets exceeds this.
  std::size_t max_subsets = 20000;
};

IdentReport check_scenario(const std::vector<DomainSpec>& specs, MatrixKind kind, Rng& rng,
                           const CheckOptions& opts = {});

struct ChangeAudit {
  std::vector<std::size_t> distinct;  // |S_i| per changing latent
  std::vector<std::size_t> flagged;   // latents with |S_i| < 3 (only when n_s >= 2)
};

/// Counts distinct per-latent distributions by exact parameter equality.
ChangeAudit minimal_change_audit(const std::vector<DomainSpec>& specs);

/// Five Gaussian domains with two changing latents: z1 differs in every
/// domain, z2 takes `distinct_z2` distributions (2: u0 alone then one shared
/// distribution; 3: u0, u1, then one shared distribution).
std::vector<DomainSpec> partial_change_specs(std::size_t distinct_z2);

/// Halton point `index` (1-based) in [-bound, bound]^dims.
std::vector<double> halton_point(std::size_t index, std::size_t dims, double bound);

}  // namespace ccica::ident
