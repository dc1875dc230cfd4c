#pragma once

#include <cstddef>
#include <vector>

#include "ccica/ndgrad/tensor.hpp"

namespace ccica::linalg {

using ndgrad::Tensor;

struct Svd {
  std::vector<double> singular_values;  // descending
  Tensor u;                             // m x r, r = min(m, n)
  Tensor v;                             // n x r
};

/// One-sided (Hestenes) Jacobi SVD. Intended for small matrices.
Svd jacobi_svd(const Tensor& a, double tol = 1e-15, int max_sweeps = 100);

/// Number of singular values above `rel_tol * sigma_max`.
std::size_t numerical_rank(const std::vector<double>& singular_values, double rel_tol = 1e-8);

/// sigma_max / sigma_min; infinity for singular input.
double condition_number(const Tensor& a);

/// Solves A x = b (A square) by LU with partial pivoting. Throws NumericalError when singular.
std::vector<double> solve(const Tensor& a, std::vector<double> b);

Tensor inverse(const Tensor& a);
Tensor transpose(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);

double dot(const std::vector<double>& a, const std::vector<double>& b);
double norm(const std::vector<double>& a);

}  // namespace ccica::linalg
