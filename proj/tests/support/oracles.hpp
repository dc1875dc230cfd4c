#pragma once

// Reference implementations used only by tests. Each one is deliberately
// naive (enumeration, finite differences) so it can be trusted on sight.

#include <cstddef>
#include <functional>
#include <vector>

#include "ccica/ndgrad/tensor.hpp"

namespace oracle {

using ccica::ndgrad::Tensor;

/// Central difference of f along every coordinate of x.
std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                                double h = 1e-5);

/// |a - b| <= abs_tol, or relative error below rel_tol.
bool grad_close(double analytic, double numeric, double rel_tol = 1e-5, double abs_tol = 1e-7);

/// Exact solution of min ||v' - v||^2 s.t. B v' >= 0 by trying all 2^k active
/// sets: for each set S, project v onto {B_S v' = 0} and keep the closest
/// feasible candidate. Rows of B must be linearly independent.
std::vector<double> qp_projection(const std::vector<double>& v, const std::vector<std::vector<double>>& rows);

/// Maximum-sum permutation by enumerating all n! candidates. perm[row] = column.
std::vector<std::size_t> brute_force_assignment(const Tensor& score);
double assignment_value(const Tensor& score, const std::vector<std::size_t>& perm);

}  // namespace oracle
