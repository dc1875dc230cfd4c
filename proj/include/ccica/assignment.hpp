#pragma once

#include <cstddef>
#include <vector>

#include "ccica/ndgrad/tensor.hpp"

namespace ccica {

/// Linear sum assignment by the O(n^3) Hungarian method with potentials.
/// Returns perm with perm[row] = column, maximizing sum_row score(row, perm[row]).
std::vector<std::size_t> assign_max(const ndgrad::Tensor& score);

/// Same, minimizing total cost.
std::vector<std::size_t> assign_min(const ndgrad::Tensor& cost);

}  // namespace ccica
