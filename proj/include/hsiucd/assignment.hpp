#pragma once

#include "hsiucd/tensor.hpp"

#include <vector>

namespace hsiucd {

/// Minimum-cost one-to-one assignment for a rectangular cost matrix
/// (Hungarian method with potentials, O(n^2 m)).  Returns, for each row,
/// the assigned column, or -1 when there are more rows than columns and the
/// row is left unmatched.  Exactly min(rows, cols) pairs are matched.
std::vector<int> solve_assignment(const Mat& cost);

/// Sum of cost(i, assignment[i]) over matched rows.
double assignment_cost(const Mat& cost, const std::vector<int>& assignment);

}  // namespace hsiucd
