#include "hsiucd/assignment.hpp"

#include <limits>
#include <stdexcept>

namespace hsiucd {

namespace {

// Rows <= cols.  Classic shortest-augmenting-path formulation, 1-based
// internally with column 0 as the virtual source.
std::vector<int> solve_wide(const Mat& a) {
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(a.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

}  // namespace

std::vector<int> solve_assignment(const Mat& cost) {
  if (!cost.allFinite()) throw std::invalid_argument("assignment cost must be finite");
  if (cost.rows() == 0 || cost.cols() == 0) return std::vector<int>(cost.rows(), -1);
  if (cost.rows() <= cost.cols()) return solve_wide(cost);
  const Mat t = cost.transpose();
  const std::vector<int> col_to_row = solve_wide(t);
  std::vector<int> out(cost.rows(), -1);
  for (std::size_t c = 0; c < col_to_row.size(); ++c) out[col_to_row[c]] = static_cast<int>(c);
  return out;
}

double assignment_cost(const Mat& cost, const std::vector<int>& assignment) {
  double total = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] >= 0) total += cost(static_cast<Eigen::Index>(i), assignment[i]);
  }
  return total;
}

}  // namespace hsiucd
