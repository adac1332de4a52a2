#pragma once

#include <limits>
#include <vector>

#include "cola/common.hpp"

namespace cola {

struct Assignment {
  std::vector<Eigen::Index> column_of_row;
  double cost = 0.0;
};

// Minimum-cost perfect matching on a square cost matrix (Hungarian method with
// row potentials, O(n^3)). Serves as an independent check on exact_ot.
inline Assignment hungarian(const Matrix& cost) {
  const Eigen::Index n = cost.rows();
  if (cost.cols() != n) fail_usage("assignment", "hungarian requires a square matrix");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; column 0 is a virtual start
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Eigen::Index> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (Eigen::Index i = 1; i <= n; ++i) {
    p[0] = i;
    Eigen::Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<bool> used(static_cast<std::size_t>(n + 1), false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const Eigen::Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      Eigen::Index j1 = 0;
      for (Eigen::Index j = 1; j <= n; ++j) {
        const auto js = static_cast<std::size_t>(j);
        if (used[js]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[js];
        if (cur < minv[js]) {
          minv[js] = cur;
          way[js] = j0;
        }
        if (minv[js] < delta) {
          delta = minv[js];
          j1 = j;
        }
      }
      for (Eigen::Index j = 0; j <= n; ++j) {
        const auto js = static_cast<std::size_t>(j);
        if (used[js]) {
          u[static_cast<std::size_t>(p[js])] += delta;
          v[js] -= delta;
        } else {
          minv[js] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Eigen::Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment out;
  out.column_of_row.assign(static_cast<std::size_t>(n), 0);
  for (Eigen::Index j = 1; j <= n; ++j) {
    out.column_of_row[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  }
  for (Eigen::Index i = 0; i < n; ++i) out.cost += cost(i, out.column_of_row[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace cola
