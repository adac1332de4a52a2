#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "cola/common.hpp"
#include "cola/parallel.hpp"

namespace cola {

inline constexpr double kMarginalSumTolerance = 1e-6;

struct TransportProblem {
  Matrix cost;          // N x M, finite, >= 0
  Vector row_marginal;  // a, length N
  Vector col_marginal;  // b, length M

  Eigen::Index rows() const { return cost.rows(); }
  Eigen::Index cols() const { return cost.cols(); }

  void validate() const {
    if (cost.rows() != row_marginal.size() || cost.cols() != col_marginal.size() || cost.size() == 0) {
      fail_usage("ot_solver", "cost shape does not match marginals");
    }
    if (!cost.allFinite()) fail_numerical("ot_solver", "non-finite cost entry");
    if (cost.minCoeff() < 0.0) fail_data("ot_solver", "negative cost entry");
    auto check = [](const Vector& m, const char* name) {
      if (!m.allFinite() || m.minCoeff() < 0.0) fail_data("ot_solver", std::string(name) + " has a negative entry");
      if (std::abs(m.sum() - 1.0) > kMarginalSumTolerance) {
        fail_data("ot_solver", std::string(name) + " does not sum to 1");
      }
    };
    check(row_marginal, "row marginal");
    check(col_marginal, "column marginal");
  }
};

struct TransportSolution {
  Matrix plan;  // N x M
  double distance = 0.0;
  int iterations = 0;
  double marginal_violation = 0.0;
  bool converged = true;
};

struct SinkhornParams {
  double epsilon = 0.01;
  int max_iters = 1000;
  double tolerance = 1e-6;

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) fail_usage("ot_solver", "epsilon must be positive");
    if (max_iters < 1) fail_usage("ot_solver", "max_iters must be >= 1");
    if (!(tolerance > 0.0)) fail_usage("ot_solver", "tolerance must be positive");
  }
};

// max(|T 1 - a|_inf, |T^T 1 - b|_inf)
inline double marginal_violation(const Matrix& plan, const Vector& a, const Vector& b) {
  const double rows = (plan.rowwise().sum() - a).cwiseAbs().maxCoeff();
  const double cols = (plan.colwise().sum().transpose() - b).cwiseAbs().maxCoeff();
  return std::max(rows, cols);
}

namespace detail {

inline std::vector<Eigen::Index> support(const Vector& m) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (m[i] > 0.0) idx.push_back(i);
  return idx;
}

// Scales a nearly feasible plan onto the transport polytope: shrink rows and
// columns that overshoot, then add the rank-one correction for the deficit.
inline Matrix round_to_feasible(Matrix plan, const Vector& a, const Vector& b) {
  const Vector r = plan.rowwise().sum();
  for (Eigen::Index i = 0; i < plan.rows(); ++i) {
    if (r[i] > a[i]) plan.row(i) *= r[i] > 0.0 ? a[i] / r[i] : 0.0;
  }
  const Vector c = plan.colwise().sum().transpose();
  for (Eigen::Index j = 0; j < plan.cols(); ++j) {
    if (c[j] > b[j]) plan.col(j) *= c[j] > 0.0 ? b[j] / c[j] : 0.0;
  }
  const Vector err_r = (a - plan.rowwise().sum()).cwiseMax(0.0);
  const Vector err_c = (b - plan.colwise().sum().transpose()).cwiseMax(0.0);
  const double mass = err_r.sum();
  if (mass > 0.0) plan += err_r * err_c.transpose() / mass;
  return plan;
}

}  // namespace detail

// Entropy-regularized OT by log-domain Sinkhorn. Rows or columns with zero
// marginal mass are dropped before iterating and carry zero plan mass. The
// reported distance is <T, C> for the plan rounded onto the feasible set.
inline TransportSolution sinkhorn(const TransportProblem& problem, const SinkhornParams& params = {}) {
  problem.validate();
  params.validate();
  const auto rows = detail::support(problem.row_marginal);
  const auto cols = detail::support(problem.col_marginal);
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto m = static_cast<Eigen::Index>(cols.size());
  const double eps = params.epsilon;

  // -C / eps on the support, stored in both orientations for contiguous scans
  Matrix kernel(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) kernel(i, j) = -problem.cost(rows[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)]) / eps;
  const Matrix kernel_t = kernel.transpose();
  Vector log_a(n), log_b(m), a(n), b(m);
  for (Eigen::Index i = 0; i < n; ++i) {
    a[i] = problem.row_marginal[rows[static_cast<std::size_t>(i)]];
    log_a[i] = std::log(a[i]);
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    b[j] = problem.col_marginal[cols[static_cast<std::size_t>(j)]];
    log_b[j] = std::log(b[j]);
  }

  // scaled potentials f/eps and g/eps
  Vector f = Vector::Zero(n);
  Vector g = Vector::Zero(m);
  Vector lse_rows(n);
  Vector scratch_m(m), scratch_n(n);

  auto row_lse = [&] {
    for (Eigen::Index i = 0; i < n; ++i) {
      scratch_m = kernel_t.col(i) + g;
      lse_rows[i] = log_sum_exp(scratch_m);
    }
  };

  TransportSolution sol;
  sol.converged = false;
  double violation = std::numeric_limits<double>::infinity();
  int it = 0;
  for (;;) {
    row_lse();
    if (it > 0) {
      // columns are exact after the g-update, so the row error is the violation
      violation = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) violation = std::max(violation, std::abs(std::exp(f[i] + lse_rows[i]) - a[i]));
      if (!std::isfinite(violation)) {
        fail_numerical("ot_solver", "Sinkhorn potentials diverged at iteration " + std::to_string(it) +
                                        " (epsilon=" + std::to_string(eps) + ")");
      }
      if (violation < params.tolerance) {
        sol.converged = true;
        break;
      }
      if (it >= params.max_iters) break;
    }
    f = log_a - lse_rows;
    for (Eigen::Index j = 0; j < m; ++j) {
      scratch_n = kernel.col(j) + f;
      g[j] = log_b[j] - log_sum_exp(scratch_n);
    }
    ++it;
  }
  if (!f.allFinite() || !g.allFinite()) {
    fail_numerical("ot_solver", "Sinkhorn scaling underflowed (epsilon=" + std::to_string(eps) + ")");
  }

  Matrix plan(n, m);
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index i = 0; i < n; ++i) plan(i, j) = std::exp(kernel(i, j) + f[i] + g[j]);
  plan = detail::round_to_feasible(std::move(plan), a, b);

  sol.plan = Matrix::Zero(problem.rows(), problem.cols());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) sol.plan(rows[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)]) = plan(i, j);
  sol.iterations = it;
  sol.distance = (sol.plan.array() * problem.cost.array()).sum();
  sol.marginal_violation =
      std::max(violation, marginal_violation(sol.plan, problem.row_marginal, problem.col_marginal));
  return sol;
}

// Upper bound on problem size for the exact solver.
inline constexpr Eigen::Index kExactOtMaxCells = 10'000;

// Exact transportation LP by the transportation simplex: north-west corner
// start, potentials from the basis tree, Bland's rule for entering and
// leaving cells.
inline TransportSolution exact_ot(const TransportProblem& problem) {
  problem.validate();
  const Eigen::Index n = problem.rows();
  const Eigen::Index m = problem.cols();
  if (n * m > kExactOtMaxCells) {
    fail_usage("ot_solver", "exact_ot limited to " + std::to_string(kExactOtMaxCells) + " cells, got " +
                                std::to_string(n * m));
  }
  const Matrix& cost = problem.cost;
  Matrix flow = Matrix::Zero(n, m);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> basic =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, m, false);

  {
    Vector supply = problem.row_marginal;
    Vector demand = problem.col_marginal;
    Eigen::Index i = 0, j = 0;
    for (;;) {
      const double q = std::max(0.0, std::min(supply[i], demand[j]));
      flow(i, j) = q;
      basic(i, j) = true;
      supply[i] -= q;
      demand[j] -= q;
      if (i == n - 1 && j == m - 1) break;
      if (j == m - 1 || (i < n - 1 && supply[i] <= demand[j])) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  // nodes: rows 0..n-1, columns n..n+m-1
  const Eigen::Index nodes = n + m;
  std::vector<std::vector<Eigen::Index>> adj(static_cast<std::size_t>(nodes));
  std::vector<Eigen::Index> parent(static_cast<std::size_t>(nodes));
  std::vector<Eigen::Index> queue;
  Vector u(n), v(m);
  const double scale = std::max(1.0, cost.maxCoeff());
  const double tol = 1e-12 * scale;

  auto rebuild_adjacency = [&] {
    for (auto& list : adj) list.clear();
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j)
        if (basic(i, j)) {
          adj[static_cast<std::size_t>(i)].push_back(n + j);
          adj[static_cast<std::size_t>(n + j)].push_back(i);
        }
  };

  // BFS over the basis tree from `root`, filling parent[]; returns visit count.
  auto bfs = [&](Eigen::Index root) {
    std::fill(parent.begin(), parent.end(), Eigen::Index{-1});
    queue.assign(1, root);
    parent[static_cast<std::size_t>(root)] = root;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const Eigen::Index x = queue[head];
      for (Eigen::Index y : adj[static_cast<std::size_t>(x)]) {
        if (parent[static_cast<std::size_t>(y)] >= 0) continue;
        parent[static_cast<std::size_t>(y)] = x;
        queue.push_back(y);
      }
    }
    return queue.size();
  };

  const long max_pivots = 1'000'000;
  long pivots = 0;
  for (;; ++pivots) {
    if (pivots >= max_pivots) fail_numerical("ot_solver", "transportation simplex exceeded pivot limit");
    rebuild_adjacency();
    if (bfs(0) != static_cast<std::size_t>(nodes)) fail_numerical("ot_solver", "basis is not a spanning tree");
    // u_i + v_j = c_ij on basic cells, in BFS order from u_0 = 0
    u[0] = 0.0;
    for (std::size_t k = 1; k < queue.size(); ++k) {
      const Eigen::Index x = queue[k];
      const Eigen::Index p = parent[static_cast<std::size_t>(x)];
      if (x >= n) {
        v[x - n] = cost(p, x - n) - u[p];
      } else {
        u[x] = cost(x, p - n) - v[p - n];
      }
    }

    Eigen::Index ei = -1, ej = -1;
    for (Eigen::Index i = 0; i < n && ei < 0; ++i)
      for (Eigen::Index j = 0; j < m; ++j)
        if (!basic(i, j) && cost(i, j) - u[i] - v[j] < -tol) {
          ei = i;
          ej = j;
          break;
        }
    if (ei < 0) break;

    // cycle: entering cell plus the tree path from column ej back to row ei
    bfs(ei);
    std::vector<std::pair<Eigen::Index, Eigen::Index>> cycle;
    for (Eigen::Index x = n + ej; x != ei;) {
      const Eigen::Index p = parent[static_cast<std::size_t>(x)];
      cycle.emplace_back(x >= n ? p : x, x >= n ? x - n : p - n);
      x = p;
    }
    // cycle[0], cycle[2], ... lose mass; cycle[1], cycle[3], ... gain it
    double theta = std::numeric_limits<double>::infinity();
    std::pair<Eigen::Index, Eigen::Index> leaving{n, m};
    for (std::size_t k = 0; k < cycle.size(); k += 2) {
      const auto [ci, cj] = cycle[k];
      const double f = flow(ci, cj);
      if (f < theta || (f == theta && std::pair{ci, cj} < leaving)) {
        theta = f;
        leaving = {ci, cj};
      }
    }
    for (std::size_t k = 0; k < cycle.size(); ++k) {
      const auto [ci, cj] = cycle[k];
      flow(ci, cj) += (k % 2 == 0) ? -theta : theta;
    }
    flow(ei, ej) = theta;
    basic(ei, ej) = true;
    flow(leaving.first, leaving.second) = 0.0;
    basic(leaving.first, leaving.second) = false;
  }

  TransportSolution sol;
  sol.plan = flow.cwiseMax(0.0);
  sol.distance = (sol.plan.array() * cost.array()).sum();
  sol.iterations = static_cast<int>(pivots);
  sol.marginal_violation = marginal_violation(sol.plan, problem.row_marginal, problem.col_marginal);
  sol.converged = true;
  return sol;
}

// sinkhorn(problems[i]).distance for every i.
inline std::vector<double> batch_distances(const std::vector<TransportProblem>& problems,
                                           const SinkhornParams& params = {}, unsigned threads = 1) {
  std::vector<double> out(problems.size());
  parallel_for(problems.size(), threads, [&](std::size_t i) {
    try {
      out[i] = sinkhorn(problems[i], params).distance;
    } catch (const Error& e) {
      throw Error(e.kind(), e.module(), "problem " + std::to_string(i) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace cola
