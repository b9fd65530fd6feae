#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sizedl1/losses.hpp"

namespace sizedl1::matching {

using geometry::BoxCcwh;

/// Rectangular cost matrix, rows = predictions, cols = ground truths.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  static CostMatrix zeros(std::size_t r, std::size_t c) {
    return {r, c, std::vector<double>(r * c, 0.0)};
  }
  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

/// One-to-one assignment; pairs are (prediction index, gt index), sorted by
/// prediction index, with exactly min(rows, cols) entries.
struct MatchResult {
  std::vector<std::pair<int, int>> pairs;

  double total_cost(const CostMatrix& costs) const {
    double total = 0.0;
    for (const auto& [i, j] : pairs) total += costs.at(i, j);
    return total;
  }
};

/// Pairwise regression costs: entry (i, j) is composite_reg_loss on the
/// single pair (pred_i, gt_j).
inline CostMatrix reg_cost_matrix(std::span<const BoxCcwh> preds,
                                  std::span<const BoxCcwh> gts,
                                  losses::LossVariant variant,
                                  const losses::SizedConfig& cfg,
                                  const losses::LossWeights& lw) {
  if (preds.empty() || gts.empty()) {
    throw std::invalid_argument(
        "reg_cost_matrix: no assignment is defined for empty inputs");
  }
  CostMatrix costs = CostMatrix::zeros(preds.size(), gts.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const std::span<const BoxCcwh> p(&preds[i], 1);
      const std::span<const BoxCcwh> g(&gts[j], 1);
      costs.at(i, j) = losses::composite_reg_loss(p, g, variant, cfg, lw);
    }
  }
  return costs;
}

namespace detail {

/// Shortest-augmenting-path assignment on a square matrix (potentials form,
/// O(n^3)). Returns row -> col and the dual potentials.
struct SquareSolution {
  std::vector<int> row_to_col;
  std::vector<double> u;  // row potentials
  std::vector<double> v;  // col potentials
};

inline SquareSolution solve_square(const std::vector<double>& cost, int n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
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
  SquareSolution sol;
  sol.row_to_col.assign(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j] >= 1) sol.row_to_col[p[j] - 1] = j - 1;
  }
  sol.u.assign(n, 0.0);
  sol.v.assign(n, 0.0);
  for (int i = 1; i <= n; ++i) sol.u[i - 1] = u[i];
  for (int j = 1; j <= n; ++j) sol.v[j - 1] = v[j];
  return sol;
}

/// Kuhn augmenting-path matching on an adjacency list; returns true when
/// every row in `rows` can be matched.
inline bool perfect_matching(const std::vector<std::vector<int>>& adj,
                             const std::vector<int>& rows, int n_cols,
                             std::vector<int>& col_to_row) {
  col_to_row.assign(n_cols, -1);
  std::vector<char> visited(n_cols);
  // DFS over tight edges; deterministic because adjacency is in index order.
  auto try_row = [&](auto&& self, int r) -> bool {
    for (int c : adj[r]) {
      if (visited[c]) continue;
      visited[c] = 1;
      if (col_to_row[c] == -1 || self(self, col_to_row[c])) {
        col_to_row[c] = r;
        return true;
      }
    }
    return false;
  };
  for (int r : rows) {
    std::fill(visited.begin(), visited.end(), 0);
    if (!try_row(try_row, r)) return false;
  }
  return true;
}

}  // namespace detail

/// Minimum-cost one-to-one assignment. The matrix is padded to square with
/// zero-cost slack entries, solved with shortest augmenting paths, and the
/// result is refined to the lexicographically smallest pair sequence among
/// the assignments that stay on zero-reduced-cost edges.
inline MatchResult hungarian(const CostMatrix& costs) {
  if (costs.rows == 0 || costs.cols == 0) {
    throw std::invalid_argument("hungarian: empty cost matrix");
  }
  const int m = static_cast<int>(costs.rows);
  const int n = static_cast<int>(costs.cols);
  const int k = std::max(m, n);

  double max_abs = 0.0;
  for (double c : costs.data) {
    if (!std::isfinite(c)) {
      throw std::invalid_argument("hungarian: non-finite cost entry");
    }
    max_abs = std::max(max_abs, std::abs(c));
  }

  std::vector<double> padded(static_cast<std::size_t>(k) * k, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) padded[i * k + j] = costs.at(i, j);
  }

  const auto sol = detail::solve_square(padded, k);

  // Tight edges of the optimal duals. The base assignment is kept tight by
  // construction so the refinement can never lose the optimum; the epsilon
  // only admits genuinely tied alternatives.
  const double eps = 1e-12 * (1.0 + max_abs);
  std::vector<std::vector<int>> tight(k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      if (sol.row_to_col[i] == j ||
          padded[i * k + j] - sol.u[i] - sol.v[j] <= eps) {
        tight[i].push_back(j);
      }
    }
  }

  // Fix real rows in index order to the smallest feasible column; slack
  // columns (>= n) sort after real ones, so an unmatched row is chosen only
  // when no tight completion keeps it matched.
  std::vector<int> fixed_col(k, -1);
  std::vector<char> col_taken(k, 0);
  std::vector<int> col_to_row;
  for (int i = 0; i < k; ++i) {
    for (int j : tight[i]) {
      if (col_taken[j]) continue;
      // Check the remaining rows still admit a perfect matching.
      std::vector<std::vector<int>> adj(k);
      for (int r = i + 1; r < k; ++r) {
        for (int c : tight[r]) {
          if (!col_taken[c] && c != j) adj[r].push_back(c);
        }
      }
      std::vector<int> rest;
      for (int r = i + 1; r < k; ++r) rest.push_back(r);
      if (detail::perfect_matching(adj, rest, k, col_to_row)) {
        fixed_col[i] = j;
        col_taken[j] = 1;
        break;
      }
    }
    if (fixed_col[i] == -1) {
      // Cannot happen: the base assignment always completes.
      fixed_col[i] = sol.row_to_col[i];
      col_taken[fixed_col[i]] = 1;
    }
  }

  MatchResult result;
  for (int i = 0; i < m; ++i) {
    if (fixed_col[i] < n) result.pairs.emplace_back(i, fixed_col[i]);
  }
  return result;
}

/// Exhaustive minimum over all permutations; square matrices up to n = 8.
/// Permutations are enumerated in lexicographic pair-sequence order, so the
/// first strict minimum encountered matches hungarian's tie-break rule.
inline MatchResult brute_force_match(const CostMatrix& costs) {
  if (costs.rows != costs.cols) {
    throw std::invalid_argument("brute_force_match: matrix must be square");
  }
  const int n = static_cast<int>(costs.rows);
  if (n < 1 || n > 8) {
    throw std::invalid_argument("brute_force_match: n must be in [1, 8]");
  }
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += costs.at(i, perm[i]);
    if (total < best_cost) {
      best_cost = total;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  MatchResult result;
  for (int i = 0; i < n; ++i) result.pairs.emplace_back(i, best[i]);
  return result;
}

}  // namespace sizedl1::matching
