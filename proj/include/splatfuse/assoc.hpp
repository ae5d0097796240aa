#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "splatfuse/errors.hpp"
#include "splatfuse/image.hpp"

namespace splatfuse {

/// Unit-norm appearance/shape descriptor of one masked image region:
/// 18-bin color histogram (6 per channel) + area fraction + bbox aspect +
/// 4 normalized central moments.
struct RegionDescriptor {
  int region_id = -1;
  std::vector<double> v;

  double cosine(const RegionDescriptor& o) const {
    double dot = 0.0;
    for (size_t i = 0; i < v.size() && i < o.v.size(); ++i) dot += v[i] * o.v[i];
    return dot;
  }
};

inline RegionDescriptor region_descriptor(const ImageBuffer& img, const Mask& mask,
                                          int region_id = -1) {
  if (img.width != mask.width || img.height != mask.height) {
    throw DimensionMismatchError("region_descriptor: image/mask size mismatch");
  }
  RegionDescriptor d;
  d.region_id = region_id;
  d.v.assign(24, 0.0);

  size_t n = 0;
  int min_x = img.width, max_x = -1, min_y = img.height, max_y = -1;
  double sx = 0.0, sy = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (!mask.at(x, y)) continue;
      ++n;
      for (int c = 0; c < 3; ++c) {
        const int bin = std::min(5, static_cast<int>(img.at(x, y, c) * 6.0));
        d.v[c * 6 + std::max(0, bin)] += 1.0;
      }
      min_x = std::min(min_x, x);
      max_x = std::max(max_x, x);
      min_y = std::min(min_y, y);
      max_y = std::max(max_y, y);
      sx += x;
      sy += y;
    }
  if (n == 0) throw EmptyMaskError("region_descriptor: empty mask");

  const double inv_n = 1.0 / static_cast<double>(n);
  for (int i = 0; i < 18; ++i) d.v[i] *= inv_n;
  d.v[18] = static_cast<double>(n) / static_cast<double>(img.pixel_count());
  const double bw = max_x - min_x + 1, bh = max_y - min_y + 1;
  d.v[19] = bw / (bw + bh);

  // Normalized central moments eta_20, eta_02, eta_11, eta_30.
  const double cx = sx * inv_n, cy = sy * inv_n;
  double m20 = 0.0, m02 = 0.0, m11 = 0.0, m30 = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (!mask.at(x, y)) continue;
      const double dx = x - cx, dy = y - cy;
      m20 += dx * dx;
      m02 += dy * dy;
      m11 += dx * dy;
      m30 += dx * dx * dx;
    }
  const double nd = static_cast<double>(n);
  d.v[20] = m20 / (nd * nd);
  d.v[21] = m02 / (nd * nd);
  d.v[22] = m11 / (nd * nd);
  d.v[23] = m30 / (nd * nd * std::sqrt(nd));

  double norm = 0.0;
  for (double x : d.v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& x : d.v) x /= norm;
  } else {
    d.v[0] = 1.0;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Hungarian assignment
// ---------------------------------------------------------------------------

namespace assoc_detail {

/// Potentials-based O(n^2 m) solver; requires n <= m and assigns every row.
inline double hungarian_rows(const std::vector<std::vector<double>>& cost, int n,
                             int m, std::vector<int>& row_to_col) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = inf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
    } while (j0);
  }
  row_to_col.assign(n, -1);
  double total = 0.0;
  for (int j = 1; j <= m; ++j) {
    if (p[j] > 0) {
      row_to_col[p[j] - 1] = j - 1;
      total += cost[p[j] - 1][j - 1];
    }
  }
  return total;
}

/// Minimum assignment cost of size min(|rows|, |cols|) over a sub-matrix.
inline double optimal_cost(const std::vector<std::vector<double>>& cost,
                           const std::vector<int>& rows,
                           const std::vector<int>& cols) {
  const int n = static_cast<int>(rows.size());
  const int m = static_cast<int>(cols.size());
  if (n == 0 || m == 0) return 0.0;
  const bool flip = n > m;
  const int rn = flip ? m : n, rm = flip ? n : m;
  std::vector<std::vector<double>> sub(rn, std::vector<double>(rm));
  for (int i = 0; i < rn; ++i)
    for (int j = 0; j < rm; ++j) {
      sub[i][j] = flip ? cost[rows[j]][cols[i]] : cost[rows[i]][cols[j]];
    }
  std::vector<int> assignment;
  return hungarian_rows(sub, rn, rm, assignment);
}

}  // namespace assoc_detail

/// Minimum-cost one-to-one assignment of size min(n, m). Deterministic
/// tie-break: the lexicographically smallest (row, col) pair list among all
/// optimal assignments, fixed one row at a time.
inline std::vector<std::pair<int, int>> hungarian(
    const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  const int m = n > 0 ? static_cast<int>(cost[0].size()) : 0;
  if (n == 0 || m == 0) return {};
  for (const auto& row : cost) {
    if (static_cast<int>(row.size()) != m) {
      throw DimensionMismatchError("hungarian: ragged cost matrix");
    }
  }

  std::vector<int> all_rows(n), all_cols(m);
  for (int i = 0; i < n; ++i) all_rows[i] = i;
  for (int j = 0; j < m; ++j) all_cols[j] = j;
  const double opt = assoc_detail::optimal_cost(cost, all_rows, all_cols);
  const double tol = 1e-9 * std::max(1.0, std::abs(opt));

  std::vector<std::pair<int, int>> pairs;
  std::vector<int> free_cols = all_cols;
  double fixed_cost = 0.0;
  int target = std::min(n, m);
  for (int r = 0; r < n && static_cast<int>(pairs.size()) < target; ++r) {
    std::vector<int> tail_rows;
    for (int i = r + 1; i < n; ++i) tail_rows.push_back(i);
    bool assigned = false;
    for (int c : free_cols) {
      std::vector<int> rest_cols;
      for (int j : free_cols)
        if (j != c) rest_cols.push_back(j);
      const double total = fixed_cost + cost[r][c] +
                           assoc_detail::optimal_cost(cost, tail_rows, rest_cols);
      if (total <= opt + tol) {
        pairs.emplace_back(r, c);
        fixed_cost += cost[r][c];
        free_cols = rest_cols;
        assigned = true;
        break;
      }
    }
    if (!assigned) {
      // Row r is unassigned in every optimal solution (only possible n > m);
      // verify the remainder still reaches the optimum.
      const double total =
          fixed_cost + assoc_detail::optimal_cost(cost, tail_rows, free_cols);
      if (total > opt + tol) {
        throw Error("hungarian: internal inconsistency in tie-break search");
      }
    }
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Cross-state association
// ---------------------------------------------------------------------------

/// Region ids grouped by what happened between two states. Every input
/// region lands in exactly one group.
struct MatchResult {
  std::vector<std::pair<int, int>> moved;  // (prev region id, curr region id)
  std::vector<int> removed;                // prev region ids
  std::vector<int> added;                  // curr region ids
};

/// Optimal one-to-one matching on cosine cost with an acceptance gate:
/// matched pairs below tau_match similarity fall back to removed/added.
inline MatchResult associate(std::span<const RegionDescriptor> prev,
                             std::span<const RegionDescriptor> curr,
                             double tau_match = 0.5) {
  MatchResult result;
  const int n = static_cast<int>(prev.size());
  const int m = static_cast<int>(curr.size());
  std::vector<char> prev_used(n, 0), curr_used(m, 0);
  if (n > 0 && m > 0) {
    std::vector<std::vector<double>> cost(n, std::vector<double>(m));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) cost[i][j] = 1.0 - prev[i].cosine(curr[j]);
    for (const auto& [i, j] : hungarian(cost)) {
      if (prev[i].cosine(curr[j]) >= tau_match) {
        result.moved.emplace_back(prev[i].region_id, curr[j].region_id);
        prev_used[i] = 1;
        curr_used[j] = 1;
      }
    }
  }
  for (int i = 0; i < n; ++i)
    if (!prev_used[i]) result.removed.push_back(prev[i].region_id);
  for (int j = 0; j < m; ++j)
    if (!curr_used[j]) result.added.push_back(curr[j].region_id);
  std::sort(result.moved.begin(), result.moved.end());
  std::sort(result.removed.begin(), result.removed.end());
  std::sort(result.added.begin(), result.added.end());
  return result;
}

}  // namespace splatfuse
