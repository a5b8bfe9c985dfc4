#include "terralabel/matching/hungarian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "terralabel/common/error.hpp"

namespace terralabel::matching {

namespace {

// Rows <= cols. Column 0 is a virtual start; match[j] = row assigned to column j (1-based).
std::vector<std::size_t> solve(std::span<const double> cost, std::size_t n, std::size_t m, bool transposed) {
  const double inf = std::numeric_limits<double>::infinity();
  auto c = [&](std::size_t i, std::size_t j) { return transposed ? cost[j * n + i] : cost[i * m + j]; };
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> match(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> min_v(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < min_v[j]) {
          min_v[j] = cur;
          way[j] = j0;
        }
        if (min_v[j] < delta) {
          delta = min_v[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          min_v[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= m; ++j)
    if (match[j] != 0) row_to_col[match[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace

Assignment hungarian(std::span<const double> cost, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw InvalidArgument("hungarian: empty cost matrix");
  if (cost.size() != rows * cols) throw InvalidArgument("hungarian: cost size does not match shape");
  for (double v : cost)
    if (!std::isfinite(v)) throw InvalidArgument("hungarian: non-finite cost");

  // Solving on the short side is the padded square problem with constant-cost
  // dummy rows removed; the dummies cannot change which real pairs are optimal.
  const bool transposed = rows > cols;
  const std::size_t n = transposed ? cols : rows, m = transposed ? rows : cols;
  const auto assigned = solve(cost, n, m, transposed);

  Assignment out;
  out.pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.pairs.emplace_back(transposed ? assigned[i] : i, transposed ? i : assigned[i]);
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  for (const auto& [r, c] : out.pairs) out.total_cost += cost[r * cols + c];
  return out;
}

}  // namespace terralabel::matching
