#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace terralabel::matching {

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), ascending row
  double total_cost = 0.0;
};

/// Minimum-cost one-to-one assignment of min(rows, cols) pairs on a row-major
/// cost matrix. O(n^2 m) shortest augmenting paths with potentials.
Assignment hungarian(std::span<const double> cost, std::size_t rows, std::size_t cols);

}  // namespace terralabel::matching
