#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace terralabel {

/// Rotates an n x n row-major plane by quarter_turns * 90 degrees
/// counter-clockwise: one turn maps out(r, c) = in(c, n - 1 - r).
template <typename T>
std::vector<T> rotate_square(std::span<const T> plane, std::size_t n, int quarter_turns) {
  int turns = ((quarter_turns % 4) + 4) % 4;
  std::vector<T> cur(plane.begin(), plane.end());
  std::vector<T> next(cur.size());
  for (int t = 0; t < turns; ++t) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) next[r * n + c] = cur[c * n + (n - 1 - r)];
    }
    cur.swap(next);
  }
  return cur;
}

}  // namespace terralabel
