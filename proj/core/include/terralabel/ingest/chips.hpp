#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "terralabel/ingest/raster.hpp"

namespace terralabel::ingest {

inline constexpr std::size_t kDefaultChipSize = 256;

enum class Split { train, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

/// A square window of a tile, band-sequential: data[(band * size + row) * size + col].
struct Chip {
  std::string id;
  std::string tile_id;
  std::size_t grid_row = 0;
  std::size_t grid_col = 0;
  std::size_t size = kDefaultChipSize;
  std::size_t bands = 0;
  Split split = Split::train;
  std::vector<float> data;

  std::size_t pixels() const { return size * size; }
  float at(std::size_t band, std::size_t row, std::size_t col) const {
    return data[(band * size + row) * size + col];
  }
  float& at(std::size_t band, std::size_t row, std::size_t col) {
    return data[(band * size + row) * size + col];
  }
  std::span<const float> band(std::size_t b) const {
    return std::span<const float>(data).subspan(b * pixels(), pixels());
  }
};

/// Non-overlapping chip grid of a tile; trailing remainder pixels are discarded.
struct ChipGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size = kDefaultChipSize;

  std::size_t count() const { return rows * cols; }
  std::size_t covered_height() const { return rows * size; }
  std::size_t covered_width() const { return cols * size; }
};

/// Throws InvalidArgument when the tile cannot hold a single chip.
ChipGrid chip_grid(std::size_t height, std::size_t width, std::size_t size = kDefaultChipSize);

std::string chip_id(std::string_view tile_id, std::size_t grid_row, std::size_t grid_col);

/// Cuts the tile into chips in row-major grid order.
std::vector<Chip> chip_tile(const Tile& tile, std::size_t size = kDefaultChipSize);

/// Every fourth chip (ordinal index = 3 mod 4) in row-major order is test.
std::vector<Split> split_chips(std::size_t count);

/// Per-band z-score statistics.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
};

inline constexpr double kStdFloor = 1e-6;

/// Statistics over the training-split chips only (population std, floored).
NormStats compute_norm_stats(std::span<const Chip> chips);

/// Per-band (x - mean) / max(std, 1e-6).
Chip normalize(const Chip& chip, const NormStats& stats);

/// Rotates every band of a chip by quarter_turns * 90 degrees counter-clockwise.
Chip rotate_chip(const Chip& chip, int quarter_turns);

}  // namespace terralabel::ingest
