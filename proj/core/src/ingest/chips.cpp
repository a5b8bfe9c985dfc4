#include "terralabel/ingest/chips.hpp"

#include <algorithm>
#include <cmath>

#include "terralabel/common/error.hpp"
#include "terralabel/common/image.hpp"

namespace terralabel::ingest {

std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  throw FormatError("unknown split '" + std::string(text) + "'");
}

ChipGrid chip_grid(std::size_t height, std::size_t width, std::size_t size) {
  if (size == 0) throw InvalidArgument("chip size must be positive");
  if (height < size || width < size) {
    throw InvalidArgument("tile of " + std::to_string(height) + "x" + std::to_string(width) +
                          " is smaller than one " + std::to_string(size) + "px chip");
  }
  return {height / size, width / size, size};
}

std::string chip_id(std::string_view tile_id, std::size_t grid_row, std::size_t grid_col) {
  return std::string(tile_id) + "_r" + std::to_string(grid_row) + "_c" + std::to_string(grid_col);
}

std::vector<Chip> chip_tile(const Tile& tile, std::size_t size) {
  if (tile.bands == 0) throw InvalidArgument("tile has no bands");
  const ChipGrid grid = chip_grid(tile.height, tile.width, size);
  std::vector<Chip> chips;
  chips.reserve(grid.count());
  for (std::size_t gr = 0; gr < grid.rows; ++gr) {
    for (std::size_t gc = 0; gc < grid.cols; ++gc) {
      Chip chip;
      chip.id = chip_id(tile.id, gr, gc);
      chip.tile_id = tile.id;
      chip.grid_row = gr;
      chip.grid_col = gc;
      chip.size = size;
      chip.bands = tile.bands;
      chip.data.resize(tile.bands * size * size);
      for (std::size_t b = 0; b < tile.bands; ++b) {
        for (std::size_t r = 0; r < size; ++r) {
          const float* src = &tile.data[(b * tile.height + gr * size + r) * tile.width + gc * size];
          std::copy_n(src, size, &chip.data[(b * size + r) * size]);
        }
      }
      chips.push_back(std::move(chip));
    }
  }
  const auto splits = split_chips(chips.size());
  for (std::size_t i = 0; i < chips.size(); ++i) chips[i].split = splits[i];
  return chips;
}

std::vector<Split> split_chips(std::size_t count) {
  std::vector<Split> out(count, Split::train);
  for (std::size_t i = 3; i < count; i += 4) out[i] = Split::test;
  return out;
}

NormStats compute_norm_stats(std::span<const Chip> chips) {
  std::vector<double> sum, sum_sq;
  std::size_t count = 0;
  for (const auto& chip : chips) {
    if (chip.split != Split::train) continue;
    if (sum.empty()) {
      sum.assign(chip.bands, 0.0);
      sum_sq.assign(chip.bands, 0.0);
    } else if (sum.size() != chip.bands) {
      throw InvalidArgument("compute_norm_stats: chips disagree on band count");
    }
    for (std::size_t b = 0; b < chip.bands; ++b) {
      for (float v : chip.band(b)) {
        sum[b] += v;
        sum_sq[b] += static_cast<double>(v) * v;
      }
    }
    count += chip.pixels();
  }
  if (count == 0) throw InvalidArgument("compute_norm_stats: no training chips");
  NormStats stats;
  for (std::size_t b = 0; b < sum.size(); ++b) {
    const double m = sum[b] / static_cast<double>(count);
    const double var = std::max(0.0, sum_sq[b] / static_cast<double>(count) - m * m);
    stats.mean.push_back(m);
    stats.std.push_back(std::sqrt(var));
  }
  return stats;
}

Chip normalize(const Chip& chip, const NormStats& stats) {
  if (stats.mean.size() != chip.bands || stats.std.size() != chip.bands) {
    throw InvalidArgument("normalize: statistics cover " + std::to_string(stats.mean.size()) +
                          " bands, chip has " + std::to_string(chip.bands));
  }
  Chip out = chip;
  for (std::size_t b = 0; b < chip.bands; ++b) {
    const double mu = stats.mean[b];
    const double sd = std::max(stats.std[b], kStdFloor);
    float* p = out.data.data() + b * chip.pixels();
    for (std::size_t i = 0; i < chip.pixels(); ++i) {
      p[i] = static_cast<float>((static_cast<double>(p[i]) - mu) / sd);
    }
  }
  return out;
}

Chip rotate_chip(const Chip& chip, int quarter_turns) {
  Chip out = chip;
  for (std::size_t b = 0; b < chip.bands; ++b) {
    auto rotated = rotate_square<float>(chip.band(b), chip.size, quarter_turns);
    std::copy(rotated.begin(), rotated.end(), out.data.begin() + static_cast<std::ptrdiff_t>(b * chip.pixels()));
  }
  return out;
}

}  // namespace terralabel::ingest
