#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "terralabel/ingest/raster.hpp"

namespace terralabel::ingest {

inline constexpr int kSyntheticMaterials = 4;

enum class SyntheticLayout {
  /// One material per 256px column band, separated by wavy boundaries.
  columns,
  /// Four quadrants with wavy boundaries.
  quadrants,
};

struct SyntheticTileOptions {
  std::size_t height = 1024;
  std::size_t width = 1024;
  std::size_t bands = 12;
  std::uint64_t seed = 42;
  double noise = 0.01;
  SyntheticLayout layout = SyntheticLayout::columns;
};

/// Synthetic reflectance tile with known ground-truth material per pixel.
/// Materials: 0 water, 1 vegetation, 2 built-up, 3 bare soil; each has its own
/// spectral signature and texture.
struct SyntheticTile {
  Tile tile;
  std::vector<std::uint8_t> material;  // row-major, one entry per pixel
};

SyntheticTile make_synthetic_tile(const SyntheticTileOptions& options = {});

/// Mean reflectance of a material in band b (bands beyond 12 repeat the last value).
float material_reflectance(int material, std::size_t band);

}  // namespace terralabel::ingest
