#include "terralabel/ingest/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace terralabel::ingest {
namespace {

// Rough Sentinel-2 style signatures over B1..B12 (B10 omitted).
constexpr std::array<std::array<float, 12>, kSyntheticMaterials> kSpectra{{
    {0.060f, 0.055f, 0.050f, 0.035f, 0.030f, 0.025f, 0.022f, 0.020f, 0.018f, 0.015f, 0.010f, 0.008f},
    {0.030f, 0.035f, 0.060f, 0.040f, 0.100f, 0.280f, 0.340f, 0.360f, 0.370f, 0.350f, 0.200f, 0.110f},
    {0.120f, 0.130f, 0.140f, 0.150f, 0.160f, 0.170f, 0.175f, 0.180f, 0.185f, 0.190f, 0.200f, 0.190f},
    {0.080f, 0.100f, 0.140f, 0.180f, 0.210f, 0.240f, 0.260f, 0.280f, 0.290f, 0.300f, 0.340f, 0.320f},
}};

double hash_noise(std::uint64_t seed, std::size_t r, std::size_t c) {
  std::uint64_t x = seed ^ (r * 0x9E3779B97F4A7C15ULL) ^ (c * 0xC2B2AE3D27D4EB4FULL);
  x ^= x >> 33;
  x *= 0xFF51AFD7ED558CCDULL;
  x ^= x >> 33;
  x *= 0xC4CEB9FE1A85EC53ULL;
  x ^= x >> 33;
  return static_cast<double>(x >> 11) / static_cast<double>(1ULL << 53) * 2.0 - 1.0;
}

/// Texture modulation in [-1, 1] characteristic of each material.
double texture(int material, std::size_t r, std::size_t c, std::uint64_t seed) {
  constexpr double pi = std::numbers::pi;
  const double y = static_cast<double>(r), x = static_cast<double>(c);
  switch (material) {
    case 0:  // water: long smooth swell
      return 0.5 * std::sin(2 * pi * (x + 0.3 * y) / 180.0);
    case 1: {  // vegetation: field parcels with alternating row direction
      const bool horizontal = ((r / 64) + (c / 64)) % 2 == 0;
      return std::sin(2 * pi * (horizontal ? y : x) / 8.0);
    }
    case 2: {  // built-up: bright blocks separated by dark streets
      const bool street = (r % 24) < 4 || (c % 24) < 4;
      return street ? -1.0 : 0.4 + 0.3 * hash_noise(seed + 7, r / 24, c / 24);
    }
    default:  // bare soil: speckle
      return hash_noise(seed + 11, r / 3, c / 3);
  }
}

int layout_material(SyntheticLayout layout, std::size_t r, std::size_t c, std::size_t h,
                    std::size_t w) {
  constexpr double pi = std::numbers::pi;
  const double y = static_cast<double>(r), x = static_cast<double>(c);
  if (layout == SyntheticLayout::columns) {
    const double band = static_cast<double>(w) / kSyntheticMaterials;
    for (int k = 0; k < kSyntheticMaterials - 1; ++k) {
      const double boundary = band * (k + 1) + 0.12 * band * std::sin(2 * pi * y / 300.0 + k);
      if (x < boundary) return k;
    }
    return kSyntheticMaterials - 1;
  }
  const double mid_x = w / 2.0 + 0.05 * static_cast<double>(w) * std::sin(2 * pi * y / 400.0);
  const double mid_y = h / 2.0 + 0.05 * static_cast<double>(h) * std::sin(2 * pi * x / 350.0 + 1.0);
  return (y < mid_y ? 0 : 2) + (x < mid_x ? 0 : 1);
}

}  // namespace

float material_reflectance(int material, std::size_t band) {
  const auto& s = kSpectra.at(static_cast<std::size_t>(material));
  return s[std::min<std::size_t>(band, s.size() - 1)];
}

SyntheticTile make_synthetic_tile(const SyntheticTileOptions& options) {
  SyntheticTile out;
  Tile& tile = out.tile;
  tile.id = "synthetic";
  tile.bands = options.bands;
  tile.height = options.height;
  tile.width = options.width;
  tile.data.resize(options.bands * options.height * options.width);
  out.material.resize(options.height * options.width);

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> gauss(0.0, options.noise);
  std::vector<double> tex(options.height * options.width);
  for (std::size_t r = 0; r < options.height; ++r) {
    for (std::size_t c = 0; c < options.width; ++c) {
      const int m = layout_material(options.layout, r, c, options.height, options.width);
      out.material[r * options.width + c] = static_cast<std::uint8_t>(m);
      tex[r * options.width + c] = texture(m, r, c, options.seed);
    }
  }
  for (std::size_t b = 0; b < options.bands; ++b) {
    for (std::size_t i = 0; i < options.height * options.width; ++i) {
      const int m = out.material[i];
      const double base = material_reflectance(m, b);
      const double v = base * (1.0 + 0.25 * tex[i]) + gauss(rng) * base;
      tile.data[b * options.height * options.width + i] = static_cast<float>(std::max(0.0, v));
    }
  }
  return out;
}

}  // namespace terralabel::ingest
