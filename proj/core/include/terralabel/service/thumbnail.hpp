#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "terralabel/ingest/chips.hpp"

namespace terralabel::service {

/// Zero-based band indices of the default RGB composite (B4, B3, B2).
inline constexpr std::array<std::size_t, 3> kDefaultRgbBands = {3, 2, 1};

/// p-th percentile with linear interpolation between order statistics at p/100 (n - 1).
double percentile(std::span<const float> values, double p);

/// Maps the 2nd/98th percentiles to 0/255, clamping outside; a flat band maps to 128.
std::vector<std::uint8_t> stretch_band(std::span<const float> band, double low_pct = 2.0, double high_pct = 98.0);

/// Interleaved RGB, size x size x 3.
std::vector<std::uint8_t> render_rgb(const ingest::Chip& chip,
                                     const std::array<std::size_t, 3>& bands = kDefaultRgbBands);

std::vector<std::uint8_t> thumbnail_png(const ingest::Chip& chip,
                                        const std::array<std::size_t, 3>& bands = kDefaultRgbBands);

}  // namespace terralabel::service
