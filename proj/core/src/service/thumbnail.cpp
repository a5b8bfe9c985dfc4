#include "terralabel/service/thumbnail.hpp"

#include <algorithm>
#include <cmath>

#include "terralabel/common/error.hpp"
#include "terralabel/service/png.hpp"

namespace terralabel::service {

double percentile(std::span<const float> values, double p) {
  if (values.empty()) throw InvalidArgument("percentile: no values");
  std::vector<float> v(values.begin(), values.end());
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * double(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  std::nth_element(v.begin(), v.begin() + long(lo), v.end());
  const double a = v[lo];
  if (hi == lo) return a;
  const double b = *std::min_element(v.begin() + long(lo) + 1, v.end());
  return a + (pos - double(lo)) * (b - a);
}

std::vector<std::uint8_t> stretch_band(std::span<const float> band, double low_pct, double high_pct) {
  const double lo = percentile(band, low_pct), hi = percentile(band, high_pct);
  std::vector<std::uint8_t> out(band.size(), 128);
  if (!(hi > lo)) return out;
  const double scale = 255.0 / (hi - lo);
  for (std::size_t i = 0; i < band.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::clamp(std::lround((band[i] - lo) * scale), 0L, 255L));
  }
  return out;
}

std::vector<std::uint8_t> render_rgb(const ingest::Chip& chip, const std::array<std::size_t, 3>& bands) {
  std::vector<std::uint8_t> rgb(chip.pixels() * 3);
  for (std::size_t c = 0; c < 3; ++c) {
    if (bands[c] >= chip.bands) throw InvalidArgument("thumbnail: band " + std::to_string(bands[c]) + " out of range");
    const auto s = stretch_band(chip.band(bands[c]));
    for (std::size_t p = 0; p < s.size(); ++p) rgb[p * 3 + c] = s[p];
  }
  return rgb;
}

std::vector<std::uint8_t> thumbnail_png(const ingest::Chip& chip, const std::array<std::size_t, 3>& bands) {
  return encode_png(render_rgb(chip, bands), chip.size, chip.size, 3);
}

}  // namespace terralabel::service
