#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace terralabel::service {

/// 8-bit PNG of interleaved pixels; channels 1 (grey) or 3 (RGB).
std::vector<std::uint8_t> encode_png(std::span<const std::uint8_t> pixels, std::size_t width, std::size_t height,
                                     std::size_t channels);

struct DecodedPng {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;  // interleaved, 8-bit
};

DecodedPng decode_png(std::span<const std::uint8_t> bytes);

}  // namespace terralabel::service
