#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "terralabel/ingest/chips.hpp"

namespace terralabel::superpixels {

struct BoundingBox {
  std::size_t row0 = 0, col0 = 0;  // inclusive
  std::size_t row1 = 0, col1 = 0;  // exclusive

  std::size_t height() const { return row1 - row0; }
  std::size_t width() const { return col1 - col0; }
};

struct Segment {
  std::uint32_t id = 0;
  std::size_t pixel_count = 0;
  double centroid_row = 0.0;
  double centroid_col = 0.0;
  BoundingBox bbox;
};

/// Per-pixel segment ids (dense 0..S-1, row-major) plus per-segment metadata.
struct SegmentMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> labels;
  std::vector<Segment> segments;

  std::size_t size() const { return segments.size(); }
  std::uint32_t at(std::size_t row, std::size_t col) const { return labels[row * width + col]; }
  /// Flattened pixel indices per segment, each list ascending.
  std::vector<std::vector<std::uint32_t>> pixel_lists() const;
};

struct SlicOptions {
  std::size_t n_segments = 500;
  double compactness = 10.0;
  std::size_t iterations = 10;
  double min_size_fraction = 0.25;  // of the grid cell area, before merging
};

/// First `components` principal components of the chip's bands, each scaled
/// to unit variance: [components][pixels]. Component signs are fixed so the
/// largest-magnitude loading is positive.
std::vector<float> pca_colour(const ingest::Chip& chip, std::size_t components = 3);

/// SLIC on an arbitrary channel stack [channels][height][width].
SegmentMap slic(std::span<const float> planes, std::size_t channels, std::size_t height, std::size_t width,
                const SlicOptions& options = {});

/// SLIC on the chip's 3-component PCA colour space.
SegmentMap slic(const ingest::Chip& chip, const SlicOptions& options = {});

/// Relabels ids densely in raster order of first appearance and recomputes metadata.
SegmentMap finalize_labels(std::vector<std::uint32_t> labels, std::size_t height, std::size_t width);

/// Mean of every channel of maps [channels][height][width] over each segment: S x channels.
std::vector<float> segment_means(const SegmentMap& seg, std::span<const float> maps, std::size_t channels);

/// "SEGM" u16 version, u16 height, u16 width, u32 segments, u32 labels, plus
/// a JSON sidecar (`<path>.json`) with per-segment area, centroid and bbox.
void save_segment_map(const std::filesystem::path& path, const SegmentMap& seg);
SegmentMap load_segment_map(const std::filesystem::path& path);

}  // namespace terralabel::superpixels
