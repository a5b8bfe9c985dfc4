#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "terralabel/superpixels/slic.hpp"

namespace terralabel::graphs {

using Edge = std::array<std::uint32_t, 2>;  // (i, j): j is one of i's K nearest segments

/// Segments of one chip as graph nodes. Edges are directed and exclude
/// self-loops; message passing adds the loop (i aggregates over N(i) and i).
struct SegmentGraph {
  std::string chip_id;
  std::size_t nodes = 0;
  std::size_t k = 0;
  std::size_t feature_dim = 0;
  std::vector<float> features;   // nodes x feature_dim
  std::vector<Edge> edges;       // grouped by i, nearest first
  std::vector<double> centroids; // nodes x 2 (row, col), pixel coordinates
  std::vector<float> targets;    // nodes x target_dim; optional soft labels
  std::size_t target_dim = 0;

  std::span<const float> feature(std::size_t i) const {
    return std::span<const float>(features).subspan(i * feature_dim, feature_dim);
  }
};

/// Each node's min(K, S-1) nearest other centroids by Euclidean distance;
/// equal distances go to the lower id.
std::vector<Edge> knn_edges(std::span<const double> centroids, std::size_t k);

SegmentGraph build_graph(std::string chip_id, const superpixels::SegmentMap& seg, std::vector<float> features,
                         std::size_t feature_dim, std::size_t k = 8);

/// JSON {chip_id, S, K, edges, features (base64 f32 LE), ...}.
void save_graph(const std::filesystem::path& path, const SegmentGraph& graph);
SegmentGraph load_graph(const std::filesystem::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

}  // namespace terralabel::graphs
