#include "terralabel/graphs/graph.hpp"

#include <sodium.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <nlohmann/json.hpp>
#include <numeric>

#include "terralabel/common/binary_io.hpp"
#include "terralabel/common/error.hpp"

namespace terralabel::graphs {

namespace {

constexpr int kBase64Variant = sodium_base64_VARIANT_ORIGINAL;

std::string encode_floats(const std::vector<float>& values) {
  std::vector<std::uint8_t> bytes(values.size() * sizeof(float));
  std::memcpy(bytes.data(), values.data(), bytes.size());
  return base64_encode(bytes);
}

std::vector<float> decode_floats(const std::string& text, std::size_t expected) {
  const auto bytes = base64_decode(text);
  if (bytes.size() != expected * sizeof(float)) {
    throw FormatError("graph: decoded " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(expected * sizeof(float)));
  }
  std::vector<float> values(expected);
  std::memcpy(values.data(), bytes.data(), bytes.size());
  return values;
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(sodium_base64_ENCODED_LEN(bytes.size(), kBase64Variant), '\0');
  sodium_bin2base64(out.data(), out.size(), bytes.data(), bytes.size(), kBase64Variant);
  out.resize(std::strlen(out.c_str()));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  std::vector<std::uint8_t> out(text.size() / 4 * 3 + 3);
  std::size_t len = 0;
  if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), nullptr, &len, nullptr,
                        kBase64Variant) != 0) {
    throw FormatError("invalid base64 payload");
  }
  out.resize(len);
  return out;
}

std::vector<Edge> knn_edges(std::span<const double> centroids, std::size_t k) {
  if (k < 1) throw InvalidArgument("knn_edges: K must be >= 1");
  const std::size_t s = centroids.size() / 2;
  if (s < 2) throw InvalidArgument("knn_edges: need at least 2 segments, got " + std::to_string(s));
  const std::size_t keep = std::min(k, s - 1);
  std::vector<Edge> edges;
  edges.reserve(s * keep);
  std::vector<std::pair<double, std::uint32_t>> cand(s - 1);
  for (std::size_t i = 0; i < s; ++i) {
    std::size_t n = 0;
    for (std::size_t j = 0; j < s; ++j) {
      if (j == i) continue;
      const double dr = centroids[2 * i] - centroids[2 * j], dc = centroids[2 * i + 1] - centroids[2 * j + 1];
      cand[n++] = {dr * dr + dc * dc, static_cast<std::uint32_t>(j)};
    }
    // Pairs compare by distance, then id: the tie rule.
    std::partial_sort(cand.begin(), cand.begin() + long(keep), cand.end());
    for (std::size_t t = 0; t < keep; ++t) edges.push_back({static_cast<std::uint32_t>(i), cand[t].second});
  }
  return edges;
}

SegmentGraph build_graph(std::string chip_id, const superpixels::SegmentMap& seg, std::vector<float> features,
                         std::size_t feature_dim, std::size_t k) {
  if (features.size() != seg.size() * feature_dim) {
    throw ShapeError("build_graph: " + std::to_string(features.size()) + " feature values for " +
                     std::to_string(seg.size()) + " segments of width " + std::to_string(feature_dim));
  }
  for (float v : features) {
    if (!std::isfinite(v)) throw InvalidArgument("build_graph: non-finite node feature in chip " + chip_id);
  }
  SegmentGraph g;
  g.chip_id = std::move(chip_id);
  g.nodes = seg.size();
  g.k = k;
  g.feature_dim = feature_dim;
  g.features = std::move(features);
  for (const auto& s : seg.segments) {
    g.centroids.push_back(s.centroid_row);
    g.centroids.push_back(s.centroid_col);
  }
  g.edges = knn_edges(g.centroids, k);
  return g;
}

void save_graph(const std::filesystem::path& path, const SegmentGraph& g) {
  nlohmann::json j = {{"chip_id", g.chip_id},
                      {"S", g.nodes},
                      {"K", g.k},
                      {"feature_dim", g.feature_dim},
                      {"edges", g.edges},
                      {"centroids", g.centroids},
                      {"features", encode_floats(g.features)}};
  if (g.target_dim > 0) {
    j["target_dim"] = g.target_dim;
    j["targets"] = encode_floats(g.targets);
  }
  io::write_text_file(path, j.dump());
}

SegmentGraph load_graph(const std::filesystem::path& path) {
  SegmentGraph g;
  try {
    const auto j = nlohmann::json::parse(io::read_text_file(path));
    g.chip_id = j.at("chip_id").get<std::string>();
    g.nodes = j.at("S").get<std::size_t>();
    g.k = j.at("K").get<std::size_t>();
    g.feature_dim = j.value("feature_dim", std::size_t{64});
    g.edges = j.at("edges").get<std::vector<Edge>>();
    g.centroids = j.value("centroids", std::vector<double>{});
    g.features = decode_floats(j.at("features").get<std::string>(), g.nodes * g.feature_dim);
    g.target_dim = j.value("target_dim", std::size_t{0});
    if (g.target_dim > 0) g.targets = decode_floats(j.at("targets").get<std::string>(), g.nodes * g.target_dim);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("graph " + path.string() + ": " + e.what());
  }
  for (const auto& e : g.edges) {
    if (e[0] >= g.nodes || e[1] >= g.nodes) throw FormatError("graph " + path.string() + ": edge out of range");
  }
  return g;
}

}  // namespace terralabel::graphs
