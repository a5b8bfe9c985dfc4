#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "terralabel/matching/hungarian.hpp"

namespace terralabel::matching {

/// Per-segment feature vectors of one chip.
struct SegmentEmbedding {
  std::string chip_id;
  std::size_t nodes = 0;
  std::size_t dim = 0;
  std::vector<float> values;  // nodes x dim

  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(values).subspan(i * dim, dim);
  }
};

/// Cosine of two vectors; 0 when either has zero norm. cosine(x, x) == 1 exactly.
double cosine(std::span<const float> a, std::span<const float> b);

/// Hungarian alignment on cost 1 - cosine, then the mean cosine over the
/// min(S_A, S_B) matched pairs.
double chip_similarity(const SegmentEmbedding& a, const SegmentEmbedding& b);

/// Also returns the matching used.
double chip_similarity(const SegmentEmbedding& a, const SegmentEmbedding& b, Assignment& assignment);

struct SimilarityMatrix {
  std::vector<std::string> ids;
  std::vector<double> values;  // n x n, symmetric, unit diagonal

  std::size_t size() const { return ids.size(); }
  double at(std::size_t i, std::size_t j) const { return values[i * ids.size() + j]; }
};

/// Every unordered pair once, computed as (lower id, higher id) and mirrored.
/// `pairs_computed`, when given, receives the number of chip_similarity calls.
SimilarityMatrix similarity_matrix(std::span<const SegmentEmbedding> embeddings,
                                   std::size_t* pairs_computed = nullptr);

/// "SIMM", u32 n, n x (u32 length, bytes) ids, upper triangle (with diagonal) as f32.
void save_similarity(const std::filesystem::path& path, const SimilarityMatrix& sim);
SimilarityMatrix load_similarity(const std::filesystem::path& path);

}  // namespace terralabel::matching
