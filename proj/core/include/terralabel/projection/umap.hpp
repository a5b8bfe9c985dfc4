#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "terralabel/matching/similarity.hpp"

namespace terralabel::projection {

/// k nearest other points per point, nearest first; equal distances go to the lower id.
struct Neighbours {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> index;  // n x k
  std::vector<double> distance;      // n x k
};

/// From a row-major n x n distance matrix (diagonal ignored). Throws when k >= n.
Neighbours knn_from_distances(std::span<const double> distances, std::size_t n, std::size_t k);

/// Euclidean distances between rows of an n x dim matrix.
std::vector<double> euclidean_distances(std::span<const float> vectors, std::size_t n, std::size_t dim);

/// d = 1 - s clamped to [0, 2].
std::vector<double> distances_from_similarity(const matching::SimilarityMatrix& sim);

struct SmoothKnn {
  std::vector<double> rho;    // nearest-neighbour distance
  std::vector<double> sigma;  // sum_j exp(-max(0, d_ij - rho_i) / sigma_i) = log2(k)
  std::size_t clamped = 0;    // points whose bisection did not converge
};

SmoothKnn smooth_knn(const Neighbours& nn);

/// Symmetric fuzzy graph; each undirected edge once with i < j.
struct FuzzyGraph {
  std::size_t n = 0;
  std::vector<std::uint32_t> head;
  std::vector<std::uint32_t> tail;
  std::vector<double> weight;  // probabilistic union a + b - ab, in (0, 1]
};

FuzzyGraph fuzzy_graph(const Neighbours& nn, const SmoothKnn& calibration);
FuzzyGraph fuzzy_graph(const Neighbours& nn);

/// Least-squares fit of 1 / (1 + a x^(2b)) to the min_dist-offset exponential.
struct CurveParams {
  double a = 0;
  double b = 0;
};
CurveParams fit_ab(double min_dist, double spread = 1.0);

struct UmapOptions {
  std::size_t n_neighbors = 15;
  double min_dist = 0.1;
  std::size_t epochs = 200;
  std::uint64_t seed = 42;
  std::size_t negative_samples = 5;
};

/// Gaussian init (sigma 1e-2), then attractive/repulsive SGD with negative sampling. n x 2.
std::vector<double> optimize_layout(const FuzzyGraph& graph, const UmapOptions& options);
/// Same SGD from a given n x 2 starting layout.
std::vector<double> optimize_layout(const FuzzyGraph& graph, const UmapOptions& options, std::vector<double> initial);

enum class Level { chip, segment };

struct Projection2D {
  Level level = Level::chip;
  UmapOptions params;
  std::vector<std::string> ids;
  std::vector<double> coords;  // n x 2

  std::size_t size() const { return ids.size(); }
};

/// Full pipeline on a distance matrix. n_neighbors is capped at n - 1.
Projection2D umap_from_distances(std::vector<std::string> ids, std::span<const double> distances,
                                 const UmapOptions& options, Level level);
Projection2D umap_from_similarity(const matching::SimilarityMatrix& sim, const UmapOptions& options = {});
Projection2D umap_from_vectors(std::vector<std::string> ids, std::span<const float> vectors, std::size_t dim,
                               const UmapOptions& options = {}, Level level = Level::segment);

/// Mean fraction of each point's k nearest 2-D neighbours that share its label.
double neighbour_purity(std::span<const double> coords, std::span<const int> labels, std::size_t k);

/// Trustworthiness of a 2-D layout against high-dimensional distances.
double trustworthiness(std::span<const double> distances, std::span<const double> coords, std::size_t k);

/// JSON {level, params, points: [{id, x, y}]}.
std::string projection_json(const Projection2D& projection);
void save_projection(const std::filesystem::path& path, const Projection2D& projection);
Projection2D load_projection(const std::filesystem::path& path);

}  // namespace terralabel::projection
