#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace terralabel::evaluation {

inline constexpr std::size_t kGreyLevels = 32;
inline constexpr std::size_t kLbpBins = 10;  // rotation-invariant uniform codes 0..8, plus non-uniform

/// Quantised single-band image patch, row-major, values in [0, levels).
struct GreyPatch {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;

  std::uint8_t at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
};

/// Symmetric co-occurrence counts over offsets (0, 1) and (1, 0), normalised
/// to sum 1: levels x levels, row-major. Throws for a 1-pixel patch.
std::vector<double> glcm_matrix(const GreyPatch& patch, std::size_t levels = kGreyLevels);

/// contrast / (levels - 1)^2, homogeneity, energy (sqrt of angular second moment); each in [0, 1].
struct GlcmStats {
  double contrast = 0;
  double homogeneity = 0;
  double energy = 0;
};
GlcmStats glcm_stats(std::span<const double> matrix, std::size_t levels = kGreyLevels);

/// Sum of absolute statistic differences, in [0, 3]. Lower is more similar.
double glcm_dissimilarity(const GlcmStats& a, const GlcmStats& b);
double glcm_dissimilarity(const GreyPatch& a, const GreyPatch& b);

/// P = 8, R = 1 code over the 8-connected neighbours, borders clamped:
/// number of neighbours >= centre when the circular pattern has at most two
/// 0/1 transitions, else 9.
std::uint8_t lbp_code(const GreyPatch& patch, std::size_t r, std::size_t c);

/// Normalised histogram of lbp_code over the patch. Throws for a 1-pixel patch.
std::array<double, kLbpBins> lbp_histogram(const GreyPatch& patch);

/// Histogram intersection, in [0, 1]. Higher is more similar.
double lbp_similarity(std::span<const double> a, std::span<const double> b);
double lbp_similarity(const GreyPatch& a, const GreyPatch& b);

/// Global SSIM of paired samples: means, population variances and covariance,
/// c1 = (0.01 L)^2, c2 = (0.03 L)^2.
double ssim(std::span<const double> a, std::span<const double> b, double dynamic_range);

/// Spectral angle in [0, pi]; NaN when either spectrum has zero norm.
double sam(std::span<const double> a, std::span<const double> b);

}  // namespace terralabel::evaluation
