#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "terralabel/ingest/chips.hpp"
#include "terralabel/ingest/raster.hpp"

namespace terralabel::clustering {

/// Row-major n x dims pixel spectra.
struct Samples {
  std::size_t dims = 0;
  std::vector<float> values;

  std::size_t size() const { return dims == 0 ? 0 : values.size() / dims; }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(values).subspan(i * dims, dims);
  }
};

/// Number of samples taken from `pixels` pixels at the given stride: ceil(pixels / stride).
std::size_t subsample_count(std::size_t pixels, std::size_t stride);

/// Spectra of the pixels at flattened (row-major) indices 0, stride, 2*stride, ...
Samples subsample_pixels(const ingest::Tile& tile, std::size_t stride = 56);

/// Same sampling over a sequence of chips, treating their pixels as one
/// concatenated stream (the stride carries across chip boundaries).
class ChipSampler {
 public:
  ChipSampler(std::size_t bands, std::size_t stride) : stride_(stride) { samples_.dims = bands; }
  void add(const ingest::Chip& chip);
  const Samples& samples() const { return samples_; }

 private:
  std::size_t stride_;
  std::size_t offset_ = 0;  // index within the current stride window
  Samples samples_;
};

struct FcmOptions {
  std::size_t clusters = 8;
  double m = 2.0;
  double tolerance = 1e-5;  // max centroid shift, in standardised units
  std::size_t max_iter = 300;
  std::uint64_t seed = 42;
};

struct FcmModel {
  std::size_t clusters = 0;
  std::size_t dims = 0;
  double m = 2.0;
  double tolerance = 1e-5;
  std::size_t max_iter = 300;
  std::uint64_t seed = 42;
  std::vector<double> centroids;  // clusters x dims, standardised space
  std::vector<double> band_mean;
  std::vector<double> band_std;
  std::vector<double> objective;  // J(u_t, c_t) per iteration
  std::size_t iterations = 0;

  std::span<const double> centroid(std::size_t c) const {
    return std::span<const double>(centroids).subspan(c * dims, dims);
  }
};

/// Per-pixel memberships, pixel-major: u[pixel * clusters + c].
struct MembershipField {
  std::size_t pixels = 0;
  std::size_t clusters = 0;
  std::vector<float> u;

  float at(std::size_t pixel, std::size_t c) const { return u[pixel * clusters + c]; }
  /// Channel-major copy [clusters][pixels], the layout used as network targets.
  std::vector<float> planes() const;
  /// Index of the largest membership per pixel.
  std::vector<std::uint32_t> argmax() const;
};

/// Memberships of one point given squared distances to every centroid:
/// u_c = 1 / sum_k (d_c / d_k)^(2 / (m - 1)). A zero distance yields a one-hot row.
void memberships_from_sq_distances(std::span<const double> sq_dist, double m, std::span<double> out);

FcmModel fcm_fit(const Samples& samples, const FcmOptions& options);

/// Memberships for band-sequential pixels [bands][pixels] using frozen centroids.
MembershipField fcm_predict(const FcmModel& model, std::span<const float> band_sequential,
                            std::size_t bands, std::size_t pixels);
MembershipField fcm_predict(const FcmModel& model, const ingest::Tile& tile);
MembershipField fcm_predict(const FcmModel& model, const ingest::Chip& chip);

/// sum_i sum_c u_ic^m |x_i - c_c|^2 over standardised samples.
double fcm_objective(const FcmModel& model, const Samples& samples);

void save_model(const std::filesystem::path& path, const FcmModel& model);
FcmModel load_model(const std::filesystem::path& path);

}  // namespace terralabel::clustering
