#include "terralabel/clustering/fcm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <random>

#include "terralabel/common/binary_io.hpp"
#include "terralabel/common/error.hpp"
#include "terralabel/common/log.hpp"
#include "terralabel/common/parallel.hpp"

namespace terralabel::clustering {

namespace {

// Fixed-size blocks keep the per-block partial sums, and hence the fitted
// centroids, independent of how many threads ran.
constexpr std::size_t kBlock = 4096;

double sq_distance(const double* a, const double* b, std::size_t dims) {
  double s = 0.0;
  for (std::size_t d = 0; d < dims; ++d) {
    const double t = a[d] - b[d];
    s += t * t;
  }
  return s;
}

std::vector<double> standardise(const Samples& samples, std::span<const double> mean,
                                std::span<const double> std) {
  const std::size_t n = samples.size(), dims = samples.dims;
  std::vector<double> z(n * dims);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dims; ++d) {
      const float v = samples.values[i * dims + d];
      if (!std::isfinite(v)) throw InvalidArgument("fcm: non-finite value in sample " + std::to_string(i));
      z[i * dims + d] = (v - mean[d]) / std[d];
    }
  }
  return z;
}

std::vector<double> kmeanspp(const std::vector<double>& z, std::size_t n, std::size_t dims,
                             std::size_t clusters, std::mt19937_64& rng) {
  std::vector<double> centroids;
  centroids.reserve(clusters * dims);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t first = pick(rng);
  centroids.insert(centroids.end(), &z[first * dims], &z[first * dims] + dims);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < clusters; ++c) {
    const double* last = &centroids[(c - 1) * dims];
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], sq_distance(&z[i * dims], last, dims));
      total += nearest[i];
    }
    std::size_t chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      for (chosen = 0; chosen + 1 < n; ++chosen) {
        target -= nearest[chosen];
        if (target <= 0.0 && nearest[chosen] > 0.0) break;
      }
    } else {
      chosen = pick(rng);  // every sample already coincides with a centroid
    }
    centroids.insert(centroids.end(), &z[chosen * dims], &z[chosen * dims] + dims);
  }
  return centroids;
}

}  // namespace

std::size_t subsample_count(std::size_t pixels, std::size_t stride) {
  if (stride == 0) throw InvalidArgument("subsample stride must be >= 1");
  return (pixels + stride - 1) / stride;
}

Samples subsample_pixels(const ingest::Tile& tile, std::size_t stride) {
  const std::size_t pixels = tile.height * tile.width;
  const std::size_t n = subsample_count(pixels, stride);
  Samples s;
  s.dims = tile.bands;
  s.values.resize(n * tile.bands);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t b = 0; b < tile.bands; ++b) {
      s.values[i * tile.bands + b] = tile.data[b * pixels + i * stride];
    }
  }
  return s;
}

void ChipSampler::add(const ingest::Chip& chip) {
  if (chip.bands != samples_.dims) throw InvalidArgument("ChipSampler: band count mismatch");
  if (stride_ == 0) throw InvalidArgument("subsample stride must be >= 1");
  const std::size_t pixels = chip.pixels();
  std::size_t p = offset_ == 0 ? 0 : stride_ - offset_;
  for (; p < pixels; p += stride_) {
    for (std::size_t b = 0; b < chip.bands; ++b) samples_.values.push_back(chip.data[b * pixels + p]);
  }
  offset_ = (offset_ + pixels) % stride_;
}

std::vector<float> MembershipField::planes() const {
  std::vector<float> out(u.size());
  for (std::size_t p = 0; p < pixels; ++p)
    for (std::size_t c = 0; c < clusters; ++c) out[c * pixels + p] = u[p * clusters + c];
  return out;
}

std::vector<std::uint32_t> MembershipField::argmax() const {
  std::vector<std::uint32_t> out(pixels);
  for (std::size_t p = 0; p < pixels; ++p) {
    const float* row = &u[p * clusters];
    out[p] = static_cast<std::uint32_t>(std::max_element(row, row + clusters) - row);
  }
  return out;
}

void memberships_from_sq_distances(std::span<const double> sq_dist, double m, std::span<double> out) {
  const std::size_t k = sq_dist.size();
  double dmin = std::numeric_limits<double>::infinity();
  std::size_t at_min = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (sq_dist[c] < dmin) {
      dmin = sq_dist[c];
      at_min = c;
    }
  }
  if (dmin <= 0.0) {
    std::fill(out.begin(), out.end(), 0.0);
    out[at_min] = 1.0;
    return;
  }
  // Scaling by the smallest distance keeps every ratio in (0, 1].
  const double p = 1.0 / (m - 1.0);
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    out[c] = std::pow(dmin / sq_dist[c], p);
    total += out[c];
  }
  for (std::size_t c = 0; c < k; ++c) out[c] /= total;
}

FcmModel fcm_fit(const Samples& samples, const FcmOptions& options) {
  const std::size_t n = samples.size(), dims = samples.dims, k = options.clusters;
  if (k < 1) throw InvalidArgument("fcm: need at least one cluster");
  if (n < k) {
    throw InvalidArgument("fcm: " + std::to_string(n) + " samples for " + std::to_string(k) + " clusters");
  }
  if (!(options.m > 1.0)) throw InvalidArgument("fcm: fuzzifier m must exceed 1");

  FcmModel model;
  model.clusters = k;
  model.dims = dims;
  model.m = options.m;
  model.tolerance = options.tolerance;
  model.max_iter = options.max_iter;
  model.seed = options.seed;
  model.band_mean.assign(dims, 0.0);
  model.band_std.assign(dims, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dims; ++d) model.band_mean[d] += samples.values[i * dims + d];
  for (auto& v : model.band_mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dims; ++d) {
      const double t = samples.values[i * dims + d] - model.band_mean[d];
      model.band_std[d] += t * t;
    }
  for (auto& v : model.band_std) v = std::max(std::sqrt(v / static_cast<double>(n)), ingest::kStdFloor);

  const std::vector<double> z = standardise(samples, model.band_mean, model.band_std);
  std::mt19937_64 rng(options.seed);
  model.centroids = kmeanspp(z, n, dims, k, rng);

  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  std::vector<std::vector<double>> num(blocks), den(blocks);
  std::vector<double> block_objective(blocks);
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    // Membership step for the current centroids, accumulating the next
    // centroids' numerators/denominators and the objective J(u_t, c_t).
    parallel_for(blocks, [&](std::size_t blk) {
      std::vector<double>& nb = num[blk];
      std::vector<double>& db = den[blk];
      nb.assign(k * dims, 0.0);
      db.assign(k, 0.0);
      double j = 0.0;
      std::vector<double> dist(k), u(k);
      const std::size_t end = std::min(n, (blk + 1) * kBlock);
      for (std::size_t i = blk * kBlock; i < end; ++i) {
        const double* x = &z[i * dims];
        for (std::size_t c = 0; c < k; ++c) dist[c] = sq_distance(x, &model.centroids[c * dims], dims);
        memberships_from_sq_distances(dist, model.m, u);
        for (std::size_t c = 0; c < k; ++c) {
          const double w = std::pow(u[c], model.m);
          j += w * dist[c];
          db[c] += w;
          for (std::size_t d = 0; d < dims; ++d) nb[c * dims + d] += w * x[d];
        }
      }
      block_objective[blk] = j;
    });
    double j = 0.0;
    std::vector<double> total_num(k * dims, 0.0), total_den(k, 0.0);
    for (std::size_t blk = 0; blk < blocks; ++blk) {
      j += block_objective[blk];
      for (std::size_t c = 0; c < k; ++c) total_den[c] += den[blk][c];
      for (std::size_t e = 0; e < k * dims; ++e) total_num[e] += num[blk][e];
    }
    model.objective.push_back(j);
    model.iterations = it + 1;

    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (total_den[c] <= 0.0) continue;  // an empty cluster keeps its centroid
      double s = 0.0;
      for (std::size_t d = 0; d < dims; ++d) {
        const double next = total_num[c * dims + d] / total_den[c];
        const double t = next - model.centroids[c * dims + d];
        s += t * t;
        model.centroids[c * dims + d] = next;
      }
      shift = std::max(shift, std::sqrt(s));
    }
    if (shift < options.tolerance) break;
  }
  log::debug("fcm: " + std::to_string(model.iterations) + " iterations, J=" +
             std::to_string(model.objective.back()));
  return model;
}

MembershipField fcm_predict(const FcmModel& model, std::span<const float> band_sequential,
                            std::size_t bands, std::size_t pixels) {
  if (bands != model.dims) {
    throw InvalidArgument("fcm_predict: input has " + std::to_string(bands) + " bands, model expects " +
                          std::to_string(model.dims));
  }
  if (band_sequential.size() != bands * pixels) throw InvalidArgument("fcm_predict: payload size mismatch");
  MembershipField field;
  field.pixels = pixels;
  field.clusters = model.clusters;
  field.u.resize(pixels * model.clusters);
  const std::size_t k = model.clusters;
  parallel_for((pixels + kBlock - 1) / kBlock, [&](std::size_t blk) {
    std::vector<double> x(bands), dist(k), u(k);
    const std::size_t end = std::min(pixels, (blk + 1) * kBlock);
    for (std::size_t p = blk * kBlock; p < end; ++p) {
      for (std::size_t b = 0; b < bands; ++b) {
        x[b] = (band_sequential[b * pixels + p] - model.band_mean[b]) / model.band_std[b];
      }
      for (std::size_t c = 0; c < k; ++c) dist[c] = sq_distance(x.data(), &model.centroids[c * bands], bands);
      memberships_from_sq_distances(dist, model.m, u);
      for (std::size_t c = 0; c < k; ++c) field.u[p * k + c] = static_cast<float>(u[c]);
    }
  });
  return field;
}

MembershipField fcm_predict(const FcmModel& model, const ingest::Tile& tile) {
  return fcm_predict(model, tile.data, tile.bands, tile.height * tile.width);
}

MembershipField fcm_predict(const FcmModel& model, const ingest::Chip& chip) {
  return fcm_predict(model, chip.data, chip.bands, chip.pixels());
}

double fcm_objective(const FcmModel& model, const Samples& samples) {
  const std::vector<double> z = standardise(samples, model.band_mean, model.band_std);
  const std::size_t k = model.clusters, dims = model.dims;
  std::vector<double> dist(k), u(k);
  double j = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t c = 0; c < k; ++c) dist[c] = sq_distance(&z[i * dims], &model.centroids[c * dims], dims);
    memberships_from_sq_distances(dist, model.m, u);
    for (std::size_t c = 0; c < k; ++c) j += std::pow(u[c], model.m) * dist[c];
  }
  return j;
}

void save_model(const std::filesystem::path& path, const FcmModel& model) {
  nlohmann::json centroids = nlohmann::json::array();
  for (std::size_t c = 0; c < model.clusters; ++c) {
    auto row = model.centroid(c);
    centroids.push_back(std::vector<double>(row.begin(), row.end()));
  }
  nlohmann::json j = {{"C", model.clusters},
                      {"m", model.m},
                      {"centroids", std::move(centroids)},
                      {"band_mean", model.band_mean},
                      {"band_std", model.band_std},
                      {"seed", model.seed},
                      {"tolerance", model.tolerance},
                      {"max_iter", model.max_iter},
                      {"iterations", model.iterations},
                      {"objective", model.objective}};
  io::write_text_file(path, j.dump(2));
}

FcmModel load_model(const std::filesystem::path& path) {
  FcmModel model;
  try {
    const auto j = nlohmann::json::parse(io::read_text_file(path));
    model.clusters = j.at("C").get<std::size_t>();
    model.m = j.at("m").get<double>();
    model.band_mean = j.at("band_mean").get<std::vector<double>>();
    model.band_std = j.at("band_std").get<std::vector<double>>();
    model.seed = j.value("seed", std::uint64_t{42});
    model.tolerance = j.value("tolerance", 1e-5);
    model.max_iter = j.value("max_iter", std::size_t{300});
    model.iterations = j.value("iterations", std::size_t{0});
    model.objective = j.value("objective", std::vector<double>{});
    model.dims = model.band_mean.size();
    for (const auto& row : j.at("centroids")) {
      auto v = row.get<std::vector<double>>();
      if (v.size() != model.dims) throw FormatError("centroid width differs from band count");
      model.centroids.insert(model.centroids.end(), v.begin(), v.end());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("fcm model " + path.string() + ": " + e.what());
  }
  if (model.centroids.size() != model.clusters * model.dims) {
    throw FormatError("fcm model " + path.string() + ": expected " + std::to_string(model.clusters) +
                      " centroids");
  }
  return model;
}

}  // namespace terralabel::clustering
