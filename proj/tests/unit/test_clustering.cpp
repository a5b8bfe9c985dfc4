#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "terralabel/clustering/fcm.hpp"
#include "terralabel/common/error.hpp"
#include "temp_dir.hpp"

using namespace terralabel;
using namespace terralabel::clustering;

namespace {

// Hubert & Arabie adjusted Rand index from the contingency table.
double adjusted_rand(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<int, int>, double> nij;
  std::map<int, double> ai, bj;
  for (std::size_t i = 0; i < a.size(); ++i) {
    nij[{a[i], b[i]}] += 1;
    ai[a[i]] += 1;
    bj[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1) / 2; };
  double index = 0, sa = 0, sb = 0;
  for (auto& [k, v] : nij) index += c2(v);
  for (auto& [k, v] : ai) sa += c2(v);
  for (auto& [k, v] : bj) sb += c2(v);
  const double expected = sa * sb / c2(double(a.size()));
  const double max_index = 0.5 * (sa + sb);
  return (index - expected) / (max_index - expected);
}

struct Blobs {
  Samples samples;
  std::vector<int> labels;
};

Blobs gaussian_blobs(std::size_t per_cluster, std::size_t clusters, std::size_t dims, double spread,
                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> centre(-spread, spread);
  std::vector<std::vector<double>> centres(clusters, std::vector<double>(dims));
  for (auto& c : centres)
    for (auto& v : c) v = centre(rng);
  Blobs out;
  out.samples.dims = dims;
  for (std::size_t k = 0; k < clusters; ++k) {
    for (std::size_t i = 0; i < per_cluster; ++i) {
      for (std::size_t d = 0; d < dims; ++d) out.samples.values.push_back(float(centres[k][d] + noise(rng)));
      out.labels.push_back(int(k));
    }
  }
  return out;
}

std::vector<int> hard_labels(const FcmModel& model, const Samples& s) {
  // Predict over a [dims][n] band-sequential view of the samples.
  const std::size_t n = s.size();
  std::vector<float> bs(n * s.dims);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < s.dims; ++d) bs[d * n + i] = s.values[i * s.dims + d];
  auto field = fcm_predict(model, bs, s.dims, n);
  auto am = field.argmax();
  return std::vector<int>(am.begin(), am.end());
}

}  // namespace

TEST_CASE("subsample_pixels") {
  ingest::Tile t;
  t.bands = 2;
  t.height = 10;
  t.width = 10;
  t.data.resize(200);
  for (std::size_t i = 0; i < 200; ++i) t.data[i] = float(i);
  CHECK(subsample_pixels(t, 1).size() == 100);
  auto s = subsample_pixels(t, 56);
  REQUIRE(s.size() == 2);
  CHECK(s.row(1)[0] == 56.0f);
  CHECK(s.row(1)[1] == 156.0f);
  CHECK(subsample_pixels(t, 1000).size() == 1);
  CHECK_THROWS_AS(subsample_pixels(t, 0), InvalidArgument);

  // ceil(10980^2 / 56), evaluated without the helper.
  const std::uint64_t pixels = 10980ull * 10980ull;
  CHECK(subsample_count(pixels, 56) == pixels / 56 + (pixels % 56 != 0));
  CHECK(subsample_count(pixels, 56) == 2152865);
}

TEST_CASE("chip sampler carries the stride across chips") {
  ingest::Chip a, b;
  a.size = b.size = 4;
  a.bands = b.bands = 1;
  a.data.resize(16);
  b.data.resize(16);
  for (int i = 0; i < 16; ++i) {
    a.data[i] = float(i);
    b.data[i] = float(16 + i);
  }
  ChipSampler sampler(1, 5);
  sampler.add(a);
  sampler.add(b);
  CHECK(sampler.samples().values == std::vector<float>{0, 5, 10, 15, 20, 25, 30});
}

TEST_CASE("membership formula") {
  std::vector<double> u(3);
  SUBCASE("coincident with a centroid gives one-hot") {
    memberships_from_sq_distances(std::vector<double>{4.0, 0.0, 1.0}, 2.0, u);
    CHECK(u == std::vector<double>{0.0, 1.0, 0.0});
  }
  SUBCASE("equidistant gives uniform") {
    memberships_from_sq_distances(std::vector<double>{2.5, 2.5, 2.5}, 2.0, u);
    for (double v : u) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("two clusters, m = 2: u1 = d2^2 / (d1^2 + d2^2)") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(0.01, 10.0);
    std::vector<double> u2(2);
    for (int i = 0; i < 100; ++i) {
      const double a = d(rng), b = d(rng);
      memberships_from_sq_distances(std::vector<double>{a, b}, 2.0, u2);
      CHECK(u2[0] == doctest::Approx(b / (a + b)).epsilon(1e-12));
      CHECK(u2[1] == doctest::Approx(a / (a + b)).epsilon(1e-12));
    }
  }
}

TEST_CASE("single cluster assigns every membership exactly 1") {
  auto blobs = gaussian_blobs(20, 2, 3, 5.0, 1);
  auto model = fcm_fit(blobs.samples, {.clusters = 1});
  auto labels = hard_labels(model, blobs.samples);
  const std::size_t n = blobs.samples.size();
  std::vector<float> bs(n * 3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < 3; ++d) bs[d * n + i] = blobs.samples.values[i * 3 + d];
  auto field = fcm_predict(model, bs, 3, n);
  for (float v : field.u) CHECK(v == 1.0f);
}

TEST_CASE("three well separated 12-D Gaussians are recovered exactly") {
  auto blobs = gaussian_blobs(100, 3, 12, 10.0, 7);
  auto model = fcm_fit(blobs.samples, {.clusters = 3, .seed = 11});
  CHECK(adjusted_rand(hard_labels(model, blobs.samples), blobs.labels) == 1.0);

  SUBCASE("objective is monotone non-increasing") {
    REQUIRE(model.objective.size() >= 2);
    for (std::size_t i = 1; i < model.objective.size(); ++i) {
      CHECK(model.objective[i] <= model.objective[i - 1] * (1 + 1e-12));
    }
  }
  SUBCASE("deterministic for a seed") {
    auto again = fcm_fit(blobs.samples, {.clusters = 3, .seed = 11});
    CHECK(again.centroids == model.centroids);
  }
  SUBCASE("prediction does not depend on sample order") {
    Samples reversed;
    reversed.dims = 12;
    for (std::size_t i = blobs.samples.size(); i-- > 0;) {
      auto r = blobs.samples.row(i);
      reversed.values.insert(reversed.values.end(), r.begin(), r.end());
    }
    auto fwd = hard_labels(model, blobs.samples);
    auto rev = hard_labels(model, reversed);
    for (std::size_t i = 0; i < fwd.size(); ++i) CHECK(fwd[i] == rev[fwd.size() - 1 - i]);
  }
}

TEST_CASE("membership rows sum to one") {
  auto blobs = gaussian_blobs(200, 5, 12, 2.0, 9);
  auto model = fcm_fit(blobs.samples, {.clusters = 8});
  const std::size_t n = blobs.samples.size();
  std::vector<float> bs(n * 12);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < 12; ++d) bs[d * n + i] = blobs.samples.values[i * 12 + d];
  auto field = fcm_predict(model, bs, 12, n);
  for (std::size_t p = 0; p < n; ++p) {
    double s = 0;
    for (std::size_t c = 0; c < 8; ++c) {
      CHECK(field.at(p, c) >= 0.0f);
      CHECK(field.at(p, c) <= 1.0f);
      s += field.at(p, c);
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
  CHECK(std::abs(fcm_objective(model, blobs.samples) - model.objective.back()) <
        1e-3 * model.objective.back());
}

TEST_CASE("pixel at a centroid predicts one-hot") {
  auto blobs = gaussian_blobs(30, 3, 4, 10.0, 2);
  auto model = fcm_fit(blobs.samples, {.clusters = 3});
  std::vector<float> px(4);
  for (std::size_t d = 0; d < 4; ++d) {
    px[d] = float(model.centroids[1 * 4 + d] * model.band_std[d] + model.band_mean[d]);
  }
  // Round-tripping through float leaves a tiny distance; memberships are still ~one-hot.
  auto field = fcm_predict(model, px, 4, 1);
  CHECK(field.at(0, 1) > 0.9999f);
}

TEST_CASE("fit errors") {
  Samples s;
  s.dims = 2;
  s.values = {1, 2};
  CHECK_THROWS_AS(fcm_fit(s, {.clusters = 2}), InvalidArgument);
  s.values = {1, 2, NAN, 4};
  CHECK_THROWS_AS(fcm_fit(s, {.clusters = 2}), InvalidArgument);
  s.values = {1, 2, 3, 4};
  auto model = fcm_fit(s, {.clusters = 2});
  std::vector<float> three_bands(3);
  CHECK_THROWS_AS(fcm_predict(model, three_bands, 3, 1), InvalidArgument);
}

TEST_CASE("model file round trip") {
  testing::TempDir dir;
  auto blobs = gaussian_blobs(30, 3, 12, 10.0, 2);
  auto model = fcm_fit(blobs.samples, {.clusters = 3});
  save_model(dir.path() / "fcm.json", model);
  auto loaded = load_model(dir.path() / "fcm.json");
  CHECK(loaded.clusters == 3);
  CHECK(loaded.centroids == model.centroids);
  CHECK(loaded.band_std == model.band_std);
  CHECK(hard_labels(loaded, blobs.samples) == hard_labels(model, blobs.samples));
}
