#include <doctest.h>

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "temp_dir.hpp"
#include "terralabel/common/error.hpp"
#include "terralabel/projection/umap.hpp"

using namespace terralabel;
using namespace terralabel::projection;

namespace {

struct Clusters {
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<double> distances;
};

// Three well-separated 10-D Gaussian blobs of 100 points each.
Clusters three_clusters(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0, 1);
  std::vector<float> x;
  Clusters c;
  for (int label = 0; label < 3; ++label)
    for (int i = 0; i < 100; ++i) {
      for (int d = 0; d < 10; ++d) x.push_back(noise(rng) + (d == label ? 12.0f : 0.0f));
      c.labels.push_back(label);
      c.ids.push_back("p" + std::to_string(c.ids.size()));
    }
  c.distances = euclidean_distances(x, 300, 10);
  return c;
}

}  // namespace

TEST_CASE("knn from distances") {
  SUBCASE("3 points on a line") {
    std::vector<double> d = {0, 1, 2, 1, 0, 1, 2, 1, 0};
    auto nn = knn_from_distances(d, 3, 1);
    CHECK(nn.index == std::vector<std::uint32_t>{1, 0, 1});
  }
  SUBCASE("ties go to the lower id") {
    std::vector<double> d(16, 1.0);
    auto nn = knn_from_distances(d, 4, 2);
    CHECK(nn.index == std::vector<std::uint32_t>{1, 2, 0, 2, 0, 1, 0, 1});
  }
  SUBCASE("random matrix against a full sort") {
    std::mt19937_64 rng(20);
    std::uniform_int_distribution<int> u(0, 9);
    const std::size_t n = 30;
    std::vector<double> d(n * n);
    for (auto& v : d) v = u(rng);
    auto nn = knn_from_distances(d, n, 6);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::uint32_t> order;
      for (std::uint32_t j = 0; j < n; ++j)
        if (j != i) order.push_back(j);
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return d[i * n + a] < d[i * n + b]; });
      for (std::size_t t = 0; t < 6; ++t) CHECK(nn.index[i * 6 + t] == order[t]);
    }
  }
  CHECK_THROWS_AS(knn_from_distances(std::vector<double>(9, 0.0), 3, 3), InvalidArgument);
}

TEST_CASE("smooth knn calibration") {
  SUBCASE("nearest at rho, the other k - 1 equidistant: closed-form sigma") {
    // 1 + (k - 1) exp(-(d - rho) / sigma) = log2 k
    const std::size_t k = 8;
    Neighbours nn{1, k, std::vector<std::uint32_t>(k, 0), std::vector<double>(k, 2.0)};
    nn.distance[0] = 0.5;
    auto cal = smooth_knn(nn);
    const double sigma = -(2.0 - 0.5) / std::log((std::log2(double(k)) - 1.0) / double(k - 1));
    CHECK(std::abs(cal.sigma[0] - sigma) < 1e-4);
    CHECK(cal.rho[0] == 0.5);
    CHECK(cal.clamped == 0);
  }
  SUBCASE("every point satisfies its defining equation") {
    auto c = three_clusters(21);
    auto nn = knn_from_distances(c.distances, 300, 15);
    auto cal = smooth_knn(nn);
    CHECK(cal.clamped == 0);
    for (std::size_t i = 0; i < 300; ++i) {
      double s = 0;
      for (std::size_t t = 0; t < 15; ++t) s += std::exp(-std::max(0.0, nn.distance[i * 15 + t] - cal.rho[i]) / cal.sigma[i]);
      CHECK(std::abs(s - std::log2(15.0)) < 1e-3);
    }
    auto g = fuzzy_graph(nn, cal);
    for (double w : g.weight) {
      CHECK(w > 0);
      CHECK(w <= 1);
    }
    // The nearest neighbour of every point carries weight 1 (before and after the union).
    for (std::size_t i = 0; i < 300; ++i) {
      const auto j = nn.index[i * 15];
      bool found = false;
      for (std::size_t e = 0; e < g.weight.size(); ++e) {
        if ((g.head[e] == i && g.tail[e] == j) || (g.head[e] == j && g.tail[e] == i)) {
          CHECK(g.weight[e] == 1.0);
          found = true;
        }
      }
      CHECK(found);
    }
  }
  SUBCASE("probabilistic union of (1, 0) is 1") {
    // 0 -> 1 at weight 1; 1's own neighbours exclude 0.
    std::vector<double> d = {0, 1, 5, 5, 1, 0, 5, 0.5, 5, 5, 0, 1, 5, 0.5, 1, 0};
    auto nn = knn_from_distances(d, 4, 1);
    auto g = fuzzy_graph(nn);
    CHECK(g.head[0] == 0);
    CHECK(g.tail[0] == 1);
    CHECK(g.weight[0] == 1.0);
  }
}

TEST_CASE("curve parameters") {
  auto p = fit_ab(0.1);
  CHECK(p.a == doctest::Approx(1.577).epsilon(0.01));
  CHECK(p.b == doctest::Approx(0.895).epsilon(0.01));
}

TEST_CASE("layout") {
  SUBCASE("two points with one edge move together") {
    FuzzyGraph g{2, {0}, {1}, {1.0}};
    UmapOptions o;
    o.epochs = 50;
    std::mt19937_64 rng(24);
    std::uniform_real_distribution<double> u(-10, 10);
    auto dist = [](const std::vector<double>& y) { return std::hypot(y[0] - y[2], y[1] - y[3]); };
    for (int t = 0; t < 10; ++t) {
      std::vector<double> start = {u(rng), u(rng), u(rng), u(rng)};
      CHECK(dist(optimize_layout(g, o, start)) < dist(start));
    }
  }
  SUBCASE("three clusters: purity, trustworthiness, determinism") {
    const auto begin = std::chrono::steady_clock::now();
    auto c = three_clusters(22);
    auto p = umap_from_distances(c.ids, c.distances, {}, Level::chip);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - begin).count();
    for (double v : p.coords) REQUIRE(std::isfinite(v));
    const double purity = neighbour_purity(p.coords, c.labels, 10);
    const double trust = trustworthiness(c.distances, p.coords, 10);
    MESSAGE("purity " << purity << ", trustworthiness " << trust << ", " << seconds << " s");
    CHECK(purity >= 0.9);
    CHECK(trust >= 0.85);
    CHECK(seconds < 60.0);
    auto again = umap_from_distances(c.ids, c.distances, {}, Level::chip);
    CHECK(again.coords == p.coords);
  }
}

TEST_CASE("trustworthiness of a perfect layout is 1") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> coords(2 * 40);
  for (auto& v : coords) v = u(rng);
  std::vector<float> f(coords.begin(), coords.end());
  auto d = euclidean_distances(f, 40, 2);
  CHECK(trustworthiness(d, coords, 5) == doctest::Approx(1.0));
}

TEST_CASE("projection from similarity and file round trip") {
  matching::SimilarityMatrix sim;
  sim.ids = {"a", "b", "c", "d"};
  sim.values = {1, 0.9, 0.1, 0.2, 0.9, 1, 0.2, 0.1, 0.1, 0.2, 1, 0.95, 0.2, 0.1, 0.95, 1};
  auto d = distances_from_similarity(sim);
  CHECK(d[1] == doctest::Approx(0.1));
  auto p = umap_from_similarity(sim);
  CHECK(p.params.n_neighbors == 3);
  CHECK(p.level == Level::chip);

  testing::TempDir dir;
  save_projection(dir.path() / "chips.proj", p);
  auto loaded = load_projection(dir.path() / "chips.proj");
  CHECK(loaded.ids == p.ids);
  CHECK(loaded.coords == p.coords);
  CHECK(loaded.params.n_neighbors == 3);
}
