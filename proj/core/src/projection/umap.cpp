#include "terralabel/projection/umap.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>

#include "terralabel/common/binary_io.hpp"
#include "terralabel/common/error.hpp"
#include "terralabel/common/log.hpp"
#include "terralabel/common/parallel.hpp"

namespace terralabel::projection {

using nlohmann::json;

namespace {

std::vector<double> planar_distances(std::span<const double> coords) {
  const std::size_t n = coords.size() / 2;
  std::vector<double> d(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i * n + j] = std::hypot(coords[2 * i] - coords[2 * j], coords[2 * i + 1] - coords[2 * j + 1]);
  return d;
}

double clip(double v) { return std::clamp(v, -4.0, 4.0); }

}  // namespace

Neighbours knn_from_distances(std::span<const double> distances, std::size_t n, std::size_t k) {
  if (distances.size() != n * n) throw InvalidArgument("knn: distance matrix is not n x n");
  if (k == 0 || k >= n) {
    throw InvalidArgument("knn: need 0 < k < n (k = " + std::to_string(k) + ", n = " + std::to_string(n) + ")");
  }
  Neighbours nn{n, k, std::vector<std::uint32_t>(n * k), std::vector<double>(n * k)};
  parallel_for(n, [&](std::size_t i) {
    std::vector<std::pair<double, std::uint32_t>> row;
    row.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) row.emplace_back(distances[i * n + j], static_cast<std::uint32_t>(j));
    std::partial_sort(row.begin(), row.begin() + long(k), row.end());
    for (std::size_t t = 0; t < k; ++t) {
      nn.distance[i * k + t] = row[t].first;
      nn.index[i * k + t] = row[t].second;
    }
  });
  return nn;
}

std::vector<double> euclidean_distances(std::span<const float> vectors, std::size_t n, std::size_t dim) {
  if (vectors.size() != n * dim) throw InvalidArgument("euclidean_distances: size does not match n x dim");
  std::vector<double> d(n * n, 0.0);
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < dim; ++c) {
        const double diff = double(vectors[i * dim + c]) - vectors[j * dim + c];
        s += diff * diff;
      }
      d[i * n + j] = std::sqrt(s);
    }
  });
  return d;
}

std::vector<double> distances_from_similarity(const matching::SimilarityMatrix& sim) {
  std::vector<double> d(sim.values.size());
  std::transform(sim.values.begin(), sim.values.end(), d.begin(),
                 [](double s) { return std::clamp(1.0 - s, 0.0, 2.0); });
  return d;
}

SmoothKnn smooth_knn(const Neighbours& nn) {
  constexpr int kSteps = 64;
  constexpr double kTolerance = 1e-5;
  const double target = std::log2(double(nn.k));
  SmoothKnn out{std::vector<double>(nn.n), std::vector<double>(nn.n), 0};
  double mean_distance = 0;
  for (double d : nn.distance) mean_distance += d;
  mean_distance /= double(nn.distance.size());

  for (std::size_t i = 0; i < nn.n; ++i) {
    const double* d = &nn.distance[i * nn.k];
    const double rho = d[0];
    auto psum = [&](double sigma) {
      double s = 0;
      for (std::size_t t = 0; t < nn.k; ++t) s += std::exp(-std::max(0.0, d[t] - rho) / sigma);
      return s;
    };
    double lo = 0, hi = std::numeric_limits<double>::infinity(), sigma = 1.0;
    bool converged = false;
    for (int step = 0; step < kSteps; ++step) {
      const double s = psum(sigma);
      if (std::abs(s - target) < kTolerance) {
        converged = true;
        break;
      }
      if (s > target) {
        hi = sigma;
        sigma = (lo + hi) / 2;
      } else {
        lo = sigma;
        sigma = std::isinf(hi) ? sigma * 2 : (lo + hi) / 2;
      }
    }
    // Unreachable targets (k <= 2, or every neighbour at distance rho) drive
    // sigma to 0; keep it at a small fraction of the typical distance instead.
    const double floor = 1e-3 * (mean_distance > 0 ? mean_distance : 1.0);
    if (!converged || sigma < floor) {
      ++out.clamped;
      sigma = std::max(sigma, floor);
    }
    out.rho[i] = rho;
    out.sigma[i] = sigma;
  }
  if (out.clamped) log::debug("smooth_knn: " + std::to_string(out.clamped) + " sigma values clamped");
  return out;
}

FuzzyGraph fuzzy_graph(const Neighbours& nn, const SmoothKnn& cal) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::pair<double, double>> pairs;
  for (std::size_t i = 0; i < nn.n; ++i) {
    for (std::size_t t = 0; t < nn.k; ++t) {
      const std::uint32_t j = nn.index[i * nn.k + t];
      const double w = std::exp(-std::max(0.0, nn.distance[i * nn.k + t] - cal.rho[i]) / cal.sigma[i]);
      const auto u = static_cast<std::uint32_t>(i);
      auto& slot = pairs[{std::min(u, j), std::max(u, j)}];
      (i < j ? slot.first : slot.second) = w;
    }
  }
  FuzzyGraph g;
  g.n = nn.n;
  for (const auto& [key, w] : pairs) {
    // a + b - ab, arranged so that a weight of 1 stays exactly 1.
    const double hi = std::max(w.first, w.second), lo = std::min(w.first, w.second);
    const double u = hi + lo * (1.0 - hi);
    if (u <= 0) continue;
    g.head.push_back(key.first);
    g.tail.push_back(key.second);
    g.weight.push_back(u);
  }
  return g;
}

FuzzyGraph fuzzy_graph(const Neighbours& nn) { return fuzzy_graph(nn, smooth_knn(nn)); }

CurveParams fit_ab(double min_dist, double spread) {
  if (!(min_dist >= 0) || !(spread > 0)) throw InvalidArgument("fit_ab: need min_dist >= 0 and spread > 0");
  constexpr int kPoints = 300;
  std::vector<double> xs(kPoints), ys(kPoints);
  for (int i = 0; i < kPoints; ++i) {
    xs[i] = 3.0 * spread * i / (kPoints - 1);
    ys[i] = xs[i] < min_dist ? 1.0 : std::exp(-(xs[i] - min_dist) / spread);
  }
  // Levenberg-Marquardt on (a, b).
  double a = 1.0, b = 1.0, lambda = 1e-3;
  auto residual = [&](double pa, double pb) {
    double r = 0;
    for (int i = 0; i < kPoints; ++i) {
      const double f = 1.0 / (1.0 + pa * std::pow(xs[i], 2 * pb));
      r += (f - ys[i]) * (f - ys[i]);
    }
    return r;
  };
  double err = residual(a, b);
  for (int iter = 0; iter < 500; ++iter) {
    double jtj[2][2] = {{0, 0}, {0, 0}}, jtr[2] = {0, 0};
    for (int i = 0; i < kPoints; ++i) {
      if (xs[i] == 0) continue;  // f = 1 and both partials vanish
      const double p = std::pow(xs[i], 2 * b);
      const double f = 1.0 / (1.0 + a * p);
      const double da = -p * f * f;
      const double db = -a * p * 2 * std::log(xs[i]) * f * f;
      const double r = f - ys[i];
      jtj[0][0] += da * da;
      jtj[0][1] += da * db;
      jtj[1][1] += db * db;
      jtr[0] += da * r;
      jtr[1] += db * r;
    }
    const double m00 = jtj[0][0] * (1 + lambda), m11 = jtj[1][1] * (1 + lambda), m01 = jtj[0][1];
    const double det = m00 * m11 - m01 * m01;
    if (det == 0) break;
    const double step_a = -(m11 * jtr[0] - m01 * jtr[1]) / det;
    const double step_b = -(m00 * jtr[1] - m01 * jtr[0]) / det;
    const double next = residual(a + step_a, b + step_b);
    if (next < err) {
      const bool done = err - next < 1e-14;
      a += step_a;
      b += step_b;
      err = next;
      lambda *= 0.3;
      if (done) break;
    } else {
      lambda *= 10;
      if (lambda > 1e12) break;
    }
  }
  return {a, b};
}

std::vector<double> optimize_layout(const FuzzyGraph& graph, const UmapOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> init(0.0, 1e-2);
  std::vector<double> y(graph.n * 2);
  for (auto& v : y) v = init(rng);
  return optimize_layout(graph, options, std::move(y));
}

std::vector<double> optimize_layout(const FuzzyGraph& graph, const UmapOptions& options, std::vector<double> y) {
  const std::size_t n = graph.n;
  if (y.size() != 2 * n) throw InvalidArgument("optimize_layout: initial layout is not n x 2");
  if (graph.weight.empty() || options.epochs == 0) return y;
  // Negative sampling draws from a stream separate from the initialisation.
  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);

  const auto [a, b] = fit_ab(options.min_dist);
  const double max_w = *std::max_element(graph.weight.begin(), graph.weight.end());
  const double epochs = double(options.epochs);
  // Edge e is sampled every max_w / w_e epochs; edges sampled less than once overall are dropped.
  std::vector<std::size_t> edges;
  std::vector<double> per_sample, next_sample, per_negative, next_negative;
  for (std::size_t e = 0; e < graph.weight.size(); ++e) {
    const double eps = max_w / graph.weight[e];
    if (eps > epochs) continue;
    edges.push_back(e);
    per_sample.push_back(eps);
    next_sample.push_back(eps);
    per_negative.push_back(eps / double(options.negative_samples));
    next_negative.push_back(eps / double(options.negative_samples));
  }
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    const double alpha = 1.0 - double(epoch - 1) / epochs;
    for (std::size_t s = 0; s < edges.size(); ++s) {
      if (next_sample[s] > double(epoch)) continue;
      const std::size_t e = edges[s];
      const std::size_t i = graph.head[e], j = graph.tail[e];
      double* yi = &y[2 * i];
      double* yj = &y[2 * j];
      double d2 = (yi[0] - yj[0]) * (yi[0] - yj[0]) + (yi[1] - yj[1]) * (yi[1] - yj[1]);
      if (d2 > 0) {
        const double coeff = -2.0 * a * b * std::pow(d2, b - 1.0) / (1.0 + a * std::pow(d2, b));
        for (int c = 0; c < 2; ++c) {
          const double g = clip(coeff * (yi[c] - yj[c]));
          yi[c] += g * alpha;
          yj[c] -= g * alpha;
        }
      }
      next_sample[s] += per_sample[s];

      const auto negatives =
          static_cast<std::size_t>((double(epoch) - next_negative[s]) / per_negative[s]);
      for (std::size_t t = 0; t < negatives; ++t) {
        const std::size_t k = pick(rng);
        if (k == i) continue;
        const double* yk = &y[2 * k];
        d2 = (yi[0] - yk[0]) * (yi[0] - yk[0]) + (yi[1] - yk[1]) * (yi[1] - yk[1]);
        const double coeff = d2 > 0 ? 2.0 * b / ((0.001 + d2) * (1.0 + a * std::pow(d2, b))) : 0.0;
        for (int c = 0; c < 2; ++c) yi[c] += (coeff > 0 ? clip(coeff * (yi[c] - yk[c])) : 4.0) * alpha;
      }
      next_negative[s] += double(negatives) * per_negative[s];
    }
  }
  return y;
}

Projection2D umap_from_distances(std::vector<std::string> ids, std::span<const double> distances,
                                 const UmapOptions& options, Level level) {
  const std::size_t n = ids.size();
  if (n < 2) throw InvalidArgument("umap: need at least two points");
  UmapOptions used = options;
  if (used.n_neighbors >= n) {
    used.n_neighbors = n - 1;
    log::info("umap: n_neighbors capped at " + std::to_string(used.n_neighbors) + " for " + std::to_string(n) +
              " points");
  }
  const auto nn = knn_from_distances(distances, n, used.n_neighbors);
  Projection2D p;
  p.level = level;
  p.params = used;
  p.ids = std::move(ids);
  p.coords = optimize_layout(fuzzy_graph(nn), used);
  return p;
}

Projection2D umap_from_similarity(const matching::SimilarityMatrix& sim, const UmapOptions& options) {
  return umap_from_distances(sim.ids, distances_from_similarity(sim), options, Level::chip);
}

Projection2D umap_from_vectors(std::vector<std::string> ids, std::span<const float> vectors, std::size_t dim,
                               const UmapOptions& options, Level level) {
  const auto d = euclidean_distances(vectors, ids.size(), dim);
  return umap_from_distances(std::move(ids), d, options, level);
}

double neighbour_purity(std::span<const double> coords, std::span<const int> labels, std::size_t k) {
  const std::size_t n = labels.size();
  const auto nn = knn_from_distances(planar_distances(coords), n, k);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t same = 0;
    for (std::size_t t = 0; t < k; ++t) same += labels[nn.index[i * k + t]] == labels[i];
    total += double(same) / double(k);
  }
  return total / double(n);
}

double trustworthiness(std::span<const double> distances, std::span<const double> coords, std::size_t k) {
  const std::size_t n = coords.size() / 2;
  if (2 * k >= n) throw InvalidArgument("trustworthiness: need k < n / 2");
  // rank[i][j]: position of j in i's high-dimensional ordering, 1-based.
  std::vector<std::size_t> rank(n * n, 0);
  const auto high = knn_from_distances(distances, n, n - 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < n - 1; ++t) rank[i * n + high.index[i * (n - 1) + t]] = t + 1;
  const auto low = knn_from_distances(planar_distances(coords), n, k);
  double penalty = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < k; ++t) {
      const std::size_t r = rank[i * n + low.index[i * k + t]];
      if (r > k) penalty += double(r - k);
    }
  const double nd = double(n), kd = double(k);
  return 1.0 - 2.0 / (nd * kd * (2.0 * nd - 3.0 * kd - 1.0)) * penalty;
}

std::string projection_json(const Projection2D& p) {
  json points = json::array();
  for (std::size_t i = 0; i < p.size(); ++i) {
    points.push_back({{"id", p.ids[i]}, {"x", p.coords[2 * i]}, {"y", p.coords[2 * i + 1]}});
  }
  json j = {{"level", p.level == Level::chip ? "chip" : "segment"},
            {"params",
             {{"n_neighbors", p.params.n_neighbors},
              {"min_dist", p.params.min_dist},
              {"epochs", p.params.epochs},
              {"seed", p.params.seed}}},
            {"points", std::move(points)}};
  return j.dump(1);
}

void save_projection(const std::filesystem::path& path, const Projection2D& p) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  io::write_text_file(path, projection_json(p));
}

Projection2D load_projection(const std::filesystem::path& path) {
  try {
    const json j = json::parse(io::read_text_file(path));
    Projection2D p;
    const auto level = j.at("level").get<std::string>();
    if (level != "chip" && level != "segment") throw FormatError("unknown projection level '" + level + "'");
    p.level = level == "chip" ? Level::chip : Level::segment;
    const json& params = j.at("params");
    p.params.n_neighbors = params.at("n_neighbors").get<std::size_t>();
    p.params.min_dist = params.at("min_dist").get<double>();
    p.params.epochs = params.at("epochs").get<std::size_t>();
    p.params.seed = params.at("seed").get<std::uint64_t>();
    for (const auto& pt : j.at("points")) {
      p.ids.push_back(pt.at("id").get<std::string>());
      p.coords.push_back(pt.at("x").get<double>());
      p.coords.push_back(pt.at("y").get<double>());
    }
    return p;
  } catch (const json::exception& e) {
    throw FormatError("projection " + path.string() + ": " + e.what());
  }
}

}  // namespace terralabel::projection
