#include "terralabel/superpixels/slic.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>

#include "terralabel/common/binary_io.hpp"
#include "terralabel/common/error.hpp"

namespace terralabel::superpixels {

namespace {

constexpr std::uint32_t kUnassigned = std::numeric_limits<std::uint32_t>::max();
constexpr std::uint16_t kSegmentFileVersion = 1;

struct Centre {
  std::vector<double> colour;
  double row = 0.0, col = 0.0;
};

struct UnionFind {
  std::vector<std::uint32_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0u); }
  std::uint32_t find(std::uint32_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
};

// Splits labels into 4-connected components, then merges every component
// smaller than min_size (and every unassigned one) into its largest
// neighbour; ties go to the nearest mean colour, then the lower id.
std::vector<std::uint32_t> enforce_connectivity(const std::vector<std::uint32_t>& labels, std::size_t h,
                                                std::size_t w, std::span<const float> planes,
                                                std::size_t channels, std::size_t min_size) {
  const std::size_t n = h * w;
  std::vector<std::uint32_t> comp(n, kUnassigned);
  std::vector<std::size_t> size;
  std::vector<bool> orphan;
  std::vector<std::uint32_t> stack;
  for (std::size_t start = 0; start < n; ++start) {
    if (comp[start] != kUnassigned) continue;
    const auto id = static_cast<std::uint32_t>(size.size());
    const std::uint32_t label = labels[start];
    std::size_t count = 0;
    comp[start] = id;
    stack.push_back(static_cast<std::uint32_t>(start));
    while (!stack.empty()) {
      const std::uint32_t p = stack.back();
      stack.pop_back();
      ++count;
      const std::size_t r = p / w, c = p % w;
      auto visit = [&](std::size_t q) {
        if (comp[q] == kUnassigned && labels[q] == label) {
          comp[q] = id;
          stack.push_back(static_cast<std::uint32_t>(q));
        }
      };
      if (r > 0) visit(p - w);
      if (r + 1 < h) visit(p + w);
      if (c > 0) visit(p - 1);
      if (c + 1 < w) visit(p + 1);
    }
    size.push_back(count);
    orphan.push_back(label == kUnassigned);
  }

  const std::size_t m = size.size();
  std::vector<std::vector<double>> colour(m, std::vector<double>(channels, 0.0));
  std::vector<std::set<std::uint32_t>> adjacent(m);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t ch = 0; ch < channels; ++ch) colour[comp[p]][ch] += planes[ch * n + p];
    const std::size_t r = p / w, c = p % w;
    if (c + 1 < w && comp[p + 1] != comp[p]) {
      adjacent[comp[p]].insert(comp[p + 1]);
      adjacent[comp[p + 1]].insert(comp[p]);
    }
    if (r + 1 < h && comp[p + w] != comp[p]) {
      adjacent[comp[p]].insert(comp[p + w]);
      adjacent[comp[p + w]].insert(comp[p]);
    }
  }
  // colour holds sums; means are derived on demand so merges stay exact.

  UnionFind uf(m);
  std::vector<std::uint32_t> order(m);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return size[a] < size[b]; });
  auto small = [&](std::uint32_t root) { return orphan[root] || size[root] < min_size; };
  auto colour_distance = [&](std::uint32_t a, std::uint32_t b) {
    double s = 0.0;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const double t = colour[a][ch] / double(size[a]) - colour[b][ch] / double(size[b]);
      s += t * t;
    }
    return s;
  };
  for (std::uint32_t c : order) {
    const std::uint32_t root = uf.find(c);
    if (!small(root)) continue;
    std::uint32_t best = kUnassigned;
    double best_dist = 0.0;
    for (std::uint32_t nb : adjacent[root]) {
      const std::uint32_t other = uf.find(nb);
      if (other == root) continue;
      if (best == kUnassigned) {
        best = other;
        best_dist = colour_distance(root, other);
        continue;
      }
      // Orphans never absorb anything while a labelled neighbour exists.
      if (orphan[best] != orphan[other]) {
        if (orphan[best]) best = other, best_dist = colour_distance(root, other);
        continue;
      }
      const double d = colour_distance(root, other);
      if (size[other] > size[best] || (size[other] == size[best] && (d < best_dist || (d == best_dist && other < best)))) {
        best = other;
        best_dist = d;
      }
    }
    if (best == kUnassigned) continue;  // the only region in the image
    uf.parent[root] = best;
    size[best] += size[root];
    orphan[best] = orphan[best] && orphan[root];
    for (std::size_t ch = 0; ch < channels; ++ch) colour[best][ch] += colour[root][ch];
    for (std::uint32_t nb : adjacent[root]) {
      const std::uint32_t other = uf.find(nb);
      if (other != best) {
        adjacent[best].insert(other);
        adjacent[other].insert(best);
      }
    }
    adjacent[root].clear();
  }
  std::vector<std::uint32_t> out(n);
  for (std::size_t p = 0; p < n; ++p) out[p] = uf.find(comp[p]);
  return out;
}

}  // namespace

std::vector<std::vector<std::uint32_t>> SegmentMap::pixel_lists() const {
  std::vector<std::vector<std::uint32_t>> lists(segments.size());
  for (std::size_t p = 0; p < labels.size(); ++p) lists[labels[p]].push_back(static_cast<std::uint32_t>(p));
  return lists;
}

std::vector<float> pca_colour(const ingest::Chip& chip, std::size_t components) {
  const std::size_t bands = chip.bands, n = chip.pixels();
  const std::size_t k = std::min(components, bands);
  // Moments are accumulated exactly on an integer grid, so they do not depend
  // on pixel order; a rotated chip therefore gets bit-identical components.
  float peak = 0.0f;
  for (float v : chip.data) peak = std::max(peak, std::abs(v));
  const int bits = std::clamp(static_cast<int>((62.0 - std::log2(double(std::max<std::size_t>(n, 2)))) / 2.0) - 1, 8, 30);
  const double scale = peak > 0.0f ? std::ldexp(1.0, bits) / peak : 1.0;
  std::vector<std::int64_t> q(chip.data.size());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = std::llround(chip.data[i] * scale);
  std::vector<std::int64_t> sum(bands, 0);
  std::vector<std::int64_t> cross(bands * bands, 0);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t i = 0; i < bands; ++i) {
      const std::int64_t xi = q[i * n + p];
      sum[i] += xi;
      for (std::size_t j = i; j < bands; ++j) cross[i * bands + j] += xi * q[j * n + p];
    }
  }
  Eigen::VectorXd mean(bands);
  for (std::size_t b = 0; b < bands; ++b) mean[Eigen::Index(b)] = double(sum[b]) / double(n) / scale;
  Eigen::MatrixXd cov(bands, bands);
  for (std::size_t i = 0; i < bands; ++i) {
    for (std::size_t j = i; j < bands; ++j) {
      const double e = double(cross[i * bands + j]) / double(n) - (double(sum[i]) / double(n)) * (double(sum[j]) / double(n));
      cov(Eigen::Index(i), Eigen::Index(j)) = cov(Eigen::Index(j), Eigen::Index(i)) = e / (scale * scale);
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  std::vector<float> out(components * n, 0.0f);
  for (std::size_t c = 0; c < k; ++c) {
    // Eigen returns ascending eigenvalues.
    const auto col = Eigen::Index(bands - 1 - c);
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    const double sd = std::sqrt(std::max(eig.eigenvalues()[col], 0.0));
    const double inv_sd = sd > 1e-6 ? 1.0 / sd : 0.0;  // flat components carry no colour
    for (std::size_t p = 0; p < n; ++p) {
      double s = 0.0;
      for (std::size_t b = 0; b < bands; ++b) s += (chip.data[b * n + p] - mean[Eigen::Index(b)]) * v[Eigen::Index(b)];
      out[c * n + p] = static_cast<float>(s * inv_sd);
    }
  }
  return out;
}

SegmentMap slic(std::span<const float> input, std::size_t channels, std::size_t height, std::size_t width,
                const SlicOptions& options) {
  const std::size_t n = height * width;
  if (input.size() != channels * n) throw InvalidArgument("slic: plane data does not match dimensions");
  if (options.n_segments < 2) throw InvalidArgument("slic: need at least 2 segments");
  if (options.n_segments > n) {
    throw InvalidArgument("slic: " + std::to_string(options.n_segments) + " segments requested for " +
                          std::to_string(n) + " pixels");
  }
  // Colour snapped to a 2^-20 grid: centroid sums are then exact in double,
  // independent of the order pixels are visited.
  std::vector<double> planes(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) planes[i] = std::ldexp(std::nearbyint(std::ldexp(double(input[i]), 20)), -20);

  // Positions are measured from the image centre so that a 90-degree rotation
  // only swaps and negates coordinates, which floating point does exactly.
  const double mid_r = (double(height) - 1.0) / 2.0, mid_c = (double(width) - 1.0) / 2.0;
  const double step = std::sqrt(double(n) / double(options.n_segments));
  const std::size_t grid_rows = std::max<std::size_t>(1, std::lround(double(height) / step));
  const std::size_t grid_cols = std::max<std::size_t>(1, std::lround(double(width) / step));
  std::vector<Centre> centres;
  for (std::size_t i = 0; i < grid_rows; ++i) {
    for (std::size_t j = 0; j < grid_cols; ++j) {
      Centre c;
      c.row = double(height) * (2.0 * double(i) + 1.0 - double(grid_rows)) / (2.0 * double(grid_rows));
      c.col = double(width) * (2.0 * double(j) + 1.0 - double(grid_cols)) / (2.0 * double(grid_cols));
      // Seed colour: mean of the pixels within half a pixel of the seed point
      // (several when it falls exactly between pixels).
      const double fr = c.row + mid_r, fc = c.col + mid_c;
      auto nearest = [](double f) {
        std::vector<double> out;
        for (double v : {std::floor(f), std::ceil(f)}) {
          if (std::abs(v - f) <= 0.5 && (out.empty() || out.back() != v)) out.push_back(v);
        }
        return out;
      };
      std::vector<double> acc(channels, 0.0);
      double count = 0.0;
      for (double rr : nearest(fr)) {
        for (double cc : nearest(fc)) {
          const std::size_t p = std::size_t(rr) * width + std::size_t(cc);
          for (std::size_t ch = 0; ch < channels; ++ch) acc[ch] += planes[ch * n + p];
          count += 1.0;
        }
      }
      for (std::size_t ch = 0; ch < channels; ++ch) c.colour.push_back(acc[ch] / count);
      centres.push_back(std::move(c));
    }
  }

  const double spatial_weight = (options.compactness / step) * (options.compactness / step);
  const double radius = std::ceil(step);
  std::vector<std::uint32_t> labels(n, kUnassigned);
  std::vector<double> dist(n);
  for (std::size_t it = 0; it < options.iterations; ++it) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    std::fill(labels.begin(), labels.end(), kUnassigned);
    for (std::size_t k = 0; k < centres.size(); ++k) {
      const Centre& c = centres[k];
      // Window |dy|, |dx| <= radius around the exact centre: symmetric under rotation.
      const double r0 = std::max(0.0, std::ceil(c.row - radius + mid_r));
      const double r1 = std::min(double(height) - 1.0, std::floor(c.row + radius + mid_r));
      const double c0 = std::max(0.0, std::ceil(c.col - radius + mid_c));
      const double c1 = std::min(double(width) - 1.0, std::floor(c.col + radius + mid_c));
      for (double r = r0; r <= r1; ++r) {
        const double dr = (r - mid_r) - c.row;
        for (double col = c0; col <= c1; ++col) {
          const std::size_t p = std::size_t(r) * width + std::size_t(col);
          double dc = 0.0;
          for (std::size_t ch = 0; ch < channels; ++ch) {
            const double t = planes[ch * n + p] - c.colour[ch];
            dc += t * t;
          }
          const double dx = (col - mid_c) - c.col;
          const double d = dc + spatial_weight * (dr * dr + dx * dx);
          if (d < dist[p]) {
            dist[p] = d;
            labels[p] = static_cast<std::uint32_t>(k);
          }
        }
      }
    }
    std::vector<Centre> sums(centres.size(), Centre{std::vector<double>(channels, 0.0), 0.0, 0.0});
    std::vector<std::size_t> counts(centres.size(), 0);
    for (std::size_t p = 0; p < n; ++p) {
      const std::uint32_t k = labels[p];
      if (k == kUnassigned) continue;
      ++counts[k];
      sums[k].row += double(p / width) - mid_r;
      sums[k].col += double(p % width) - mid_c;
      for (std::size_t ch = 0; ch < channels; ++ch) sums[k].colour[ch] += planes[ch * n + p];
    }
    for (std::size_t k = 0; k < centres.size(); ++k) {
      if (counts[k] == 0) continue;  // keep an empty centre where it was
      const double cnt = double(counts[k]);
      centres[k].row = sums[k].row / cnt;
      centres[k].col = sums[k].col / cnt;
      for (std::size_t ch = 0; ch < channels; ++ch) centres[k].colour[ch] = sums[k].colour[ch] / cnt;
    }
  }

  std::vector<float> snapped(planes.begin(), planes.end());
  const auto min_size = static_cast<std::size_t>(options.min_size_fraction * step * step);
  return finalize_labels(enforce_connectivity(labels, height, width, snapped, channels, min_size), height, width);
}

SegmentMap slic(const ingest::Chip& chip, const SlicOptions& options) {
  return slic(pca_colour(chip, 3), 3, chip.size, chip.size, options);
}

SegmentMap finalize_labels(std::vector<std::uint32_t> labels, std::size_t height, std::size_t width) {
  SegmentMap seg;
  seg.height = height;
  seg.width = width;
  std::vector<std::uint32_t> remap;
  std::vector<std::uint32_t> dense(labels.size());
  std::vector<std::uint32_t> lookup;
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const std::uint32_t l = labels[p];
    if (l >= lookup.size()) lookup.resize(std::size_t(l) + 1, kUnassigned);
    if (lookup[l] == kUnassigned) {
      lookup[l] = static_cast<std::uint32_t>(seg.segments.size());
      Segment s;
      s.id = lookup[l];
      s.bbox = {p / width, p % width, p / width + 1, p % width + 1};
      seg.segments.push_back(s);
    }
    dense[p] = lookup[l];
    Segment& s = seg.segments[dense[p]];
    const std::size_t r = p / width, c = p % width;
    ++s.pixel_count;
    s.centroid_row += double(r);
    s.centroid_col += double(c);
    s.bbox.row0 = std::min(s.bbox.row0, r);
    s.bbox.col0 = std::min(s.bbox.col0, c);
    s.bbox.row1 = std::max(s.bbox.row1, r + 1);
    s.bbox.col1 = std::max(s.bbox.col1, c + 1);
  }
  for (auto& s : seg.segments) {
    s.centroid_row /= double(s.pixel_count);
    s.centroid_col /= double(s.pixel_count);
  }
  seg.labels = std::move(dense);
  return seg;
}

std::vector<float> segment_means(const SegmentMap& seg, std::span<const float> maps, std::size_t channels) {
  const std::size_t n = seg.height * seg.width;
  if (maps.size() != channels * n) {
    throw ShapeError("segment_means: maps hold " + std::to_string(maps.size()) + " values, expected " +
                     std::to_string(channels) + " x " + std::to_string(n));
  }
  std::vector<double> acc(seg.size() * channels, 0.0);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const float* plane = maps.data() + ch * n;
    for (std::size_t p = 0; p < n; ++p) acc[seg.labels[p] * channels + ch] += plane[p];
  }
  std::vector<float> out(acc.size());
  for (std::size_t s = 0; s < seg.size(); ++s) {
    if (seg.segments[s].pixel_count == 0) throw Error("segment_means: empty segment " + std::to_string(s));
    for (std::size_t ch = 0; ch < channels; ++ch) {
      out[s * channels + ch] = static_cast<float>(acc[s * channels + ch] / double(seg.segments[s].pixel_count));
    }
  }
  return out;
}

void save_segment_map(const std::filesystem::path& path, const SegmentMap& seg) {
  constexpr auto kMax = std::numeric_limits<std::uint16_t>::max();
  if (seg.height > kMax || seg.width > kMax) throw InvalidArgument("segment map dimensions exceed u16");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    io::write_magic(out, "SEGM");
    io::write_pod<std::uint16_t>(out, kSegmentFileVersion);
    io::write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(seg.height));
    io::write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(seg.width));
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(seg.size()));
    io::write_span<std::uint32_t>(out, seg.labels);
    if (!out) throw Error("write failed: " + path.string());
  }
  nlohmann::json segments = nlohmann::json::array();
  for (const auto& s : seg.segments) {
    segments.push_back({{"id", s.id},
                        {"area", s.pixel_count},
                        {"centroid", {s.centroid_row, s.centroid_col}},
                        {"bbox", {s.bbox.row0, s.bbox.col0, s.bbox.row1, s.bbox.col1}}});
  }
  nlohmann::json j = {{"height", seg.height}, {"width", seg.width}, {"segments", std::move(segments)}};
  io::write_text_file(path.string() + ".json", j.dump());
}

SegmentMap load_segment_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open segment map " + path.string());
  io::expect_magic(in, "SEGM");
  if (io::read_pod<std::uint16_t>(in) != kSegmentFileVersion) {
    throw FormatError("segment map " + path.string() + ": unsupported version");
  }
  const std::size_t h = io::read_pod<std::uint16_t>(in);
  const std::size_t w = io::read_pod<std::uint16_t>(in);
  const std::size_t count = io::read_pod<std::uint32_t>(in);
  std::vector<std::uint32_t> labels(h * w);
  io::read_into<std::uint32_t>(in, labels);
  SegmentMap seg = finalize_labels(std::move(labels), h, w);
  if (seg.size() != count) throw FormatError("segment map " + path.string() + ": segment count mismatch");
  return seg;
}

}  // namespace terralabel::superpixels
