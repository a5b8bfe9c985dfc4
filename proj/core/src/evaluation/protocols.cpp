#include "terralabel/evaluation/protocols.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

#include "terralabel/common/binary_io.hpp"
#include "terralabel/common/error.hpp"
#include "terralabel/common/log.hpp"
#include "terralabel/common/parallel.hpp"
#include "terralabel/graphs/graph.hpp"

namespace terralabel::evaluation {

using nlohmann::json;

namespace {

constexpr std::size_t kContextNeighbours = 8;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double euclidean(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

void check_embeddings(const EvalSet& set, const Embeddings& e) {
  if (e.size() != set.chip_count()) throw InvalidArgument("evaluation: one embedding per chip required");
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (e[i].nodes != set.segments(i).size()) {
      throw InvalidArgument("evaluation: embedding of chip " + set.chip(i).id + " has " + std::to_string(e[i].nodes) +
                            " rows for " + std::to_string(set.segments(i).size()) + " segments");
    }
    if (e[i].dim != e[0].dim) throw InvalidArgument("evaluation: embedding widths differ between chips");
  }
}

std::span<const float> row(const Embeddings& e, SegmentRef r) { return e[r.chip].row(r.segment); }

struct Accumulator {
  double glcm = 0, lbp = 0, ssim = 0, sam = 0;
  std::size_t n = 0, sam_n = 0;

  void add(const PairMeasures& m) {
    glcm += m.glcm;
    lbp += m.lbp;
    ssim += m.ssim;
    ++n;
    if (!std::isnan(m.sam)) {
      sam += m.sam;
      ++sam_n;
    }
  }
  PairMeasures mean() const {
    return {glcm / double(n), lbp / double(n), ssim / double(n),
            sam_n ? sam / double(sam_n) : std::numeric_limits<double>::quiet_NaN()};
  }
};

MetricReport reduce(std::span<const PairMeasures> per_segment, std::string model, Protocol protocol) {
  Accumulator acc;
  for (const auto& m : per_segment) acc.add(m);
  const auto mean = acc.mean();
  MetricReport r;
  r.model = std::move(model);
  r.protocol = protocol;
  r.glcm = mean.glcm;
  r.lbp = mean.lbp;
  r.ssim = mean.ssim;
  r.sam = mean.sam;
  r.segments = per_segment.size();
  r.sam_undefined = acc.n - acc.sam_n;
  if (r.sam_undefined) log::warn("evaluation: " + std::to_string(r.sam_undefined) + " zero-norm spectra skipped in SAM");
  return r;
}

}  // namespace

EvalSet::EvalSet(std::vector<ingest::Chip> chips, std::vector<superpixels::SegmentMap> segments,
                 const MeasureOptions& options)
    : chips_(std::move(chips)), segments_(std::move(segments)) {
  if (chips_.size() != segments_.size()) throw InvalidArgument("EvalSet: one segment map per chip required");
  if (chips_.empty()) throw InvalidArgument("EvalSet: no chips");
  const std::size_t bands = chips_[0].bands;
  for (std::size_t b : options.display_bands)
    if (b >= bands) throw InvalidArgument("EvalSet: display band " + std::to_string(b) + " out of range");
  for (std::size_t i = 0; i < chips_.size(); ++i) {
    if (chips_[i].bands != bands) throw InvalidArgument("EvalSet: chips differ in band count");
    if (segments_[i].height != chips_[i].size || segments_[i].width != chips_[i].size) {
      throw InvalidArgument("EvalSet: segment map of chip " + chips_[i].id + " does not match its size");
    }
  }

  // Shared PC1 basis and grey range, fitted on a pixel subsample of every chip.
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(long(bands));
  Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(long(bands), long(bands));
  double grey_lo = std::numeric_limits<double>::infinity(), grey_hi = -grey_lo;
  std::size_t count = 0;
  auto grey_of = [&](const ingest::Chip& c, std::size_t p) {
    double g = 0;
    for (std::size_t b : options.display_bands) g += c.data[b * c.pixels() + p];
    return g / double(options.display_bands.size());
  };
  for (const auto& c : chips_) {
    for (std::size_t p = 0; p < c.pixels(); p += options.sample_stride) {
      Eigen::VectorXd x(static_cast<Eigen::Index>(bands));
      for (std::size_t b = 0; b < bands; ++b) x[long(b)] = c.data[b * c.pixels() + p];
      sum += x;
      outer += x * x.transpose();
      ++count;
    }
    for (std::size_t p = 0; p < c.pixels(); ++p) {
      const double g = grey_of(c, p);
      grey_lo = std::min(grey_lo, g);
      grey_hi = std::max(grey_hi, g);
    }
  }
  const Eigen::VectorXd mu = sum / double(count);
  const Eigen::MatrixXd cov = outer / double(count) - mu * mu.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  Eigen::VectorXd pc1 = eig.eigenvectors().col(long(bands) - 1);
  Eigen::Index arg = 0;
  pc1.cwiseAbs().maxCoeff(&arg);
  if (pc1[arg] < 0) pc1 = -pc1;

  offsets_.push_back(0);
  for (std::size_t i = 0; i < chips_.size(); ++i) {
    for (std::uint32_t s = 0; s < segments_[i].size(); ++s) refs_.push_back({std::uint32_t(i), s});
    offsets_.push_back(offsets_.back() + segments_[i].size());
  }
  profiles_.resize(refs_.size());
  neighbours_.resize(refs_.size());

  std::vector<std::vector<double>> pc1_planes(chips_.size());
  double pc1_lo = std::numeric_limits<double>::infinity(), pc1_hi = -pc1_lo;
  for (std::size_t i = 0; i < chips_.size(); ++i) {
    const auto& c = chips_[i];
    auto& plane = pc1_planes[i];
    plane.resize(c.pixels());
    for (std::size_t p = 0; p < c.pixels(); ++p) {
      double v = 0;
      for (std::size_t b = 0; b < bands; ++b) v += (c.data[b * c.pixels() + p] - mu[long(b)]) * pc1[long(b)];
      plane[p] = v;
      pc1_lo = std::min(pc1_lo, v);
      pc1_hi = std::max(pc1_hi, v);
    }
  }
  pc1_range_ = pc1_hi > pc1_lo ? pc1_hi - pc1_lo : 1.0;
  const double grey_span = grey_hi > grey_lo ? grey_hi - grey_lo : 1.0;
  const std::size_t levels = options.levels, n = options.ssim_size;

  parallel_for(chips_.size(), [&](std::size_t i) {
    const auto& c = chips_[i];
    const auto& seg = segments_[i];
    const auto pixels = seg.pixel_lists();
    for (std::uint32_t s = 0; s < seg.size(); ++s) {
      const auto& box = seg.segments[s].bbox;
      SegmentProfile& prof = profiles_[offsets_[i] + s];

      GreyPatch patch{box.height(), box.width(), std::vector<std::uint8_t>(box.height() * box.width())};
      for (std::size_t r = 0; r < box.height(); ++r)
        for (std::size_t q = 0; q < box.width(); ++q) {
          const double g = grey_of(c, (box.row0 + r) * c.size + box.col0 + q);
          const auto level = static_cast<std::size_t>((g - grey_lo) / grey_span * double(levels));
          patch.values[r * box.width() + q] = static_cast<std::uint8_t>(std::min(level, levels - 1));
        }
      if (patch.values.size() >= 2) {
        prof.glcm = glcm_stats(glcm_matrix(patch, levels), levels);
        prof.lbp = lbp_histogram(patch);
      } else {
        log::warn("evaluation: 1-pixel segment " + std::to_string(s) + " of chip " + c.id + " has no texture");
      }

      prof.spectrum.assign(bands, 0.0);
      double pc1_mean = 0;
      for (std::uint32_t p : pixels[s]) {
        for (std::size_t b = 0; b < bands; ++b) prof.spectrum[b] += c.data[b * c.pixels() + p];
        pc1_mean += pc1_planes[i][p];
      }
      for (double& v : prof.spectrum) v /= double(pixels[s].size());
      pc1_mean /= double(pixels[s].size());

      prof.pc1.resize(n * n);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t q = 0; q < n; ++q) {
          const std::size_t rr = box.row0 + (2 * r + 1) * box.height() / (2 * n);
          const std::size_t cc = box.col0 + (2 * q + 1) * box.width() / (2 * n);
          const std::size_t p = rr * c.size + cc;
          prof.pc1[r * n + q] = seg.labels[p] == s ? pc1_planes[i][p] : pc1_mean;
        }
    }
    if (seg.size() >= 2) {
      std::vector<double> centroids;
      for (const auto& sg : seg.segments) {
        centroids.push_back(sg.centroid_row);
        centroids.push_back(sg.centroid_col);
      }
      for (const auto& e : graphs::knn_edges(centroids, kContextNeighbours)) {
        neighbours_[offsets_[i] + e[0]].push_back(e[1]);
      }
    }
  });
}

std::span<const std::uint32_t> EvalSet::spatial_neighbours(SegmentRef r) const { return neighbours_[index(r)]; }

PairMeasures measure_pair(const EvalSet& set, SegmentRef a, SegmentRef b) {
  const auto& pa = set.profile(a);
  const auto& pb = set.profile(b);
  return {glcm_dissimilarity(pa.glcm, pb.glcm), lbp_similarity(pa.lbp, pb.lbp), ssim(pa.pc1, pb.pc1, set.pc1_range()),
          sam(pa.spectrum, pb.spectrum)};
}

std::vector<SegmentRef> feature_matches(const EvalSet& set, const Embeddings& embeddings) {
  check_embeddings(set, embeddings);
  const auto& refs = set.refs();
  if (refs.size() < 2) throw InvalidArgument("evaluation: need at least two segments");
  std::vector<SegmentRef> match(refs.size());
  parallel_for(refs.size(), [&](std::size_t i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    const auto x = row(embeddings, refs[i]);
    for (std::size_t j = 0; j < refs.size(); ++j) {
      if (j == i) continue;
      const double d = euclidean(x, row(embeddings, refs[j]));
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    match[i] = refs[arg];
  });
  return match;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> match_neighbourhoods(const EvalSet& set,
                                                                          const Embeddings& embeddings,
                                                                          SegmentRef x, SegmentRef y) {
  const auto nx = set.spatial_neighbours(x), ny = set.spatial_neighbours(y);
  if (nx.empty() || ny.empty()) return {};
  std::vector<double> cost(nx.size() * ny.size());
  for (std::size_t i = 0; i < nx.size(); ++i)
    for (std::size_t j = 0; j < ny.size(); ++j) {
      cost[i * ny.size() + j] =
          euclidean(embeddings[x.chip].row(nx[i]), embeddings[y.chip].row(ny[j]));
    }
  const auto a = matching::hungarian(cost, nx.size(), ny.size());
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  for (const auto& [i, j] : a.pairs) pairs.emplace_back(nx[i], ny[j]);
  return pairs;
}

MetricReport eval_feature_based(const EvalSet& set, const Embeddings& embeddings, std::string model) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto match = feature_matches(set, embeddings);
  std::vector<PairMeasures> per(match.size());
  parallel_for(match.size(), [&](std::size_t i) { per[i] = measure_pair(set, set.refs()[i], match[i]); });
  auto r = reduce(per, std::move(model), Protocol::feature);
  r.seconds = seconds_since(t0);
  return r;
}

MetricReport eval_context_aware(const EvalSet& set, const Embeddings& embeddings, std::string model) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto match = feature_matches(set, embeddings);
  std::vector<PairMeasures> per(match.size());
  parallel_for(match.size(), [&](std::size_t i) {
    const SegmentRef x = set.refs()[i], y = match[i];
    Accumulator acc;
    acc.add(measure_pair(set, x, y));
    for (const auto& [a, b] : match_neighbourhoods(set, embeddings, x, y)) {
      acc.add(measure_pair(set, {x.chip, a}, {y.chip, b}));
    }
    per[i] = acc.mean();
  });
  auto r = reduce(per, std::move(model), Protocol::context);
  r.seconds = seconds_since(t0);
  return r;
}

std::string to_string(Protocol protocol) { return protocol == Protocol::feature ? "feature" : "context"; }

Protocol parse_protocol(std::string_view text) {
  if (text == "feature") return Protocol::feature;
  if (text == "context") return Protocol::context;
  throw InvalidArgument("unknown protocol '" + std::string(text) + "' (expected feature or context)");
}

std::string format_table(std::span<const MetricReport> reports, const std::string& title) {
  std::ostringstream out;
  if (!title.empty()) out << title << "\n";
  std::size_t width = 5;
  for (const auto& r : reports) {
    std::string label = r.model;
    for (const auto& [k, v] : r.params) label += " " + k + "=" + v;
    width = std::max(width, label.size());
  }
  char line[256];
  // Each arrow is 3 bytes but one column wide, hence %11s.
  std::snprintf(line, sizeof line, "%-*s  %11s  %11s  %11s  %11s\n", int(width), "Model", "GLCM↓", "LBP↑", "SSIM↑",
                "SAM↓");
  out << line;
  for (const auto& r : reports) {
    std::string label = r.model;
    for (const auto& [k, v] : r.params) label += " " + k + "=" + v;
    std::snprintf(line, sizeof line, "%-*s  %9.4f  %9.4f  %9.4f  %9.4f\n", int(width), label.c_str(), r.glcm, r.lbp,
                  r.ssim, r.sam);
    out << line;
  }
  return out.str();
}

void save_reports(const std::filesystem::path& path, std::span<const MetricReport> reports) {
  json rows = json::array();
  for (const auto& r : reports) {
    rows.push_back({{"model", r.model},
                    {"protocol", to_string(r.protocol)},
                    {"params", r.params},
                    {"glcm", r.glcm},
                    {"lbp", r.lbp},
                    {"ssim", r.ssim},
                    {"sam", std::isnan(r.sam) ? json(nullptr) : json(r.sam)},
                    {"segments", r.segments},
                    {"sam_undefined", r.sam_undefined},
                    {"seconds", r.seconds}});
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  io::write_text_file(path, json{{"reports", rows}}.dump(2));
}

std::vector<MetricReport> load_reports(const std::filesystem::path& path) {
  try {
    const json j = json::parse(io::read_text_file(path));
    std::vector<MetricReport> out;
    for (const auto& r : j.at("reports")) {
      MetricReport m;
      m.model = r.at("model").get<std::string>();
      m.protocol = parse_protocol(r.at("protocol").get<std::string>());
      m.params = r.at("params").get<std::map<std::string, std::string>>();
      m.glcm = r.at("glcm").get<double>();
      m.lbp = r.at("lbp").get<double>();
      m.ssim = r.at("ssim").get<double>();
      m.sam = r.at("sam").is_null() ? std::numeric_limits<double>::quiet_NaN() : r.at("sam").get<double>();
      m.segments = r.at("segments").get<std::size_t>();
      m.sam_undefined = r.value("sam_undefined", std::size_t{0});
      m.seconds = r.value("seconds", 0.0);
      out.push_back(std::move(m));
    }
    return out;
  } catch (const json::exception& e) {
    throw FormatError("report " + path.string() + ": " + e.what());
  }
}

}  // namespace terralabel::evaluation
