#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "terralabel/evaluation/measures.hpp"
#include "terralabel/ingest/chips.hpp"
#include "terralabel/matching/hungarian.hpp"
#include "terralabel/matching/similarity.hpp"
#include "terralabel/superpixels/slic.hpp"

namespace terralabel::evaluation {

struct MeasureOptions {
  std::vector<std::size_t> display_bands = {3, 2, 1};  // zero-based; grey = their mean
  std::size_t levels = kGreyLevels;
  std::size_t ssim_size = 16;      // segment PC1 boxes are resampled to ssim_size^2
  std::size_t sample_stride = 7;   // pixel subsampling for the global PCA / grey range fit
};

/// Per-segment inputs to the four measures.
struct SegmentProfile {
  GlcmStats glcm;                        // bounding box, quantised display grey
  std::array<double, kLbpBins> lbp{};    // bounding box, quantised display grey
  std::vector<double> pc1;               // ssim_size^2, pixels outside the segment set to its mean
  std::vector<double> spectrum;          // mean raw spectrum of the segment pixels
};

struct SegmentRef {
  std::uint32_t chip = 0;  // index into the evaluation set
  std::uint32_t segment = 0;

  auto operator<=>(const SegmentRef&) const = default;
};

/// Test-split chips (raw values) with their segmentation and per-segment embeddings.
/// Profiles are computed once; the PCA basis and grey range are shared across chips.
class EvalSet {
 public:
  EvalSet(std::vector<ingest::Chip> chips, std::vector<superpixels::SegmentMap> segments,
          const MeasureOptions& options = {});

  std::size_t chip_count() const { return chips_.size(); }
  const ingest::Chip& chip(std::size_t i) const { return chips_[i]; }
  const superpixels::SegmentMap& segments(std::size_t i) const { return segments_[i]; }
  const std::vector<SegmentRef>& refs() const { return refs_; }
  const SegmentProfile& profile(SegmentRef r) const { return profiles_[offsets_[r.chip] + r.segment]; }
  std::size_t index(SegmentRef r) const { return offsets_[r.chip] + r.segment; }
  double pc1_range() const { return pc1_range_; }

  /// Spatially nearest segments of the same chip by centroid, nearest first.
  std::span<const std::uint32_t> spatial_neighbours(SegmentRef r) const;

 private:
  std::vector<ingest::Chip> chips_;
  std::vector<superpixels::SegmentMap> segments_;
  std::vector<std::size_t> offsets_;
  std::vector<SegmentRef> refs_;
  std::vector<SegmentProfile> profiles_;
  std::vector<std::vector<std::uint32_t>> neighbours_;  // per segment index, up to 8
  double pc1_range_ = 1.0;
};

struct PairMeasures {
  double glcm = 0;
  double lbp = 0;
  double ssim = 0;
  double sam = 0;  // NaN when undefined
};

PairMeasures measure_pair(const EvalSet& set, SegmentRef a, SegmentRef b);

/// Embedding rows aligned with EvalSet chips: embeddings[i].nodes == set.segments(i).size().
using Embeddings = std::vector<matching::SegmentEmbedding>;

/// Nearest other segment in feature space (Euclidean over all chips), ties to the lower index.
std::vector<SegmentRef> feature_matches(const EvalSet& set, const Embeddings& embeddings);

/// Hungarian pairing of x's spatial neighbours with y's on Euclidean feature
/// distance. Pairs are (neighbour of x, neighbour of y) segment ids.
std::vector<std::pair<std::uint32_t, std::uint32_t>> match_neighbourhoods(const EvalSet& set,
                                                                          const Embeddings& embeddings,
                                                                          SegmentRef x, SegmentRef y);

enum class Protocol { feature, context };

struct MetricReport {
  std::string model;  // e.g. "GCN 8"
  Protocol protocol = Protocol::feature;
  std::map<std::string, std::string> params;  // K, N, layer, ...
  double glcm = 0;   // lower is better
  double lbp = 0;    // higher is better
  double ssim = 0;   // higher is better
  double sam = 0;    // lower is better, radians
  std::size_t segments = 0;
  std::size_t sam_undefined = 0;
  double seconds = 0;
};

MetricReport eval_feature_based(const EvalSet& set, const Embeddings& embeddings, std::string model = {});
MetricReport eval_context_aware(const EvalSet& set, const Embeddings& embeddings, std::string model = {});

std::string to_string(Protocol protocol);
Protocol parse_protocol(std::string_view text);

/// Rows = reports, columns GLCM↓ LBP↑ SSIM↑ SAM↓.
std::string format_table(std::span<const MetricReport> reports, const std::string& title = {});
void save_reports(const std::filesystem::path& path, std::span<const MetricReport> reports);
std::vector<MetricReport> load_reports(const std::filesystem::path& path);

}  // namespace terralabel::evaluation
