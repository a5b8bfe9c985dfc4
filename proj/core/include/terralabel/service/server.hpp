#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "terralabel/pipeline/pipeline.hpp"
#include "terralabel/service/thumbnail.hpp"

namespace terralabel::service {

struct ServiceOptions {
  std::filesystem::path store;
  pipeline::RunConfig config;
  std::array<std::size_t, 3> rgb_bands = kDefaultRgbBands;
};

/// Artifacts the service needs for `config`; empty when everything is present.
std::vector<std::string> missing_artifacts(const pipeline::Workspace& ws, const pipeline::RunConfig& config);

/// Run-length encoding of one segment in raster order: start, length, start, length, ...
std::vector<std::uint32_t> segment_rle(const superpixels::SegmentMap& map, std::uint32_t segment);

/// HTTP API over a workspace:
///   GET  /api/meta
///   GET  /api/projection/chips
///   POST /api/projection/segments {chip_ids: [...]} -> {job_id}
///   GET  /api/jobs/{id}
///   GET  /api/chips/{id}/thumbnail.png
///   GET  /api/chips/{id}/segments
///   POST /api/labels (one record, an array, or {records: [...]})
///   GET  /api/labels/export?format=csv|masks
class Service {
 public:
  /// Throws NotFound listing every missing artifact.
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Serves on a background thread; port 0 picks a free port. Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace terralabel::service
