#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "terralabel/clustering/fcm.hpp"
#include "terralabel/evaluation/protocols.hpp"
#include "terralabel/features/train.hpp"
#include "terralabel/graphs/gnn.hpp"
#include "terralabel/ingest/store.hpp"
#include "terralabel/matching/similarity.hpp"
#include "terralabel/projection/umap.hpp"

namespace terralabel::pipeline {

/// Node features for graph construction.
enum class FeatureSource {
  unet,   // segment means of the U-Net activation maps
  bands,  // segment means of the normalised bands (bypasses the CNN)
};

/// Every tunable of the pipeline. JSON keys match the field names.
struct RunConfig {
  std::size_t clusters = 8;
  std::size_t fcm_stride = 56;
  double fcm_m = 2.0;

  bool desk_scale = false;
  std::size_t unet_max_epochs = 200;
  std::size_t patience = 15;
  std::size_t batch_size = 4;
  double learning_rate = 1e-3;

  std::size_t n_segments = 500;
  double compactness = 10.0;

  FeatureSource features = FeatureSource::unet;
  std::size_t k = 8;
  graphs::GnnVariant variant = graphs::GnnVariant::gcn;
  std::size_t gnn_max_epochs = 200;
  std::size_t graphs_per_batch = 8;
  graphs::EmbeddingLayer layer = graphs::EmbeddingLayer::layer2;

  std::size_t n_neighbors = 15;
  double min_dist = 0.1;
  std::size_t umap_epochs = 200;

  std::uint64_t seed = 42;

  /// Overrides fields present in a JSON object; unknown keys are rejected.
  void merge_json(const std::string& text);
  std::string to_json() const;
  projection::UmapOptions umap() const;
  /// e.g. "GCN 8"
  std::string model_tag() const;
};

RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

std::string to_string(FeatureSource source);
FeatureSource parse_feature_source(const std::string& text);
std::string to_string(graphs::EmbeddingLayer layer);
graphs::EmbeddingLayer parse_layer(const std::string& text);

/// A chip store plus every derived artifact, laid out under the store root.
class Workspace {
 public:
  explicit Workspace(const std::filesystem::path& root);

  const ingest::ChipStore& store() const { return store_; }
  ingest::ChipStore& store() { return store_; }
  const std::filesystem::path& root() const { return store_.root(); }

  std::filesystem::path fcm_model(const RunConfig& c) const;
  std::filesystem::path unet_checkpoint(const RunConfig& c) const;
  std::filesystem::path activations(const RunConfig& c, const std::string& chip) const;
  std::filesystem::path segments(const RunConfig& c, const std::string& chip) const;
  std::filesystem::path graph(const RunConfig& c, const std::string& chip) const;
  std::filesystem::path gnn(const RunConfig& c) const;
  std::filesystem::path similarity(const RunConfig& c) const;
  std::filesystem::path chip_projection(const RunConfig& c) const;
  std::filesystem::path report(const std::string& name) const;
  std::filesystem::path labels() const;

  std::string graph_tag(const RunConfig& c) const;

 private:
  ingest::ChipStore store_;
};

using Progress = std::function<void(const std::string&)>;

clustering::FcmModel run_fcm(Workspace& ws, const RunConfig& c);
features::UNetTrainResult run_train_unet(Workspace& ws, const RunConfig& c, const Progress& progress = {});
void run_extract(Workspace& ws, const RunConfig& c);
void run_segment(Workspace& ws, const RunConfig& c);
void run_build_graphs(Workspace& ws, const RunConfig& c);
graphs::GnnTrainResult run_train_gnn(Workspace& ws, const RunConfig& c, const Progress& progress = {});

std::vector<graphs::SegmentGraph> load_graphs(const Workspace& ws, const RunConfig& c,
                                              std::optional<ingest::Split> split = std::nullopt);

/// Embeddings at c.layer for the given chips (the graph-generation layer needs no model).
std::vector<matching::SegmentEmbedding> embed_chips(const Workspace& ws, const RunConfig& c,
                                                    const std::vector<std::string>& chip_ids);

matching::SimilarityMatrix run_match(Workspace& ws, const RunConfig& c);
projection::Projection2D run_project(Workspace& ws, const RunConfig& c);
/// Point ids are "<chip_id>/<segment>".
projection::Projection2D project_segments(const Workspace& ws, const RunConfig& c,
                                          const std::vector<std::string>& chip_ids);

/// Test-split chips with their segmentation, raw values.
evaluation::EvalSet load_eval_set(const Workspace& ws, const RunConfig& c);
evaluation::MetricReport run_eval(const Workspace& ws, const RunConfig& c, evaluation::Protocol protocol,
                                  const evaluation::EvalSet* cached = nullptr);

enum class SweepAxis { k, n, layer };
SweepAxis parse_axis(const std::string& text);
std::string to_string(SweepAxis axis);

/// Re-runs the stages each value depends on (segment/graphs/GNN as needed) and evaluates.
std::vector<evaluation::MetricReport> run_sweep(Workspace& ws, const RunConfig& c, SweepAxis axis,
                                                const std::vector<std::string>& values,
                                                evaluation::Protocol protocol, const Progress& progress = {});

/// Stages from FCM to the chip projection, skipping artifacts that already exist.
void run_all(Workspace& ws, const RunConfig& c, const Progress& progress = {});

}  // namespace terralabel::pipeline
