#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "terralabel/graphs/graph.hpp"
#include "terralabel/numerics/adam.hpp"
#include "terralabel/numerics/ops.hpp"

namespace terralabel::graphs {

/// Edge lists for message passing over one graph or a disjoint union of
/// graphs: message e flows source[e] -> target[e]; every node has a self-loop.
struct MessageGraph {
  std::size_t nodes = 0;
  std::vector<std::uint32_t> source;
  std::vector<std::uint32_t> target;
  std::vector<float> gcn_weight;  // 1 / sqrt(d_i d_j), d = row degree of A + I

  static MessageGraph from(const SegmentGraph& graph);
  /// Disjoint union; node ids of graph g are offset by the sizes of graphs before it.
  static MessageGraph batch(std::span<const SegmentGraph* const> graphs);
  static MessageGraph from_edges(std::size_t nodes, std::span<const Edge> edges);
};

/// Parameters of one graph attention head.
template <typename T>
struct GatHead {
  numerics::BasicTensor<T> weight;   // [in, out]
  numerics::BasicTensor<T> a_left;   // [out, 1], applied to LeakyReLU(W x_i)
  numerics::BasicTensor<T> a_right;  // [out, 1], applied to LeakyReLU(W x_j)
};

/// Attention coefficients alpha_ij (one per message) of a single head:
/// softmax over j in N(i) + {i} of a^T LeakyReLU([W x_i || W x_j]), slope 0.2.
template <typename T>
numerics::BasicTensor<T> gat_attention(const numerics::BasicTensor<T>& x, const MessageGraph& graph,
                                       const GatHead<T>& head);

/// Concatenation over heads of sum_j alpha_ij W^k x_j (no activation applied).
template <typename T>
numerics::BasicTensor<T> gat_layer(const numerics::BasicTensor<T>& x, const MessageGraph& graph,
                                   const std::vector<GatHead<T>>& heads);

/// D^-1/2 (A + I) D^-1/2 X W (no activation applied).
template <typename T>
numerics::BasicTensor<T> gcn_layer(const numerics::BasicTensor<T>& x, const MessageGraph& graph,
                                   const numerics::BasicTensor<T>& weight);

/// Cross-entropy between softmax(logits) and soft targets, averaged over nodes.
template <typename T>
numerics::BasicTensor<T> soft_cross_entropy(const numerics::BasicTensor<T>& logits,
                                            const numerics::BasicTensor<T>& targets);

enum class GnnVariant { gat, gcn };

std::string to_string(GnnVariant variant);
GnnVariant parse_variant(const std::string& text);

struct GnnConfig {
  GnnVariant variant = GnnVariant::gat;
  std::size_t in_dim = 64;
  std::size_t classes = 8;
  std::size_t gat_hidden = 8;
  std::size_t gat_heads = 8;
  std::size_t gcn_hidden = 60;

  /// Width of the layer-2 embedding: hidden x heads for GAT, hidden for GCN.
  std::size_t embedding_dim() const { return variant == GnnVariant::gat ? gat_hidden * gat_heads : gcn_hidden; }
};

struct GnnOutputs {
  numerics::Tensor layer1;  // after ELU, input to layer 2
  numerics::Tensor layer2;  // pre-activation: the segment embedding
  numerics::Tensor logits;  // layer 3, one row per node
};

/// Three message-passing layers with ELU between them. GAT: layer 1 and 2
/// have `gat_heads` heads of width `gat_hidden` (concatenated), layer 3 a
/// single head of width `classes`. GCN: widths gcn_hidden, gcn_hidden, classes.
class GnnModel {
 public:
  explicit GnnModel(const GnnConfig& config, std::uint64_t seed = 42);

  const GnnConfig& config() const { return config_; }
  numerics::ParameterList<float>& parameters() { return params_; }
  const numerics::ParameterList<float>& parameters() const { return params_; }

  GnnOutputs forward(const numerics::Tensor& x, const MessageGraph& graph) const;

  void save(const std::filesystem::path& path) const;
  static GnnModel load(const std::filesystem::path& path);

 private:
  void add_gat_layer(const std::string& name, std::size_t in, std::size_t out, std::size_t heads,
                     std::mt19937_64& rng);
  numerics::Tensor apply_layer(std::size_t layer, const numerics::Tensor& x, const MessageGraph& graph) const;

  GnnConfig config_;
  std::vector<std::vector<GatHead<float>>> gat_;  // per layer
  std::vector<numerics::Tensor> gcn_;             // per layer
  numerics::ParameterList<float> params_;
};

/// Which representation embed() returns: the node input features, layer 1
/// (post-activation), or the layer-2 pre-activation.
enum class EmbeddingLayer { generation = 0, layer1 = 1, layer2 = 2 };

/// S x d embedding matrix of one graph.
std::vector<float> embed(const GnnModel& model, const SegmentGraph& graph,
                         EmbeddingLayer layer = EmbeddingLayer::layer2, std::size_t* dim = nullptr);

struct GnnTrainOptions {
  std::size_t max_epochs = 200;
  std::size_t patience = 15;
  std::size_t graphs_per_batch = 8;
  numerics::AdamOptions adam;
  std::uint64_t seed = 42;
};

struct GnnEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct GnnTrainResult {
  double initial_val_loss = 0.0;
  double best_val_loss = 0.0;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
  std::vector<GnnEpoch> history;
};

/// Mean per-node soft cross-entropy over graphs that carry targets.
double evaluate_loss(const GnnModel& model, std::span<const SegmentGraph> graphs);

/// Minimises soft cross-entropy of layer-3 softmax against each graph's
/// targets; early stopping on `validation` (training loss when empty).
/// The model ends holding the best weights.
GnnTrainResult train_gnn(GnnModel& model, std::span<const SegmentGraph> train,
                         std::span<const SegmentGraph> validation, const GnnTrainOptions& options,
                         const std::function<void(const GnnEpoch&)>& on_epoch = {});

}  // namespace terralabel::graphs
