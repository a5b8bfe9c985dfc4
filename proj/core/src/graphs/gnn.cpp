#include "terralabel/graphs/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "terralabel/common/error.hpp"
#include "terralabel/common/log.hpp"
#include "terralabel/numerics/checkpoint.hpp"

namespace terralabel::graphs {

using numerics::BasicTensor;
using numerics::Tensor;
namespace ops = numerics;

MessageGraph MessageGraph::from_edges(std::size_t nodes, std::span<const Edge> edges) {
  MessageGraph g;
  g.nodes = nodes;
  std::vector<std::size_t> degree(nodes, 1);
  for (const auto& e : edges) {
    if (e[0] >= nodes || e[1] >= nodes) throw InvalidArgument("message graph: edge out of range");
    if (e[0] == e[1]) throw InvalidArgument("message graph: explicit self-loop; loops are implicit");
    ++degree[e[0]];
  }
  g.source.reserve(edges.size() + nodes);
  g.target.reserve(edges.size() + nodes);
  for (std::size_t i = 0; i < nodes; ++i) {
    g.target.push_back(static_cast<std::uint32_t>(i));
    g.source.push_back(static_cast<std::uint32_t>(i));
  }
  // Node i aggregates from its own K nearest: edge (i, j) carries j -> i.
  for (const auto& e : edges) {
    g.target.push_back(e[0]);
    g.source.push_back(e[1]);
  }
  g.gcn_weight.resize(g.source.size());
  for (std::size_t m = 0; m < g.source.size(); ++m) {
    g.gcn_weight[m] = static_cast<float>(1.0 / std::sqrt(double(degree[g.target[m]]) * double(degree[g.source[m]])));
  }
  return g;
}

MessageGraph MessageGraph::from(const SegmentGraph& graph) { return from_edges(graph.nodes, graph.edges); }

MessageGraph MessageGraph::batch(std::span<const SegmentGraph* const> graphs) {
  std::vector<Edge> edges;
  std::size_t offset = 0;
  for (const SegmentGraph* g : graphs) {
    for (const auto& e : g->edges) {
      edges.push_back({static_cast<std::uint32_t>(e[0] + offset), static_cast<std::uint32_t>(e[1] + offset)});
    }
    offset += g->nodes;
  }
  return from_edges(offset, edges);
}

namespace {

template <typename T>
void check_input(const char* op, const BasicTensor<T>& x, const MessageGraph& graph) {
  if (x.rank() != 2 || x.dim(0) != graph.nodes) {
    throw ShapeError(std::string(op) + ": features " + ops::shape_string(x.shape()) + " for " +
                     std::to_string(graph.nodes) + " nodes");
  }
  std::vector<bool> loop(graph.nodes, false);
  for (std::size_t m = 0; m < graph.source.size(); ++m) {
    if (graph.source[m] == graph.target[m]) loop[graph.source[m]] = true;
  }
  if (std::find(loop.begin(), loop.end(), false) != loop.end()) {
    throw InvalidArgument(std::string(op) + ": every node needs a self-loop");
  }
}

}  // namespace

template <typename T>
BasicTensor<T> gat_attention(const BasicTensor<T>& x, const MessageGraph& graph, const GatHead<T>& head) {
  check_input("gat_attention", x, graph);
  auto h = ops::matmul(x, head.weight);
  auto lh = ops::leaky_relu(h, T(0.2));
  auto left = ops::index_rows(ops::matmul(lh, head.a_left), graph.target);
  auto right = ops::index_rows(ops::matmul(lh, head.a_right), graph.source);
  auto score = ops::reshape(ops::add(left, right), {graph.source.size()});
  return ops::segment_softmax(score, graph.target, graph.nodes);
}

template <typename T>
BasicTensor<T> gat_layer(const BasicTensor<T>& x, const MessageGraph& graph, const std::vector<GatHead<T>>& heads) {
  std::vector<BasicTensor<T>> outs;
  for (const auto& head : heads) {
    auto alpha = gat_attention(x, graph, head);
    auto h = ops::matmul(x, head.weight);
    auto messages = ops::scale_rows(ops::index_rows(h, graph.source), alpha);
    outs.push_back(ops::scatter_add_rows(messages, graph.target, graph.nodes));
  }
  return outs.size() == 1 ? outs.front() : ops::concat(outs, 1);
}

template <typename T>
BasicTensor<T> gcn_layer(const BasicTensor<T>& x, const MessageGraph& graph, const BasicTensor<T>& weight) {
  check_input("gcn_layer", x, graph);
  std::vector<T> w(graph.gcn_weight.begin(), graph.gcn_weight.end());
  const std::size_t count = w.size();
  auto norm = BasicTensor<T>::from({count}, std::move(w));
  auto h = ops::matmul(x, weight);
  return ops::scatter_add_rows(ops::scale_rows(ops::index_rows(h, graph.source), norm), graph.target, graph.nodes);
}

template <typename T>
BasicTensor<T> soft_cross_entropy(const BasicTensor<T>& logits, const BasicTensor<T>& targets) {
  if (logits.shape() != targets.shape() || logits.rank() != 2) {
    throw ShapeError("soft_cross_entropy: logits " + ops::shape_string(logits.shape()) + " vs targets " +
                     ops::shape_string(targets.shape()));
  }
  auto per_node = ops::sum(ops::mul(targets, ops::log_softmax(logits, 1)), 1);
  return ops::mul_scalar(ops::mean(per_node), T(-1));
}

#define TERRALABEL_INSTANTIATE_GNN(T)                                                                    \
  template BasicTensor<T> gat_attention(const BasicTensor<T>&, const MessageGraph&, const GatHead<T>&);  \
  template BasicTensor<T> gat_layer(const BasicTensor<T>&, const MessageGraph&,                          \
                                    const std::vector<GatHead<T>>&);                                     \
  template BasicTensor<T> gcn_layer(const BasicTensor<T>&, const MessageGraph&, const BasicTensor<T>&);  \
  template BasicTensor<T> soft_cross_entropy(const BasicTensor<T>&, const BasicTensor<T>&);

TERRALABEL_INSTANTIATE_GNN(float)
TERRALABEL_INSTANTIATE_GNN(double)

std::string to_string(GnnVariant variant) { return variant == GnnVariant::gat ? "gat" : "gcn"; }

GnnVariant parse_variant(const std::string& text) {
  if (text == "gat" || text == "GAT") return GnnVariant::gat;
  if (text == "gcn" || text == "GCN") return GnnVariant::gcn;
  throw InvalidArgument("unknown GNN variant '" + text + "' (expected gat or gcn)");
}

GnnModel::GnnModel(const GnnConfig& config, std::uint64_t seed) : config_(config) {
  if (config_.in_dim == 0 || config_.classes == 0) throw InvalidArgument("gnn: dimensions must be positive");
  std::mt19937_64 rng(seed);
  if (config_.variant == GnnVariant::gat) {
    const std::size_t width = config_.gat_hidden * config_.gat_heads;
    add_gat_layer("l1", config_.in_dim, config_.gat_hidden, config_.gat_heads, rng);
    add_gat_layer("l2", width, config_.gat_hidden, config_.gat_heads, rng);
    add_gat_layer("l3", width, config_.classes, 1, rng);
  } else {
    const std::size_t dims[4] = {config_.in_dim, config_.gcn_hidden, config_.gcn_hidden, config_.classes};
    for (std::size_t l = 0; l < 3; ++l) {
      Tensor w = ops::glorot_uniform<float>({dims[l], dims[l + 1]}, dims[l], dims[l + 1], rng);
      w.set_requires_grad(true);
      params_.push_back({"l" + std::to_string(l + 1) + ".weight", w});
      gcn_.push_back(w);
    }
  }
}

void GnnModel::add_gat_layer(const std::string& name, std::size_t in, std::size_t out, std::size_t heads,
                             std::mt19937_64& rng) {
  std::vector<GatHead<float>> layer;
  for (std::size_t k = 0; k < heads; ++k) {
    GatHead<float> h{ops::glorot_uniform<float>({in, out}, in, out, rng),
                     ops::glorot_uniform<float>({out, 1}, out, 1, rng),
                     ops::glorot_uniform<float>({out, 1}, out, 1, rng)};
    const std::string prefix = name + ".head" + std::to_string(k);
    for (auto* t : {&h.weight, &h.a_left, &h.a_right}) t->set_requires_grad(true);
    params_.push_back({prefix + ".weight", h.weight});
    params_.push_back({prefix + ".a_left", h.a_left});
    params_.push_back({prefix + ".a_right", h.a_right});
    layer.push_back(std::move(h));
  }
  gat_.push_back(std::move(layer));
}

Tensor GnnModel::apply_layer(std::size_t layer, const Tensor& x, const MessageGraph& graph) const {
  return config_.variant == GnnVariant::gat ? gat_layer(x, graph, gat_[layer]) : gcn_layer(x, graph, gcn_[layer]);
}

GnnOutputs GnnModel::forward(const Tensor& x, const MessageGraph& graph) const {
  if (x.rank() != 2 || x.dim(1) != config_.in_dim) {
    throw ShapeError("gnn: node features " + ops::shape_string(x.shape()) + ", model expects width " +
                     std::to_string(config_.in_dim));
  }
  GnnOutputs out;
  out.layer1 = ops::elu(apply_layer(0, x, graph));
  out.layer2 = apply_layer(1, out.layer1, graph);
  out.logits = apply_layer(2, ops::elu(out.layer2), graph);
  return out;
}

void GnnModel::save(const std::filesystem::path& path) const {
  auto state = params_;
  for (auto& p : state) p.tensor = p.tensor.detach();
  state.push_back({"config", Tensor::from({6}, {float(config_.variant == GnnVariant::gat ? 0 : 1),
                                                float(config_.in_dim), float(config_.classes),
                                                float(config_.gat_hidden), float(config_.gat_heads),
                                                float(config_.gcn_hidden)})});
  ops::save_checkpoint(path, state);
}

GnnModel GnnModel::load(const std::filesystem::path& path) {
  const auto state = ops::load_checkpoint(path);
  auto it = std::find_if(state.begin(), state.end(), [](const auto& t) { return t.name == "config"; });
  if (it == state.end() || it->tensor.numel() != 6) {
    throw FormatError("gnn checkpoint " + path.string() + " has no config record");
  }
  auto v = it->tensor.data();
  GnnConfig config{v[0] == 0 ? GnnVariant::gat : GnnVariant::gcn, std::size_t(v[1]), std::size_t(v[2]),
                   std::size_t(v[3]), std::size_t(v[4]), std::size_t(v[5])};
  GnnModel model(config);
  ops::assign_parameters(model.params_, state);
  return model;
}

std::vector<float> embed(const GnnModel& model, const SegmentGraph& graph, EmbeddingLayer layer, std::size_t* dim) {
  if (layer == EmbeddingLayer::generation) {
    if (dim) *dim = graph.feature_dim;
    return graph.features;
  }
  const Tensor x = Tensor::from({graph.nodes, graph.feature_dim}, graph.features);
  const auto out = model.forward(x, MessageGraph::from(graph));
  const Tensor& t = layer == EmbeddingLayer::layer1 ? out.layer1 : out.layer2;
  if (dim) *dim = t.dim(1);
  return std::vector<float>(t.data().begin(), t.data().end());
}

namespace {

struct GraphBatch {
  Tensor features, targets;
  MessageGraph graph;
};

GraphBatch make_batch(std::span<const SegmentGraph* const> graphs, std::size_t classes) {
  GraphBatch b;
  std::vector<float> x, t;
  std::size_t nodes = 0, dim = graphs.front()->feature_dim;
  for (const SegmentGraph* g : graphs) {
    if (g->target_dim != classes) {
      throw InvalidArgument("gnn: graph " + g->chip_id + " has " + std::to_string(g->target_dim) +
                            " target classes, model has " + std::to_string(classes));
    }
    x.insert(x.end(), g->features.begin(), g->features.end());
    t.insert(t.end(), g->targets.begin(), g->targets.end());
    nodes += g->nodes;
  }
  b.features = Tensor::from({nodes, dim}, std::move(x));
  b.targets = Tensor::from({nodes, classes}, std::move(t));
  b.graph = MessageGraph::batch(graphs);
  return b;
}

}  // namespace

double evaluate_loss(const GnnModel& model, std::span<const SegmentGraph> graphs) {
  double total = 0.0;
  std::size_t nodes = 0;
  for (const auto& g : graphs) {
    const SegmentGraph* one[] = {&g};
    GraphBatch b = make_batch(one, model.config().classes);
    total += soft_cross_entropy(model.forward(b.features, b.graph).logits, b.targets).item() * double(g.nodes);
    nodes += g.nodes;
  }
  return nodes == 0 ? 0.0 : total / double(nodes);
}

GnnTrainResult train_gnn(GnnModel& model, std::span<const SegmentGraph> train, std::span<const SegmentGraph> validation,
                         const GnnTrainOptions& options, const std::function<void(const GnnEpoch&)>& on_epoch) {
  if (train.empty()) throw InvalidArgument("train_gnn: no training graphs");
  const auto monitor = validation.empty() ? train : validation;
  if (validation.empty()) log::warn("train_gnn: no held-out graphs; early stopping monitors the training loss");

  GnnTrainResult result;
  result.initial_val_loss = result.best_val_loss = evaluate_loss(model, monitor);
  auto snapshot = [&] {
    std::vector<std::vector<float>> s;
    for (const auto& p : model.parameters()) s.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return s;
  };
  auto restore = [&](const std::vector<std::vector<float>>& s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      std::copy(s[i].begin(), s[i].end(), model.parameters()[i].tensor.mutable_data().begin());
    }
  };
  auto best = snapshot();

  std::mt19937_64 rng(options.seed);
  numerics::AdamState adam;
  std::vector<const SegmentGraph*> order;
  for (const auto& g : train) order.push_back(&g);
  std::size_t since_best = 0;
  const std::size_t per_batch = std::max<std::size_t>(1, options.graphs_per_batch);

  for (std::size_t epoch = 1; epoch <= options.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t nodes = 0;
    for (std::size_t start = 0; start < order.size(); start += per_batch) {
      const std::size_t end = std::min(order.size(), start + per_batch);
      GraphBatch b = make_batch(std::span(order).subspan(start, end - start), model.config().classes);
      Tensor loss = soft_cross_entropy(model.forward(b.features, b.graph).logits, b.targets);
      numerics::zero_grad(model.parameters());
      numerics::backward(loss);
      try {
        if (!std::isfinite(loss.item())) throw TrainingDivergence("gnn: non-finite loss");
        numerics::adam_step(model.parameters(), adam, options.adam);
      } catch (const TrainingDivergence&) {
        restore(best);
        log::error("gnn training diverged in epoch " + std::to_string(epoch) + "; kept best weights");
        throw;
      }
      total += loss.item() * double(b.graph.nodes);
      nodes += b.graph.nodes;
    }
    GnnEpoch record{epoch, total / double(nodes), evaluate_loss(model, monitor)};
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
    if (record.val_loss < result.best_val_loss) {
      result.best_val_loss = record.val_loss;
      result.best_epoch = epoch;
      best = snapshot();
      since_best = 0;
    } else if (++since_best >= options.patience) {
      result.early_stopped = true;
      break;
    }
  }
  restore(best);
  return result;
}

}  // namespace terralabel::graphs
