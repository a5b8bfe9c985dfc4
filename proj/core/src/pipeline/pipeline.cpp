#include "terralabel/pipeline/pipeline.hpp"

#include <chrono>
#include <map>
#include <nlohmann/json.hpp>

#include "terralabel/common/binary_io.hpp"
#include "terralabel/common/error.hpp"
#include "terralabel/common/log.hpp"
#include "terralabel/common/parallel.hpp"
#include "terralabel/superpixels/slic.hpp"

namespace terralabel::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(const Progress& progress, const std::string& message) {
  log::info(message);
  if (progress) progress(message);
}

template <typename T>
void set_from(const json& j, T& field) {
  field = j.get<T>();
}

std::vector<std::string> all_chips(const Workspace& ws) { return ws.store().chip_ids(); }

features::UNetConfig unet_config(const Workspace& ws, const RunConfig& c) {
  const std::size_t bands = ws.store().bands();
  if (c.desk_scale) return features::UNetConfig::desk(bands, c.clusters);
  return {5, 64, bands, c.clusters, 64};
}

clustering::FcmModel require_fcm(const Workspace& ws, const RunConfig& c) {
  const auto path = ws.fcm_model(c);
  if (!fs::exists(path)) throw NotFound("no FCM model for C=" + std::to_string(c.clusters) + " (run fcm first)");
  return clustering::load_model(path);
}

superpixels::SegmentMap require_segments(const Workspace& ws, const RunConfig& c, const std::string& chip) {
  const auto path = ws.segments(c, chip);
  if (!fs::exists(path)) throw NotFound("no segmentation of " + chip + " at N=" + std::to_string(c.n_segments));
  return superpixels::load_segment_map(path);
}

bool all_exist(const Workspace& ws, const RunConfig& c,
               fs::path (Workspace::*path)(const RunConfig&, const std::string&) const) {
  for (const auto& id : all_chips(ws))
    if (!fs::exists((ws.*path)(c, id))) return false;
  return true;
}

}  // namespace

void RunConfig::merge_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("config: expected a JSON object");
  const std::map<std::string, std::function<void(const json&)>> setters = {
      {"clusters", [&](const json& v) { set_from(v, clusters); }},
      {"fcm_stride", [&](const json& v) { set_from(v, fcm_stride); }},
      {"fcm_m", [&](const json& v) { set_from(v, fcm_m); }},
      {"desk_scale", [&](const json& v) { set_from(v, desk_scale); }},
      {"unet_max_epochs", [&](const json& v) { set_from(v, unet_max_epochs); }},
      {"patience", [&](const json& v) { set_from(v, patience); }},
      {"batch_size", [&](const json& v) { set_from(v, batch_size); }},
      {"learning_rate", [&](const json& v) { set_from(v, learning_rate); }},
      {"n_segments", [&](const json& v) { set_from(v, n_segments); }},
      {"compactness", [&](const json& v) { set_from(v, compactness); }},
      {"features", [&](const json& v) { features = parse_feature_source(v.get<std::string>()); }},
      {"k", [&](const json& v) { set_from(v, k); }},
      {"variant", [&](const json& v) { variant = graphs::parse_variant(v.get<std::string>()); }},
      {"gnn_max_epochs", [&](const json& v) { set_from(v, gnn_max_epochs); }},
      {"graphs_per_batch", [&](const json& v) { set_from(v, graphs_per_batch); }},
      {"layer", [&](const json& v) { layer = parse_layer(v.get<std::string>()); }},
      {"n_neighbors", [&](const json& v) { set_from(v, n_neighbors); }},
      {"min_dist", [&](const json& v) { set_from(v, min_dist); }},
      {"umap_epochs", [&](const json& v) { set_from(v, umap_epochs); }},
      {"seed", [&](const json& v) { set_from(v, seed); }},
  };
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw InvalidArgument("config: unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw InvalidArgument("config: bad value for '" + key + "': " + e.what());
    }
  }
}

std::string RunConfig::to_json() const {
  return json{{"clusters", clusters},
              {"fcm_stride", fcm_stride},
              {"fcm_m", fcm_m},
              {"desk_scale", desk_scale},
              {"unet_max_epochs", unet_max_epochs},
              {"patience", patience},
              {"batch_size", batch_size},
              {"learning_rate", learning_rate},
              {"n_segments", n_segments},
              {"compactness", compactness},
              {"features", to_string(features)},
              {"k", k},
              {"variant", graphs::to_string(variant)},
              {"gnn_max_epochs", gnn_max_epochs},
              {"graphs_per_batch", graphs_per_batch},
              {"layer", to_string(layer)},
              {"n_neighbors", n_neighbors},
              {"min_dist", min_dist},
              {"umap_epochs", umap_epochs},
              {"seed", seed}}
      .dump(2);
}

projection::UmapOptions RunConfig::umap() const {
  projection::UmapOptions o;
  o.n_neighbors = n_neighbors;
  o.min_dist = min_dist;
  o.epochs = umap_epochs;
  o.seed = seed;
  return o;
}

std::string RunConfig::model_tag() const {
  return (variant == graphs::GnnVariant::gat ? "GAT " : "GCN ") + std::to_string(clusters);
}

RunConfig load_config(const fs::path& path, RunConfig base) {
  base.merge_json(io::read_text_file(path));
  return base;
}

std::string to_string(FeatureSource source) { return source == FeatureSource::unet ? "unet" : "bands"; }

FeatureSource parse_feature_source(const std::string& text) {
  if (text == "unet") return FeatureSource::unet;
  if (text == "bands") return FeatureSource::bands;
  throw InvalidArgument("unknown feature source '" + text + "' (expected unet or bands)");
}

std::string to_string(graphs::EmbeddingLayer layer) {
  switch (layer) {
    case graphs::EmbeddingLayer::generation: return "generation";
    case graphs::EmbeddingLayer::layer1: return "layer1";
    case graphs::EmbeddingLayer::layer2: return "layer2";
  }
  return "layer2";
}

graphs::EmbeddingLayer parse_layer(const std::string& text) {
  if (text == "generation" || text == "G" || text == "g") return graphs::EmbeddingLayer::generation;
  if (text == "layer1" || text == "L1" || text == "l1" || text == "1") return graphs::EmbeddingLayer::layer1;
  if (text == "layer2" || text == "L2" || text == "l2" || text == "2") return graphs::EmbeddingLayer::layer2;
  throw InvalidArgument("unknown layer '" + text + "' (expected generation, layer1 or layer2)");
}

Workspace::Workspace(const fs::path& root) : store_(ingest::ChipStore::open(root)) {}

fs::path Workspace::fcm_model(const RunConfig& c) const {
  return root() / "fcm" / ("c" + std::to_string(c.clusters) + ".json");
}

fs::path Workspace::unet_checkpoint(const RunConfig& c) const {
  return root() / "unet" / ("c" + std::to_string(c.clusters) + (c.desk_scale ? "_desk" : "") + ".tlwt");
}

fs::path Workspace::activations(const RunConfig& c, const std::string& chip) const {
  return root() / "activations" / ("c" + std::to_string(c.clusters) + (c.desk_scale ? "_desk" : "")) /
         (chip + ".tlwt");
}

fs::path Workspace::segments(const RunConfig& c, const std::string& chip) const {
  std::string tag = "n" + std::to_string(c.n_segments);
  if (c.compactness != 10.0) tag += "_m" + std::to_string(c.compactness);
  return root() / "segments" / tag / (chip + ".segm");
}

std::string Workspace::graph_tag(const RunConfig& c) const {
  std::string tag = c.features == FeatureSource::bands
                        ? "bands"
                        : "c" + std::to_string(c.clusters) + (c.desk_scale ? "_desk" : "");
  if (c.features == FeatureSource::bands) tag += "_c" + std::to_string(c.clusters);
  return tag + "_n" + std::to_string(c.n_segments) + "_k" + std::to_string(c.k);
}

fs::path Workspace::graph(const RunConfig& c, const std::string& chip) const {
  return root() / "graphs" / graph_tag(c) / (chip + ".json");
}

fs::path Workspace::gnn(const RunConfig& c) const {
  return root() / "gnn" / (graphs::to_string(c.variant) + "_" + graph_tag(c) + ".tlwt");
}

fs::path Workspace::similarity(const RunConfig& c) const {
  return root() / "sim" / (graphs::to_string(c.variant) + "_" + graph_tag(c) + "_" + to_string(c.layer) + ".simm");
}

fs::path Workspace::chip_projection(const RunConfig& c) const {
  return root() / "proj" / (graphs::to_string(c.variant) + "_" + graph_tag(c) + "_" + to_string(c.layer) + ".proj");
}

fs::path Workspace::report(const std::string& name) const { return root() / "reports" / name; }

fs::path Workspace::labels() const { return root() / "labels.jsonl"; }

clustering::FcmModel run_fcm(Workspace& ws, const RunConfig& c) {
  if (!ws.store().has_splits()) throw InvalidArgument("fcm: store has no split (run split first)");
  clustering::ChipSampler sampler(ws.store().bands(), c.fcm_stride);
  for (const auto& id : ws.store().chip_ids(ingest::Split::train)) sampler.add(ws.store().load(id));
  clustering::FcmOptions o;
  o.clusters = c.clusters;
  o.m = c.fcm_m;
  o.seed = c.seed;
  log::info("fcm: " + std::to_string(sampler.samples().size()) + " samples, C=" + std::to_string(c.clusters));
  auto model = clustering::fcm_fit(sampler.samples(), o);
  clustering::save_model(ws.fcm_model(c), model);
  return model;
}

features::UNetTrainResult run_train_unet(Workspace& ws, const RunConfig& c, const Progress& progress) {
  const auto fcm = require_fcm(ws, c);
  const auto& store = ws.store();
  auto source_for = [&](ingest::Split split) {
    auto ids = store.chip_ids(split);
    features::SampleSource src;
    src.size = ids.size();
    src.load = [&store, &fcm, ids](std::size_t i) {
      const auto raw = store.load(ids[i]);
      return features::UNetSample{raw.size, ingest::normalize(raw, *store.norm()).data,
                                  clustering::fcm_predict(fcm, raw).planes()};
    };
    return src;
  };
  if (!store.norm()) throw InvalidArgument("train-unet: store has no normalisation statistics (run split first)");
  features::UNet net(unet_config(ws, c), c.seed);
  features::UNetTrainOptions o;
  o.max_epochs = c.unet_max_epochs;
  o.patience = c.patience;
  o.batch_size = c.batch_size;
  o.adam.lr = c.learning_rate;
  o.seed = c.seed;
  o.checkpoint = ws.unet_checkpoint(c);
  fs::create_directories(o.checkpoint.parent_path());
  auto result = features::train_unet(net, source_for(ingest::Split::train), source_for(ingest::Split::test), o,
                                     [&](const features::EpochRecord& e) {
                                       char line[128];
                                       std::snprintf(line, sizeof line, "unet epoch %zu: train %.5f, val %.5f",
                                                     e.epoch, e.train_loss, e.val_loss);
                                       report(progress, line);
                                     });
  net.save(o.checkpoint);
  return result;
}

void run_extract(Workspace& ws, const RunConfig& c) {
  const auto path = ws.unet_checkpoint(c);
  if (!fs::exists(path)) throw NotFound("no U-Net checkpoint at " + path.string() + " (run train-unet first)");
  auto net = features::UNet::load(path);
  for (const auto& id : all_chips(ws)) {
    const auto chip = ws.store().load_normalized(id);
    const auto maps = features::extract_activations(net, chip);
    const auto out = ws.activations(c, id);
    fs::create_directories(out.parent_path());
    features::save_activations(out, maps, net.config().final_feature_maps, chip.size);
  }
}

void run_segment(Workspace& ws, const RunConfig& c) {
  superpixels::SlicOptions o;
  o.n_segments = c.n_segments;
  o.compactness = c.compactness;
  const auto ids = all_chips(ws);
  parallel_for(ids.size(), [&](std::size_t i) {
    const auto seg = superpixels::slic(ws.store().load(ids[i]), o);
    superpixels::save_segment_map(ws.segments(c, ids[i]), seg);
  });
}

void run_build_graphs(Workspace& ws, const RunConfig& c) {
  const auto fcm = require_fcm(ws, c);
  const auto ids = all_chips(ws);
  parallel_for(ids.size(), [&](std::size_t i) {
    const auto& id = ids[i];
    const auto seg = require_segments(ws, c, id);
    const auto raw = ws.store().load(id);
    std::vector<float> feats;
    std::size_t dim = 0;
    if (c.features == FeatureSource::unet) {
      const auto path = ws.activations(c, id);
      if (!fs::exists(path)) throw NotFound("no activations for " + id + " (run extract first)");
      std::size_t size = 0;
      const auto maps = features::load_activations(path, &dim, &size);
      feats = superpixels::segment_means(seg, maps, dim);
    } else {
      const auto norm = ingest::normalize(raw, *ws.store().norm());
      dim = norm.bands;
      feats = superpixels::segment_means(seg, norm.data, dim);
    }
    auto g = graphs::build_graph(id, seg, std::move(feats), dim, c.k);
    g.targets = superpixels::segment_means(seg, clustering::fcm_predict(fcm, raw).planes(), c.clusters);
    g.target_dim = c.clusters;
    graphs::save_graph(ws.graph(c, id), g);
  });
}

std::vector<graphs::SegmentGraph> load_graphs(const Workspace& ws, const RunConfig& c,
                                              std::optional<ingest::Split> split) {
  std::vector<graphs::SegmentGraph> out;
  for (const auto& id : ws.store().chip_ids(split)) {
    const auto path = ws.graph(c, id);
    if (!fs::exists(path)) throw NotFound("no graph for " + id + " (run build-graphs first)");
    out.push_back(graphs::load_graph(path));
  }
  return out;
}

graphs::GnnTrainResult run_train_gnn(Workspace& ws, const RunConfig& c, const Progress& progress) {
  const auto train = load_graphs(ws, c, ingest::Split::train);
  const auto val = load_graphs(ws, c, ingest::Split::test);
  if (train.empty()) throw InvalidArgument("train-gnn: no training graphs");
  graphs::GnnConfig gc;
  gc.variant = c.variant;
  gc.in_dim = train[0].feature_dim;
  gc.classes = c.clusters;
  graphs::GnnModel model(gc, c.seed);
  graphs::GnnTrainOptions o;
  o.max_epochs = c.gnn_max_epochs;
  o.patience = c.patience;
  o.graphs_per_batch = c.graphs_per_batch;
  o.adam.lr = c.learning_rate;
  o.seed = c.seed;
  auto result = graphs::train_gnn(model, train, val, o, [&](const graphs::GnnEpoch& e) {
    char line[128];
    std::snprintf(line, sizeof line, "gnn epoch %zu: train %.5f, val %.5f", e.epoch, e.train_loss, e.val_loss);
    if (progress) progress(line);
  });
  report(progress, c.model_tag() + ": best val loss " + std::to_string(result.best_val_loss) + " at epoch " +
                       std::to_string(result.best_epoch));
  fs::create_directories(ws.gnn(c).parent_path());
  model.save(ws.gnn(c));
  return result;
}

std::vector<matching::SegmentEmbedding> embed_chips(const Workspace& ws, const RunConfig& c,
                                                    const std::vector<std::string>& chip_ids) {
  std::optional<graphs::GnnModel> model;
  if (c.layer != graphs::EmbeddingLayer::generation) {
    if (!fs::exists(ws.gnn(c))) throw NotFound("no GNN at " + ws.gnn(c).string() + " (run train-gnn first)");
    model = graphs::GnnModel::load(ws.gnn(c));
  }
  std::vector<matching::SegmentEmbedding> out(chip_ids.size());
  parallel_for(chip_ids.size(), [&](std::size_t i) {
    const auto path = ws.graph(c, chip_ids[i]);
    if (!fs::exists(path)) throw NotFound("no graph for " + chip_ids[i] + " (run build-graphs first)");
    const auto g = graphs::load_graph(path);
    auto& e = out[i];
    e.chip_id = chip_ids[i];
    e.nodes = g.nodes;
    if (model) {
      e.values = graphs::embed(*model, g, c.layer, &e.dim);
    } else {
      e.values = g.features;
      e.dim = g.feature_dim;
    }
  });
  return out;
}

matching::SimilarityMatrix run_match(Workspace& ws, const RunConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto emb = embed_chips(ws, c, all_chips(ws));
  std::size_t pairs = 0;
  auto sim = matching::similarity_matrix(emb, &pairs);
  matching::save_similarity(ws.similarity(c), sim);
  log::info("match: " + std::to_string(pairs) + " chip pairs in " + std::to_string(seconds_since(t0)) + " s");
  return sim;
}

projection::Projection2D run_project(Workspace& ws, const RunConfig& c) {
  const auto sim = fs::exists(ws.similarity(c)) ? matching::load_similarity(ws.similarity(c)) : run_match(ws, c);
  auto p = projection::umap_from_similarity(sim, c.umap());
  projection::save_projection(ws.chip_projection(c), p);
  return p;
}

projection::Projection2D project_segments(const Workspace& ws, const RunConfig& c,
                                          const std::vector<std::string>& chip_ids) {
  if (chip_ids.empty()) throw InvalidArgument("project-segments: no chips selected");
  const auto emb = embed_chips(ws, c, chip_ids);
  std::vector<std::string> ids;
  std::vector<float> values;
  const std::size_t dim = emb[0].dim;
  for (const auto& e : emb) {
    for (std::size_t s = 0; s < e.nodes; ++s) ids.push_back(e.chip_id + "/" + std::to_string(s));
    values.insert(values.end(), e.values.begin(), e.values.end());
  }
  return projection::umap_from_vectors(std::move(ids), values, dim, c.umap(), projection::Level::segment);
}

evaluation::EvalSet load_eval_set(const Workspace& ws, const RunConfig& c) {
  std::vector<ingest::Chip> chips;
  std::vector<superpixels::SegmentMap> segs;
  for (const auto& id : ws.store().chip_ids(ingest::Split::test)) {
    chips.push_back(ws.store().load(id));
    segs.push_back(require_segments(ws, c, id));
  }
  if (chips.empty()) throw InvalidArgument("eval: store has no test chips");
  return evaluation::EvalSet(std::move(chips), std::move(segs));
}

evaluation::MetricReport run_eval(const Workspace& ws, const RunConfig& c, evaluation::Protocol protocol,
                                  const evaluation::EvalSet* cached) {
  std::optional<evaluation::EvalSet> own;
  if (!cached) own.emplace(load_eval_set(ws, c));
  const auto& set = cached ? *cached : *own;
  const auto emb = embed_chips(ws, c, ws.store().chip_ids(ingest::Split::test));
  auto r = protocol == evaluation::Protocol::feature ? evaluation::eval_feature_based(set, emb, c.model_tag())
                                                     : evaluation::eval_context_aware(set, emb, c.model_tag());
  r.params = {{"K", std::to_string(c.k)}, {"N", std::to_string(c.n_segments)}, {"layer", to_string(c.layer)}};
  return r;
}

SweepAxis parse_axis(const std::string& text) {
  if (text == "K" || text == "k") return SweepAxis::k;
  if (text == "N" || text == "n") return SweepAxis::n;
  if (text == "layer") return SweepAxis::layer;
  throw InvalidArgument("unknown sweep axis '" + text + "' (expected K, N or layer)");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::k: return "K";
    case SweepAxis::n: return "N";
    case SweepAxis::layer: return "layer";
  }
  return "K";
}

std::vector<evaluation::MetricReport> run_sweep(Workspace& ws, const RunConfig& c, SweepAxis axis,
                                                const std::vector<std::string>& values,
                                                evaluation::Protocol protocol, const Progress& progress) {
  if (values.empty()) throw InvalidArgument("sweep: no values");
  std::vector<evaluation::MetricReport> out;
  std::optional<evaluation::EvalSet> shared;
  for (const auto& v : values) {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig rc = c;
    switch (axis) {
      case SweepAxis::k: rc.k = std::stoul(v); break;
      case SweepAxis::n: rc.n_segments = std::stoul(v); break;
      case SweepAxis::layer: rc.layer = parse_layer(v); break;
    }
    report(progress, "sweep " + to_string(axis) + "=" + v);
    if (!all_exist(ws, rc, &Workspace::segments)) run_segment(ws, rc);
    if (!all_exist(ws, rc, &Workspace::graph)) run_build_graphs(ws, rc);
    if (rc.layer != graphs::EmbeddingLayer::generation && !fs::exists(ws.gnn(rc))) run_train_gnn(ws, rc, progress);
    const evaluation::EvalSet* set = nullptr;
    std::optional<evaluation::EvalSet> own;
    if (axis == SweepAxis::n) {
      own.emplace(load_eval_set(ws, rc));
      set = &*own;
    } else {
      if (!shared) shared.emplace(load_eval_set(ws, rc));
      set = &*shared;
    }
    auto r = run_eval(ws, rc, protocol, set);
    r.seconds = seconds_since(t0);
    out.push_back(std::move(r));
  }
  return out;
}

void run_all(Workspace& ws, const RunConfig& c, const Progress& progress) {
  if (!ws.store().has_splits()) ws.store().assign_splits();
  if (!fs::exists(ws.fcm_model(c))) {
    report(progress, "fcm");
    run_fcm(ws, c);
  }
  if (c.features == FeatureSource::unet) {
    if (!fs::exists(ws.unet_checkpoint(c))) {
      report(progress, "train-unet");
      run_train_unet(ws, c, progress);
    }
    if (!all_exist(ws, c, &Workspace::activations)) {
      report(progress, "extract");
      run_extract(ws, c);
    }
  }
  if (!all_exist(ws, c, &Workspace::segments)) {
    report(progress, "segment");
    run_segment(ws, c);
  }
  if (!all_exist(ws, c, &Workspace::graph)) {
    report(progress, "build-graphs");
    run_build_graphs(ws, c);
  }
  if (c.layer != graphs::EmbeddingLayer::generation && !fs::exists(ws.gnn(c))) {
    report(progress, "train-gnn");
    run_train_gnn(ws, c, progress);
  }
  report(progress, "match");
  run_match(ws, c);
  report(progress, "project");
  run_project(ws, c);
}

}  // namespace terralabel::pipeline
