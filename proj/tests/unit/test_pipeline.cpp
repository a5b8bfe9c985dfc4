#include <doctest.h>

#include <filesystem>

#include "temp_dir.hpp"
#include "terralabel/common/error.hpp"
#include "terralabel/ingest/synthetic.hpp"
#include "terralabel/pipeline/pipeline.hpp"

using namespace terralabel;
using namespace terralabel::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path make_store(const fs::path& dir, std::size_t size) {
  ingest::SyntheticTileOptions o;
  o.height = o.width = size;
  auto store = ingest::ChipStore::open_or_create(dir / "store");
  store.add_tile(ingest::make_synthetic_tile(o).tile);
  store.assign_splits();
  return dir / "store";
}

RunConfig small_config() {
  RunConfig c;
  c.clusters = 3;
  c.desk_scale = true;
  c.unet_max_epochs = 1;
  c.gnn_max_epochs = 5;
  c.n_segments = 40;
  c.k = 4;
  return c;
}

}  // namespace

TEST_CASE("config overrides") {
  RunConfig c;
  c.merge_json(R"({"clusters": 18, "variant": "gat", "layer": "L1", "features": "bands"})");
  CHECK(c.clusters == 18);
  CHECK(c.variant == graphs::GnnVariant::gat);
  CHECK(c.layer == graphs::EmbeddingLayer::layer1);
  CHECK(c.model_tag() == "GAT 18");
  RunConfig d;
  d.merge_json(c.to_json());
  CHECK(d.to_json() == c.to_json());
  CHECK_THROWS_AS(c.merge_json(R"({"clusterz": 3})"), InvalidArgument);
  CHECK_THROWS_AS(c.merge_json(R"({"clusters": "many"})"), InvalidArgument);
  CHECK_THROWS_AS(c.merge_json("[1]"), FormatError);
}

TEST_CASE("pipeline stages on a 4-chip store") {
  testing::TempDir dir;
  Workspace ws(make_store(dir.path(), 512));
  const RunConfig c = small_config();
  CHECK_THROWS_AS(run_train_unet(ws, c), NotFound);

  run_all(ws, c);
  for (const auto& id : ws.store().chip_ids()) {
    CHECK(fs::exists(ws.activations(c, id)));
    CHECK(fs::exists(ws.segments(c, id)));
    CHECK(fs::exists(ws.graph(c, id)));
  }
  const auto graphs = load_graphs(ws, c);
  REQUIRE(graphs.size() == 4);
  CHECK(graphs[0].feature_dim == 64);
  CHECK(graphs[0].target_dim == 3);

  const auto sim = matching::load_similarity(ws.similarity(c));
  CHECK(sim.size() == 4);
  const auto proj = projection::load_projection(ws.chip_projection(c));
  CHECK(proj.size() == 4);

  const auto segs = project_segments(ws, c, {graphs[0].chip_id, graphs[1].chip_id});
  CHECK(segs.size() == graphs[0].nodes + graphs[1].nodes);
  CHECK(segs.ids[0] == graphs[0].chip_id + "/0");

  const auto feature = run_eval(ws, c, evaluation::Protocol::feature);
  const auto context = run_eval(ws, c, evaluation::Protocol::context);
  CHECK(feature.segments == graphs[3].nodes);  // the single test chip
  CHECK(context.model == "GCN 3");
  CHECK(feature.lbp >= 0.0);
  CHECK(feature.lbp <= 1.0);

  const auto layers = run_sweep(ws, c, SweepAxis::layer, {"generation", "layer1", "layer2"},
                                evaluation::Protocol::feature);
  REQUIRE(layers.size() == 3);
  CHECK(layers[0].params.at("layer") == "generation");
  const auto ks = run_sweep(ws, c, SweepAxis::k, {"4"}, evaluation::Protocol::feature);
  REQUIRE(ks.size() == 1);
  CHECK(ks[0].glcm == doctest::Approx(feature.glcm));
}

TEST_CASE("band features bypass the CNN") {
  testing::TempDir dir;
  Workspace ws(make_store(dir.path(), 256));
  RunConfig c = small_config();
  c.features = FeatureSource::bands;
  c.layer = graphs::EmbeddingLayer::generation;
  run_fcm(ws, c);
  run_segment(ws, c);
  run_build_graphs(ws, c);
  const auto emb = embed_chips(ws, c, ws.store().chip_ids());
  REQUIRE(emb.size() == 1);
  CHECK(emb[0].dim == 12);
  CHECK_FALSE(fs::exists(ws.unet_checkpoint(c)));
}
