// terralabel: umbrella CLI over the pipeline stages and the labelling service.

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <regex>

#include "terralabel/common/error.hpp"
#include "terralabel/common/log.hpp"
#include "terralabel/ingest/raster.hpp"
#include "terralabel/ingest/store.hpp"
#include "terralabel/pipeline/pipeline.hpp"
#include "terralabel/service/server.hpp"

using namespace terralabel;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flags that override RunConfig fields; unset flags leave the config file's value alone.
struct Overrides {
  json values = json::object();

  template <typename T>
  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<T>(flag, [this, key](const T& v) { values[key] = v; }, help);
  }
  void add_flag(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_flag_function(flag, [this, key](std::int64_t n) { values[key] = n > 0; }, help);
  }
};

struct Globals {
  std::string store;
  std::string config;
  bool verbose = false;
  bool quiet = false;
  Overrides overrides;
};

fs::path store_root(const Globals& g) {
  if (!g.store.empty()) return g.store;
  if (const char* env = std::getenv("TERRALABEL_STORE"); env && *env) return env;
  throw InvalidArgument("no store: pass --store or set TERRALABEL_STORE");
}

pipeline::RunConfig run_config(const Globals& g) {
  pipeline::RunConfig c = g.config.empty() ? pipeline::RunConfig{} : pipeline::load_config(g.config);
  if (!g.overrides.values.empty()) c.merge_json(g.overrides.values.dump());
  return c;
}

pipeline::Progress printer(const Globals& g) {
  return [&g](const std::string& line) {
    if (!g.quiet) std::cerr << line << '\n';
  };
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto end = comma == std::string::npos ? text.size() : comma;
    if (end > start) out.push_back(text.substr(start, end - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// "gcn8", "gat18", "GCN 8" -> variant and cluster count.
void apply_model(Globals& g, const std::string& model) {
  static const std::regex re(R"(\s*([A-Za-z]+)\s*(\d+)\s*)");
  std::smatch m;
  if (!std::regex_match(model, m, re)) throw InvalidArgument("--model: expected e.g. gcn8 or gat18, got '" + model + "'");
  std::string variant = m[1];
  for (auto& ch : variant) ch = char(std::tolower(static_cast<unsigned char>(ch)));
  g.overrides.values["variant"] = variant;
  g.overrides.values["clusters"] = std::stoul(m[2]);
}

service::Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"terralabel: unsupervised labelling of satellite tiles"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--store", g.store, "Chip store root (default: $TERRALABEL_STORE)");
  app.add_option("--config", g.config, "JSON file overriding the default run configuration")->check(CLI::ExistingFile);
  app.add_flag("-v,--verbose", g.verbose, "Debug logging");
  app.add_flag("-q,--quiet", g.quiet, "Warnings and errors only");
  auto& ov = g.overrides;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Chip a tile into a store");
  std::vector<std::string> tiles, band_pngs;
  std::optional<std::size_t> expect_bands;
  std::size_t chip_size = ingest::kDefaultChipSize;
  std::string tile_id, out_store;
  ingest->add_option("--tile", tiles, "Raw float32 BSQ tile(s) with a JSON sidecar");
  ingest->add_option("--band-png", band_pngs, "One greyscale PNG per band, in band order");
  ingest->add_option("--id", tile_id, "Tile id for --band-png input");
  ingest->add_option("--bands", expect_bands, "Expected band count");
  ingest->add_option("--chip-size", chip_size, "Chip edge in pixels")->capture_default_str();
  ingest->add_option("--out", out_store, "Store root (default: --store)");

  auto* split = app.add_subcommand("split", "Assign train/test splits and normalisation statistics");

  auto* fcm = app.add_subcommand("fcm", "Fit fuzzy c-means on sampled training pixels");
  ov.add<std::size_t>(fcm, "--clusters", "clusters", "Cluster count C");
  ov.add<std::size_t>(fcm, "--stride", "fcm_stride", "Pixel sampling stride");
  ov.add<double>(fcm, "--m", "fcm_m", "Fuzzifier");

  auto* unet = app.add_subcommand("train-unet", "Train the U-Net on FCM memberships");
  ov.add<std::size_t>(unet, "--clusters", "clusters", "Cluster count C");
  ov.add<std::size_t>(unet, "--patience", "patience", "Early-stopping patience (epochs)");
  ov.add<std::size_t>(unet, "--epochs", "unet_max_epochs", "Maximum epochs");
  ov.add<std::size_t>(unet, "--batch", "batch_size", "Batch size");
  ov.add<double>(unet, "--lr", "learning_rate", "Adam learning rate");
  ov.add_flag(unet, "--desk-scale", "desk_scale", "Reduced depth and width");

  auto* extract = app.add_subcommand("extract", "Write U-Net activation maps for every chip");
  std::string ckpt;
  extract->add_option("--ckpt", ckpt, "Checkpoint to use instead of the workspace's")->check(CLI::ExistingFile);
  ov.add<std::size_t>(extract, "--clusters", "clusters", "Cluster count C");
  ov.add_flag(extract, "--desk-scale", "desk_scale", "Reduced depth and width");

  auto* segment = app.add_subcommand("segment", "SLIC superpixels for every chip");
  ov.add<std::size_t>(segment, "--n", "n_segments", "Target segment count N");
  ov.add<double>(segment, "--compactness", "compactness", "SLIC compactness");

  auto* graphs_cmd = app.add_subcommand("build-graphs", "Segment graphs with node features and targets");
  ov.add<std::size_t>(graphs_cmd, "--k", "k", "Neighbours per node K");
  ov.add<std::string>(graphs_cmd, "--features", "features", "unet or bands");
  ov.add<std::size_t>(graphs_cmd, "--clusters", "clusters", "Cluster count C");
  ov.add<std::size_t>(graphs_cmd, "--n", "n_segments", "Target segment count N");

  auto* gnn = app.add_subcommand("train-gnn", "Train a GCN or GAT on the segment graphs");
  ov.add<std::string>(gnn, "--variant", "variant", "gcn or gat");
  ov.add<std::size_t>(gnn, "--clusters", "clusters", "Cluster count C");
  ov.add<std::size_t>(gnn, "--epochs", "gnn_max_epochs", "Maximum epochs");
  ov.add<std::size_t>(gnn, "--k", "k", "Neighbours per node K");

  auto* match = app.add_subcommand("match", "Chip-by-chip similarity matrix");
  std::string match_out;
  match->add_option("--out", match_out, "Also write the matrix here");
  ov.add<std::string>(match, "--layer", "layer", "generation, layer1 or layer2");
  ov.add<std::string>(match, "--variant", "variant", "gcn or gat");
  ov.add<std::size_t>(match, "--clusters", "clusters", "Cluster count C");

  auto* project = app.add_subcommand("project", "2-D UMAP of the chips");
  std::string sim_in, project_out;
  project->add_option("--sim", sim_in, "Similarity matrix (default: the workspace's)")->check(CLI::ExistingFile);
  project->add_option("--out", project_out, "Also write the projection here");
  ov.add<std::size_t>(project, "--n-neighbors", "n_neighbors", "UMAP neighbourhood size");
  ov.add<double>(project, "--min-dist", "min_dist", "UMAP min_dist");
  ov.add<std::size_t>(project, "--epochs", "umap_epochs", "UMAP epochs");

  auto* project_segs = app.add_subcommand("project-segments", "2-D UMAP of the segments of selected chips");
  std::string seg_chips, seg_out;
  project_segs->add_option("--chips", seg_chips, "Comma-separated chip ids")->required();
  project_segs->add_option("--out", seg_out, "Output projection file")->required();

  auto* eval = app.add_subcommand("eval", "Segment-matching quality on the test split");
  std::string protocol = "feature", model, report_out;
  eval->add_option("--protocol", protocol, "feature or context")->capture_default_str();
  eval->add_option("--model", model, "Model shorthand, e.g. gcn8");
  eval->add_option("--out", report_out, "Report JSON (default: reports/<model>_<protocol>.json)");
  ov.add<std::string>(eval, "--layer", "layer", "generation, layer1 or layer2");

  auto* sweep = app.add_subcommand("sweep", "Evaluate across one parameter axis");
  std::string axis, values, sweep_out;
  sweep->add_option("--axis", axis, "K, N or layer")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();
  sweep->add_option("--protocol", protocol, "feature or context")->capture_default_str();
  sweep->add_option("--model", model, "Model shorthand, e.g. gcn8");
  sweep->add_option("--out", sweep_out, "Report JSON");

  auto* all = app.add_subcommand("all", "Every stage from FCM to the chip projection, skipping finished ones");

  auto* serve = app.add_subcommand("serve", "HTTP API for the labelling client");
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string rgb = "3,2,1";
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--rgb", rgb, "Zero-based thumbnail bands")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  if (g.verbose) log::set_level(log::Level::debug);
  if (g.quiet) log::set_level(log::Level::warn);

  try {
    if (!model.empty()) apply_model(g, model);
    const auto progress = printer(g);

    if (*ingest) {
      if (tiles.empty() == band_pngs.empty()) throw InvalidArgument("ingest: pass --tile or --band-png (one of them)");
      const fs::path root = out_store.empty() ? store_root(g) : fs::path(out_store);
      auto store = ingest::ChipStore::open_or_create(root, chip_size);
      if (!band_pngs.empty()) {
        if (tile_id.empty()) throw InvalidArgument("ingest: --band-png needs --id");
        std::vector<fs::path> files(band_pngs.begin(), band_pngs.end());
        const auto tile = ingest::read_png_stack(files, tile_id);
        if (expect_bands && tile.bands != *expect_bands) {
          throw InvalidArgument("ingest: expected " + std::to_string(*expect_bands) + " bands, got " +
                                std::to_string(tile.bands));
        }
        store.add_tile(tile);
      }
      for (const auto& t : tiles) {
        const auto header = ingest::read_raw_header(t);
        if (expect_bands && header.bands != *expect_bands) {
          throw InvalidArgument("ingest: " + t + " has " + std::to_string(header.bands) + " bands, expected " +
                                std::to_string(*expect_bands));
        }
        store.add_raw_tile(t);
      }
      std::cout << store.chips().size() << " chips in " << root.string() << '\n';
      return 0;
    }

    pipeline::Workspace ws(store_root(g));
    const auto c = run_config(g);

    if (*split) {
      ws.store().assign_splits();
      std::cout << ws.store().chip_ids(ingest::Split::train).size() << " train, "
                << ws.store().chip_ids(ingest::Split::test).size() << " test\n";
    } else if (*fcm) {
      pipeline::run_fcm(ws, c);
      std::cout << ws.fcm_model(c).string() << '\n';
    } else if (*unet) {
      const auto r = pipeline::run_train_unet(ws, c, progress);
      std::cout << ws.unet_checkpoint(c).string() << " (best epoch " << r.best_epoch << ")\n";
    } else if (*extract) {
      if (!ckpt.empty() && fs::absolute(ckpt) != fs::absolute(ws.unet_checkpoint(c))) {
        fs::create_directories(ws.unet_checkpoint(c).parent_path());
        fs::copy_file(ckpt, ws.unet_checkpoint(c), fs::copy_options::overwrite_existing);
      }
      pipeline::run_extract(ws, c);
    } else if (*segment) {
      pipeline::run_segment(ws, c);
    } else if (*graphs_cmd) {
      pipeline::run_build_graphs(ws, c);
    } else if (*gnn) {
      const auto r = pipeline::run_train_gnn(ws, c, progress);
      std::cout << ws.gnn(c).string() << " (best epoch " << r.best_epoch << ")\n";
    } else if (*match) {
      const auto sim = pipeline::run_match(ws, c);
      if (!match_out.empty()) matching::save_similarity(match_out, sim);
      std::cout << (match_out.empty() ? ws.similarity(c).string() : match_out) << '\n';
    } else if (*project) {
      projection::Projection2D p;
      if (sim_in.empty()) {
        p = pipeline::run_project(ws, c);
      } else {
        p = projection::umap_from_similarity(matching::load_similarity(sim_in), c.umap());
      }
      if (!project_out.empty()) projection::save_projection(project_out, p);
      std::cout << (project_out.empty() ? ws.chip_projection(c).string() : project_out) << '\n';
    } else if (*project_segs) {
      const auto p = pipeline::project_segments(ws, c, split_list(seg_chips));
      projection::save_projection(seg_out, p);
      std::cout << p.size() << " segments -> " << seg_out << '\n';
    } else if (*eval) {
      const auto proto = evaluation::parse_protocol(protocol);
      const std::vector<evaluation::MetricReport> reports = {pipeline::run_eval(ws, c, proto)};
      const fs::path out = report_out.empty()
                               ? ws.report(graphs::to_string(c.variant) + std::to_string(c.clusters) + "_" +
                                           evaluation::to_string(proto) + ".json")
                               : fs::path(report_out);
      evaluation::save_reports(out, reports);
      std::cout << evaluation::format_table(reports, evaluation::to_string(proto)) << '\n';
    } else if (*sweep) {
      const auto proto = evaluation::parse_protocol(protocol);
      const auto ax = pipeline::parse_axis(axis);
      const auto reports = pipeline::run_sweep(ws, c, ax, split_list(values), proto, progress);
      const fs::path out = sweep_out.empty()
                               ? ws.report("sweep_" + pipeline::to_string(ax) + "_" + evaluation::to_string(proto) + ".json")
                               : fs::path(sweep_out);
      evaluation::save_reports(out, reports);
      std::cout << evaluation::format_table(reports, "sweep " + pipeline::to_string(ax)) << '\n';
    } else if (*all) {
      pipeline::run_all(ws, c, progress);
    } else if (*serve) {
      const auto bands = split_list(rgb);
      if (bands.size() != 3) throw InvalidArgument("--rgb: expected three band indices");
      service::ServiceOptions opts{ws.root(), c, {}};
      for (std::size_t i = 0; i < 3; ++i) opts.rgb_bands[i] = std::stoul(bands[i]);
      service::Service svc(opts);
      g_service = &svc;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      svc.run(host, port);
      g_service = nullptr;
    }
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
