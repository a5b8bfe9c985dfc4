#include "terralabel/ingest/store.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

#include "terralabel/common/binary_io.hpp"
#include "terralabel/common/error.hpp"
#include "terralabel/common/log.hpp"

namespace terralabel::ingest {

namespace fs = std::filesystem;
using nlohmann::json;

void write_chip_file(const fs::path& path, const Chip& chip) {
  constexpr auto kMax = std::numeric_limits<std::uint16_t>::max();
  if (chip.bands > kMax || chip.size > kMax) throw InvalidArgument("chip dimensions exceed u16");
  if (chip.data.size() != chip.bands * chip.pixels()) {
    throw InvalidArgument("chip " + chip.id + ": payload does not match dimensions");
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  io::write_magic(out, "CHIP");
  io::write_pod<std::uint16_t>(out, kChipFileVersion);
  io::write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(chip.bands));
  io::write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(chip.size));
  io::write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(chip.size));
  io::write_span<float>(out, chip.data);
  if (!out) throw Error("write failed: " + path.string());
}

Chip read_chip_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open chip " + path.string());
  io::expect_magic(in, "CHIP");
  const auto version = io::read_pod<std::uint16_t>(in);
  if (version != kChipFileVersion) {
    throw FormatError("chip " + path.string() + ": unsupported version " + std::to_string(version));
  }
  Chip chip;
  chip.bands = io::read_pod<std::uint16_t>(in);
  const auto height = io::read_pod<std::uint16_t>(in);
  const auto width = io::read_pod<std::uint16_t>(in);
  if (height != width) throw FormatError("chip " + path.string() + ": chips must be square");
  chip.size = height;
  chip.data.resize(chip.bands * chip.pixels());
  io::read_into<float>(in, chip.data);
  return chip;
}

ChipStore ChipStore::open(const fs::path& root) {
  ChipStore store;
  store.root_ = root;
  if (!fs::exists(root / "manifest.json")) {
    throw NotFound("no chip store at " + root.string() + " (manifest.json missing)");
  }
  store.load_manifest();
  return store;
}

ChipStore ChipStore::open_or_create(const fs::path& root, std::size_t chip_size) {
  if (fs::exists(root / "manifest.json")) return open(root);
  ChipStore store;
  store.root_ = root;
  store.chip_size_ = chip_size;
  fs::create_directories(root / "chips");
  store.save_manifest();
  return store;
}

std::vector<std::string> ChipStore::chip_ids(std::optional<Split> only) const {
  std::vector<std::string> ids;
  for (const auto& c : chips_) {
    if (!only || split_of(c.id) == *only) ids.push_back(c.id);
  }
  return ids;
}

bool ChipStore::contains(const std::string& chip_id) const { return index_.count(chip_id) != 0; }

const ChipEntry& ChipStore::entry(const std::string& chip_id) const {
  auto it = index_.find(chip_id);
  if (it == index_.end()) throw NotFound("unknown chip '" + chip_id + "'");
  return chips_[it->second];
}

Split ChipStore::split_of(const std::string& chip_id) const {
  auto it = splits_.find(chip_id);
  return it == splits_.end() ? Split::train : it->second;
}

fs::path ChipStore::chip_path(const std::string& chip_id) const {
  return root_ / "chips" / (chip_id + ".chip");
}

void ChipStore::add_chip_entry(const Chip& chip) {
  if (contains(chip.id)) throw InvalidArgument("duplicate chip id '" + chip.id + "'");
  index_[chip.id] = chips_.size();
  chips_.push_back({chip.id, chip.tile_id, chip.grid_row, chip.grid_col});
}

void ChipStore::add_tile(const Tile& tile) {
  if (bands_ != 0 && tile.bands != bands_) {
    throw InvalidArgument("tile " + tile.id + " has " + std::to_string(tile.bands) +
                          " bands; store holds " + std::to_string(bands_));
  }
  for (const auto& t : tiles_) {
    if (t.id == tile.id) throw InvalidArgument("tile '" + tile.id + "' already ingested");
  }
  auto chips = chip_tile(tile, chip_size_);
  bands_ = tile.bands;
  tiles_.push_back({tile.id, tile.height, tile.width, tile.bands, tile.pixel_size_m,
                    chip_grid(tile.height, tile.width, chip_size_)});
  for (const auto& chip : chips) {
    write_chip_file(chip_path(chip.id), chip);
    add_chip_entry(chip);
  }
  save_manifest();
}

void ChipStore::add_raw_tile(const fs::path& raw) {
  const RawTileHeader h = read_raw_header(raw);
  if (bands_ != 0 && h.bands != bands_) {
    throw InvalidArgument("tile " + h.id + " has " + std::to_string(h.bands) +
                          " bands; store holds " + std::to_string(bands_));
  }
  for (const auto& t : tiles_) {
    if (t.id == h.id) throw InvalidArgument("tile '" + h.id + "' already ingested");
  }
  const ChipGrid grid = chip_grid(h.height, h.width, chip_size_);
  bands_ = h.bands;
  tiles_.push_back({h.id, h.height, h.width, h.bands, h.pixel_size_m, grid});
  for (std::size_t gr = 0; gr < grid.rows; ++gr) {
    // One strip of chip rows across the full width, all bands.
    const auto strip = read_raw_rows(raw, h, gr * chip_size_, chip_size_);
    for (std::size_t gc = 0; gc < grid.cols; ++gc) {
      Chip chip;
      chip.id = chip_id(h.id, gr, gc);
      chip.tile_id = h.id;
      chip.grid_row = gr;
      chip.grid_col = gc;
      chip.size = chip_size_;
      chip.bands = h.bands;
      chip.data.resize(h.bands * chip.pixels());
      for (std::size_t b = 0; b < h.bands; ++b) {
        for (std::size_t r = 0; r < chip_size_; ++r) {
          const float* src = &strip[(b * chip_size_ + r) * h.width + gc * chip_size_];
          std::copy_n(src, chip_size_, &chip.data[(b * chip_size_ + r) * chip_size_]);
        }
      }
      write_chip_file(chip_path(chip.id), chip);
      add_chip_entry(chip);
    }
  }
  log::info("ingested tile " + h.id + ": " + std::to_string(grid.rows) + "x" +
            std::to_string(grid.cols) + " chips");
  save_manifest();
}

void ChipStore::assign_splits() {
  splits_.clear();
  for (const auto& tile : tiles_) {
    std::vector<const ChipEntry*> ordered;
    for (const auto& c : chips_) {
      if (c.tile_id == tile.id) ordered.push_back(&c);
    }
    std::sort(ordered.begin(), ordered.end(), [](const ChipEntry* a, const ChipEntry* b) {
      return std::tie(a->grid_row, a->grid_col) < std::tie(b->grid_row, b->grid_col);
    });
    const auto splits = split_chips(ordered.size());
    for (std::size_t i = 0; i < ordered.size(); ++i) splits_[ordered[i]->id] = splits[i];
  }

  // Streamed so that large stores never hold more than one chip in memory.
  std::vector<double> sum(bands_, 0.0), sum_sq(bands_, 0.0);
  std::size_t count = 0;
  for (const auto& c : chips_) {
    if (split_of(c.id) != Split::train) continue;
    const Chip chip = read_chip_file(chip_path(c.id));
    for (std::size_t b = 0; b < bands_; ++b) {
      for (float v : chip.band(b)) {
        sum[b] += v;
        sum_sq[b] += static_cast<double>(v) * v;
      }
    }
    count += chip.pixels();
  }
  if (count == 0) throw InvalidArgument("assign_splits: store has no training chips");
  NormStats stats;
  for (std::size_t b = 0; b < bands_; ++b) {
    const double m = sum[b] / static_cast<double>(count);
    stats.mean.push_back(m);
    stats.std.push_back(std::sqrt(std::max(0.0, sum_sq[b] / static_cast<double>(count) - m * m)));
  }
  norm_ = std::move(stats);
  save_manifest();
}

Chip ChipStore::load(const std::string& chip_id) const {
  const ChipEntry& e = entry(chip_id);
  Chip chip = read_chip_file(chip_path(chip_id));
  chip.id = e.id;
  chip.tile_id = e.tile_id;
  chip.grid_row = e.grid_row;
  chip.grid_col = e.grid_col;
  chip.split = split_of(chip_id);
  return chip;
}

Chip ChipStore::load_normalized(const std::string& chip_id) const {
  if (!norm_) throw InvalidArgument("store has no normalisation statistics; run split first");
  return normalize(load(chip_id), *norm_);
}

void ChipStore::save_manifest() const {
  json tiles = json::array();
  for (const auto& t : tiles_) {
    json chips = json::array();
    for (const auto& c : chips_) {
      if (c.tile_id == t.id) chips.push_back({{"id", c.id}, {"row", c.grid_row}, {"col", c.grid_col}});
    }
    tiles.push_back({{"id", t.id},
                     {"height", t.height},
                     {"width", t.width},
                     {"bands", t.bands},
                     {"pixel_size_m", t.pixel_size_m},
                     {"grid", {{"rows", t.grid.rows}, {"cols", t.grid.cols}}},
                     {"chips", std::move(chips)}});
  }
  json splits = json::object();
  for (const auto& [id, s] : splits_) splits[id] = std::string(to_string(s));
  json j = {{"tiles", std::move(tiles)},
            {"chip_size", chip_size_},
            {"bands", bands_},
            {"splits", std::move(splits)}};
  if (norm_) j["norm"] = {{"mean", norm_->mean}, {"std", norm_->std}};
  io::write_text_file(root_ / "manifest.json", j.dump(2));
}

void ChipStore::load_manifest() {
  json j;
  try {
    j = json::parse(io::read_text_file(root_ / "manifest.json"));
    chip_size_ = j.at("chip_size").get<std::size_t>();
    bands_ = j.at("bands").get<std::size_t>();
    for (const auto& t : j.at("tiles")) {
      TileEntry te;
      te.id = t.at("id").get<std::string>();
      te.height = t.at("height").get<std::size_t>();
      te.width = t.at("width").get<std::size_t>();
      te.bands = t.at("bands").get<std::size_t>();
      te.pixel_size_m = t.value("pixel_size_m", 10.0);
      te.grid = {t.at("grid").at("rows").get<std::size_t>(), t.at("grid").at("cols").get<std::size_t>(),
                 chip_size_};
      tiles_.push_back(te);
      for (const auto& c : t.at("chips")) {
        Chip stub;
        stub.id = c.at("id").get<std::string>();
        stub.tile_id = te.id;
        stub.grid_row = c.at("row").get<std::size_t>();
        stub.grid_col = c.at("col").get<std::size_t>();
        add_chip_entry(stub);
      }
    }
    const json splits = j.value("splits", json::object());
    for (const auto& [id, s] : splits.items()) {
      splits_[id] = parse_split(s.get<std::string>());
    }
    if (j.contains("norm")) {
      norm_ = NormStats{j["norm"].at("mean").get<std::vector<double>>(),
                        j["norm"].at("std").get<std::vector<double>>()};
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest " + (root_ / "manifest.json").string() + ": " + e.what());
  }
}

}  // namespace terralabel::ingest
