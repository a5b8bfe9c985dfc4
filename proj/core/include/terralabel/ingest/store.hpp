#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "terralabel/ingest/chips.hpp"

// On-disk chip store:
//   <root>/manifest.json        tiles, chip size, band count, splits, normalisation
//   <root>/chips/<id>.chip      "CHIP" u16 version, u16 bands, u16 height, u16 width, f32 LE payload
namespace terralabel::ingest {

inline constexpr std::uint16_t kChipFileVersion = 1;

void write_chip_file(const std::filesystem::path& path, const Chip& chip);
/// Reads payload and dimensions; identity fields are left for the caller.
Chip read_chip_file(const std::filesystem::path& path);

struct ChipEntry {
  std::string id;
  std::string tile_id;
  std::size_t grid_row = 0;
  std::size_t grid_col = 0;
};

struct TileEntry {
  std::string id;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bands = 0;
  double pixel_size_m = 10.0;
  ChipGrid grid;
};

class ChipStore {
 public:
  /// Opens an existing store (reads the manifest).
  static ChipStore open(const std::filesystem::path& root);
  /// Opens the store at root, creating an empty one when absent.
  static ChipStore open_or_create(const std::filesystem::path& root, std::size_t chip_size = kDefaultChipSize);

  const std::filesystem::path& root() const { return root_; }
  std::size_t chip_size() const { return chip_size_; }
  std::size_t bands() const { return bands_; }
  const std::vector<TileEntry>& tiles() const { return tiles_; }
  /// Chips in ingestion order (row-major per tile, tiles in order).
  const std::vector<ChipEntry>& chips() const { return chips_; }
  std::vector<std::string> chip_ids(std::optional<Split> only = std::nullopt) const;
  bool contains(const std::string& chip_id) const;
  const ChipEntry& entry(const std::string& chip_id) const;

  Split split_of(const std::string& chip_id) const;
  bool has_splits() const { return !splits_.empty(); }
  const std::optional<NormStats>& norm() const { return norm_; }

  /// Chips the tile and writes every chip file, then the manifest.
  void add_tile(const Tile& tile);
  /// Streams a raw tile from disk one chip-row at a time.
  void add_raw_tile(const std::filesystem::path& raw);

  /// Assigns train/test per tile (every fourth chip is test) and computes
  /// normalisation statistics over the training chips.
  void assign_splits();

  /// Raw chip with identity and split filled in.
  Chip load(const std::string& chip_id) const;
  /// Chip normalised with the store statistics (requires assign_splits()).
  Chip load_normalized(const std::string& chip_id) const;

  std::filesystem::path chip_path(const std::string& chip_id) const;
  void save_manifest() const;

 private:
  void load_manifest();
  void add_chip_entry(const Chip& chip);

  std::filesystem::path root_;
  std::size_t chip_size_ = kDefaultChipSize;
  std::size_t bands_ = 0;
  std::vector<TileEntry> tiles_;
  std::vector<ChipEntry> chips_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, Split> splits_;
  std::optional<NormStats> norm_;
};

}  // namespace terralabel::ingest
