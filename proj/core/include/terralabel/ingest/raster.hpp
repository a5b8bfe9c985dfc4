#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace terralabel::ingest {

/// A full multi-band acquisition, band-sequential: data[(band * height + row) * width + col].
struct Tile {
  std::string id;
  std::size_t bands = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  double pixel_size_m = 10.0;
  std::vector<float> data;

  float at(std::size_t band, std::size_t row, std::size_t col) const {
    return data[(band * height + row) * width + col];
  }
  float& at(std::size_t band, std::size_t row, std::size_t col) {
    return data[(band * height + row) * width + col];
  }
};

/// Header of a raw tile: the sidecar `<raw>.json` next to a float32
/// little-endian band-sequential payload.
struct RawTileHeader {
  std::string id;
  std::size_t bands = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  double pixel_size_m = 10.0;
};

std::filesystem::path sidecar_path(const std::filesystem::path& raw);

RawTileHeader read_raw_header(const std::filesystem::path& raw);
Tile read_raw_tile(const std::filesystem::path& raw);
void write_raw_tile(const std::filesystem::path& raw, const Tile& tile);

/// Reads rows [row0, row0 + rows) of every band from a raw tile without
/// loading the rest of the file. Output is band-sequential [bands][rows][width].
std::vector<float> read_raw_rows(const std::filesystem::path& raw, const RawTileHeader& header,
                                 std::size_t row0, std::size_t rows);

/// Builds a tile from one greyscale PNG per band (8- or 16-bit). All images
/// must share dimensions. Values are stored as raw digital numbers.
Tile read_png_stack(const std::vector<std::filesystem::path>& band_files, std::string id);

/// Import hook for other raster formats: convert externally (for example with
/// `gdal_translate -of ENVI -ot Float32 -co INTERLEAVE=BSQ`) to a raw
/// band-sequential float32 file, then describe it with this sidecar.
void write_raw_sidecar(const std::filesystem::path& raw, const RawTileHeader& header);

}  // namespace terralabel::ingest
