#include "terralabel/ingest/raster.hpp"

#include <png.h>

#include <cstdio>
#include <fstream>
#include <memory>
#include <nlohmann/json.hpp>

#include "terralabel/common/binary_io.hpp"
#include "terralabel/common/error.hpp"

namespace terralabel::ingest {

using nlohmann::json;

std::filesystem::path sidecar_path(const std::filesystem::path& raw) {
  return std::filesystem::path(raw.string() + ".json");
}

void write_raw_sidecar(const std::filesystem::path& raw, const RawTileHeader& header) {
  json j = {{"id", header.id},         {"bands", header.bands},
            {"height", header.height}, {"width", header.width},
            {"pixel_size_m", header.pixel_size_m}, {"dtype", "float32"},
            {"layout", "band-sequential"}, {"byte_order", "little"}};
  io::write_text_file(sidecar_path(raw), j.dump(2));
}

RawTileHeader read_raw_header(const std::filesystem::path& raw) {
  json j;
  try {
    j = json::parse(io::read_text_file(sidecar_path(raw)));
  } catch (const json::exception& e) {
    throw FormatError("tile sidecar " + sidecar_path(raw).string() + ": " + e.what());
  }
  RawTileHeader h;
  h.id = j.value("id", raw.stem().string());
  h.bands = j.at("bands").get<std::size_t>();
  h.height = j.at("height").get<std::size_t>();
  h.width = j.at("width").get<std::size_t>();
  h.pixel_size_m = j.value("pixel_size_m", 10.0);
  if (j.value("dtype", std::string("float32")) != "float32") {
    throw FormatError("tile sidecar: only float32 payloads are supported");
  }
  if (h.bands == 0 || h.height == 0 || h.width == 0) {
    throw FormatError("tile sidecar: bands, height and width must be positive");
  }
  const auto expected = h.bands * h.height * h.width * sizeof(float);
  if (std::filesystem::file_size(raw) != expected) {
    throw FormatError("raw tile " + raw.string() + ": size does not match " +
                      std::to_string(h.bands) + "x" + std::to_string(h.height) + "x" +
                      std::to_string(h.width) + " float32");
  }
  return h;
}

Tile read_raw_tile(const std::filesystem::path& raw) {
  const RawTileHeader h = read_raw_header(raw);
  Tile tile;
  tile.id = h.id;
  tile.bands = h.bands;
  tile.height = h.height;
  tile.width = h.width;
  tile.pixel_size_m = h.pixel_size_m;
  tile.data = read_raw_rows(raw, h, 0, h.height);
  return tile;
}

std::vector<float> read_raw_rows(const std::filesystem::path& raw, const RawTileHeader& h,
                                 std::size_t row0, std::size_t rows) {
  if (row0 + rows > h.height) throw InvalidArgument("read_raw_rows: row range outside tile");
  std::ifstream in(raw, std::ios::binary);
  if (!in) throw NotFound("cannot open raw tile " + raw.string());
  std::vector<float> out(h.bands * rows * h.width);
  for (std::size_t b = 0; b < h.bands; ++b) {
    const auto offset = ((b * h.height + row0) * h.width) * sizeof(float);
    in.seekg(static_cast<std::streamoff>(offset));
    io::read_into<float>(in, std::span<float>(out).subspan(b * rows * h.width, rows * h.width));
  }
  return out;
}

void write_raw_tile(const std::filesystem::path& raw, const Tile& tile) {
  if (tile.data.size() != tile.bands * tile.height * tile.width) {
    throw InvalidArgument("write_raw_tile: data size does not match dimensions");
  }
  if (raw.has_parent_path()) std::filesystem::create_directories(raw.parent_path());
  std::ofstream out(raw, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + raw.string());
  io::write_span<float>(out, tile.data);
  write_raw_sidecar(raw, {tile.id, tile.bands, tile.height, tile.width, tile.pixel_size_m});
}

namespace {

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

std::vector<float> read_grey_png(const std::filesystem::path& path, std::size_t& height,
                                 std::size_t& width) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw NotFound("cannot open " + path.string());
  PngReader r;
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  r.info = png_create_info_struct(r.png);
  if (!r.png || !r.info) throw Error("libpng initialisation failed");
  if (setjmp(png_jmpbuf(r.png))) throw FormatError("invalid PNG " + path.string());
  png_init_io(r.png, fp.get());
  png_read_info(r.png, r.info);
  const auto color = png_get_color_type(r.png, r.info);
  const auto depth = png_get_bit_depth(r.png, r.info);
  if (color != PNG_COLOR_TYPE_GRAY) throw FormatError(path.string() + ": expected a greyscale PNG");
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
  if (depth == 16) png_set_swap(r.png);  // PNG stores big-endian samples
  png_read_update_info(r.png, r.info);
  height = png_get_image_height(r.png, r.info);
  width = png_get_image_width(r.png, r.info);
  const std::size_t row_bytes = png_get_rowbytes(r.png, r.info);
  std::vector<unsigned char> buffer(row_bytes * height);
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = buffer.data() + y * row_bytes;
  png_read_image(r.png, rows.data());
  std::vector<float> out(height * width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      if (depth == 16) {
        std::uint16_t v;
        std::memcpy(&v, rows[y] + 2 * x, 2);
        out[y * width + x] = static_cast<float>(v);
      } else {
        out[y * width + x] = static_cast<float>(rows[y][x]);
      }
    }
  }
  return out;
}

}  // namespace

Tile read_png_stack(const std::vector<std::filesystem::path>& band_files, std::string id) {
  if (band_files.empty()) throw InvalidArgument("read_png_stack: no band files");
  Tile tile;
  tile.id = std::move(id);
  tile.bands = band_files.size();
  for (std::size_t b = 0; b < band_files.size(); ++b) {
    std::size_t h = 0, w = 0;
    auto plane = read_grey_png(band_files[b], h, w);
    if (b == 0) {
      tile.height = h;
      tile.width = w;
      tile.data.reserve(tile.bands * h * w);
    } else if (h != tile.height || w != tile.width) {
      throw FormatError("read_png_stack: " + band_files[b].string() + " differs in size from band 0");
    }
    tile.data.insert(tile.data.end(), plane.begin(), plane.end());
  }
  return tile;
}

}  // namespace terralabel::ingest
