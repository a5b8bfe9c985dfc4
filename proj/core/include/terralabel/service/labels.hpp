#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "terralabel/superpixels/slic.hpp"

namespace terralabel::service {

enum class LabelLevel { chip, segment };

struct LabelRecord {
  std::string timestamp;  // ISO 8601 UTC, e.g. 2026-01-31T12:00:00.000Z
  LabelLevel level = LabelLevel::chip;
  std::string chip_id;
  std::optional<std::uint32_t> segment_id;  // present iff level == segment
  std::string label;
  std::string session;

  bool operator==(const LabelRecord&) const = default;
};

std::string to_string(LabelLevel level);

/// Current time in the record timestamp format.
std::string timestamp_now();

/// Field diagnostics; empty when the record is valid.
std::vector<std::string> validate(const LabelRecord& record);

/// One JSON object without a trailing newline.
std::string to_json_line(const LabelRecord& record);

/// Throws InvalidArgument with the field diagnostics for malformed input.
/// A missing timestamp is filled with timestamp_now() when `fill_timestamp`.
LabelRecord parse_record(std::string_view json_text, bool fill_timestamp = false);

/// Append-only line-delimited JSON file. Appends are serialised and fsynced
/// per batch; a torn final line (crash mid-write) is skipped on read.
class LabelLog {
 public:
  explicit LabelLog(std::filesystem::path path);

  const std::filesystem::path& path() const { return path_; }
  void append(std::span<const LabelRecord> records);
  void append(const LabelRecord& record) { append(std::span<const LabelRecord>(&record, 1)); }
  std::vector<LabelRecord> read() const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
};

/// Header timestamp,level,chip_id,segment_id,label,session; every record, log order.
std::string export_csv(std::span<const LabelRecord> records);

struct LabelMask {
  std::string chip_id;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;  // 0 = unlabelled, else 1 + legend index
};

struct MaskExport {
  std::vector<std::string> legend;  // sorted label names
  std::vector<LabelMask> masks;     // one per chip with segment labels, sorted by id
};

/// Rasterises segment labels through each chip's SegmentMap. Per segment the
/// latest timestamp wins (equal timestamps: the later log entry).
MaskExport export_masks(std::span<const LabelRecord> records,
                        const std::function<superpixels::SegmentMap(const std::string&)>& segments_of);

}  // namespace terralabel::service
