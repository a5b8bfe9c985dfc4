#include "terralabel/service/labels.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "terralabel/common/error.hpp"
#include "terralabel/common/log.hpp"

namespace terralabel::service {

using nlohmann::json;

std::string to_string(LabelLevel level) { return level == LabelLevel::chip ? "chip" : "segment"; }

std::string timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, int(ms));
  return buf;
}

std::vector<std::string> validate(const LabelRecord& r) {
  std::vector<std::string> errors;
  if (r.timestamp.empty()) errors.push_back("timestamp: required");
  if (r.chip_id.empty()) errors.push_back("chip_id: required");
  if (r.label.empty()) errors.push_back("label: must be non-empty");
  if (r.level == LabelLevel::segment && !r.segment_id) errors.push_back("segment_id: required for segment labels");
  if (r.level == LabelLevel::chip && r.segment_id) errors.push_back("segment_id: not allowed for chip labels");
  if (r.label.find_first_of("\r\n") != std::string::npos) errors.push_back("label: must be a single line");
  return errors;
}

std::string to_json_line(const LabelRecord& r) {
  json j = {{"timestamp", r.timestamp},
            {"level", to_string(r.level)},
            {"chip_id", r.chip_id},
            {"label", r.label},
            {"session", r.session}};
  j["segment_id"] = r.segment_id ? json(*r.segment_id) : json(nullptr);
  return j.dump();
}

LabelRecord parse_record(std::string_view text, bool fill_timestamp) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("label record: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("label record: expected a JSON object");
  LabelRecord r;
  std::vector<std::string> errors;
  auto str = [&](const char* key, std::string& out, bool required) {
    if (!j.contains(key) || j[key].is_null()) {
      if (required) errors.push_back(std::string(key) + ": required");
      return;
    }
    if (!j[key].is_string()) {
      errors.push_back(std::string(key) + ": must be a string");
      return;
    }
    out = j[key].get<std::string>();
  };
  str("timestamp", r.timestamp, !fill_timestamp);
  if (r.timestamp.empty() && fill_timestamp) r.timestamp = timestamp_now();
  std::string level;
  str("level", level, true);
  if (level == "chip") {
    r.level = LabelLevel::chip;
  } else if (level == "segment") {
    r.level = LabelLevel::segment;
  } else if (!level.empty()) {
    errors.push_back("level: must be 'chip' or 'segment'");
  }
  str("chip_id", r.chip_id, true);
  str("label", r.label, true);
  str("session", r.session, false);
  if (j.contains("segment_id") && !j["segment_id"].is_null()) {
    if (j["segment_id"].is_number_unsigned()) {
      r.segment_id = j["segment_id"].get<std::uint32_t>();
    } else {
      errors.push_back("segment_id: must be a non-negative integer");
    }
  }
  if (errors.empty()) errors = validate(r);
  if (!errors.empty()) {
    std::string msg = "label record rejected:";
    for (const auto& e : errors) msg += " " + e + ";";
    throw InvalidArgument(msg);
  }
  return r;
}

LabelLog::LabelLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
}

void LabelLog::append(std::span<const LabelRecord> records) {
  std::string batch;
  for (const auto& r : records) {
    const auto errors = validate(r);
    if (!errors.empty()) throw InvalidArgument("label record rejected: " + errors.front());
    batch += to_json_line(r) + "\n";
  }
  std::lock_guard lock(mutex_);
  const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw Error("cannot open label log " + path_.string());
  std::size_t written = 0;
  while (written < batch.size()) {
    const auto n = ::write(fd, batch.data() + written, batch.size() - written);
    if (n < 0) {
      ::close(fd);
      throw Error("write failed: " + path_.string());
    }
    written += std::size_t(n);
  }
  const bool synced = ::fsync(fd) == 0;
  ::close(fd);
  if (!synced) throw Error("fsync failed: " + path_.string());
}

std::vector<LabelRecord> LabelLog::read() const {
  std::lock_guard lock(mutex_);
  std::vector<LabelRecord> out;
  std::ifstream in(path_, std::ios::binary);
  if (!in) return out;
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t start = 0;
  while (start < all.size()) {
    const auto end = all.find('\n', start);
    if (end == std::string::npos) {
      log::warn("label log " + path_.string() + ": ignoring incomplete final record");
      break;
    }
    const std::string_view line(all.data() + start, end - start);
    if (!line.empty()) out.push_back(parse_record(line));
    start = end + 1;
  }
  return out;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

}  // namespace

std::string export_csv(std::span<const LabelRecord> records) {
  std::ostringstream out;
  out << "timestamp,level,chip_id,segment_id,label,session\n";
  for (const auto& r : records) {
    out << csv_field(r.timestamp) << ',' << to_string(r.level) << ',' << csv_field(r.chip_id) << ','
        << (r.segment_id ? std::to_string(*r.segment_id) : std::string()) << ',' << csv_field(r.label) << ','
        << csv_field(r.session) << '\n';
  }
  return out.str();
}

MaskExport export_masks(std::span<const LabelRecord> records,
                        const std::function<superpixels::SegmentMap(const std::string&)>& segments_of) {
  // chip -> segment -> (timestamp, label); stable log order breaks ties toward later entries.
  std::map<std::string, std::map<std::uint32_t, std::pair<std::string, std::string>>> latest;
  for (const auto& r : records) {
    if (r.level != LabelLevel::segment) continue;
    auto& slot = latest[r.chip_id][*r.segment_id];
    if (slot.first.empty() || r.timestamp >= slot.first) slot = {r.timestamp, r.label};
  }
  std::set<std::string> names;
  for (const auto& [chip, segs] : latest)
    for (const auto& [seg, entry] : segs) names.insert(entry.second);
  if (names.size() > 255) throw InvalidArgument("mask export: more than 255 distinct labels");

  MaskExport out;
  out.legend.assign(names.begin(), names.end());
  std::map<std::string, std::uint8_t> id;
  for (std::size_t i = 0; i < out.legend.size(); ++i) id[out.legend[i]] = std::uint8_t(i + 1);
  for (const auto& [chip, segs] : latest) {
    const auto map = segments_of(chip);
    LabelMask mask{chip, map.height, map.width, std::vector<std::uint8_t>(map.labels.size(), 0)};
    std::vector<std::uint8_t> value_of(map.size(), 0);
    for (const auto& [seg, entry] : segs) {
      if (seg >= map.size()) {
        throw InvalidArgument("mask export: chip " + chip + " has no segment " + std::to_string(seg));
      }
      value_of[seg] = id[entry.second];
    }
    for (std::size_t p = 0; p < map.labels.size(); ++p) mask.values[p] = value_of[map.labels[p]];
    out.masks.push_back(std::move(mask));
  }
  return out;
}

}  // namespace terralabel::service
