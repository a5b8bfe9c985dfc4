#include "terralabel/service/server.hpp"

#include <httplib.h>

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <set>
#include <thread>

#include "terralabel/common/error.hpp"
#include "terralabel/common/log.hpp"
#include "terralabel/graphs/graph.hpp"
#include "terralabel/service/labels.hpp"
#include "terralabel/service/png.hpp"

namespace terralabel::service {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> missing_artifacts(const pipeline::Workspace& ws, const pipeline::RunConfig& c) {
  std::vector<std::string> missing;
  for (const auto& p : {ws.similarity(c), ws.chip_projection(c)})
    if (!fs::exists(p)) missing.push_back(p.string());
  if (c.layer != graphs::EmbeddingLayer::generation && !fs::exists(ws.gnn(c))) missing.push_back(ws.gnn(c).string());
  for (const auto& id : ws.store().chip_ids()) {
    for (const auto& p : {ws.segments(c, id), ws.graph(c, id)})
      if (!fs::exists(p)) missing.push_back(p.string());
  }
  return missing;
}

std::vector<std::uint32_t> segment_rle(const superpixels::SegmentMap& map, std::uint32_t segment) {
  std::vector<std::uint32_t> runs;
  const std::size_t n = map.labels.size();
  for (std::size_t p = 0; p < n; ++p) {
    if (map.labels[p] != segment) continue;
    std::size_t q = p;
    while (q < n && map.labels[q] == segment) ++q;
    runs.push_back(std::uint32_t(p));
    runs.push_back(std::uint32_t(q - p));
    p = q;
  }
  return runs;
}

struct Service::Impl {
  ServiceOptions options;
  pipeline::Workspace ws;
  LabelLog labels;
  std::string chip_projection;
  std::set<std::string> chip_ids;

  std::mutex cache_mutex;
  std::map<std::string, std::vector<std::uint8_t>> thumbnails;
  std::map<std::string, std::string> segment_json;
  std::map<std::string, std::string> segment_projections;  // key: sorted chip ids

  struct Job {
    std::string status = "queued";  // queued | running | done | failed
    std::vector<std::string> chips;
    std::string key;
    std::string error;
  };
  std::mutex job_mutex;
  std::condition_variable job_cv;
  std::map<std::string, Job> jobs;
  std::deque<std::string> queue;
  std::size_t next_job = 1;
  bool stopping = false;
  std::thread worker;

  httplib::Server server;
  std::thread server_thread;

  explicit Impl(ServiceOptions o)
      : options(std::move(o)), ws(options.store), labels(ws.labels()) {
    const auto missing = missing_artifacts(ws, options.config);
    if (!missing.empty()) {
      std::string msg = "serve: missing artifacts:";
      for (const auto& m : missing) msg += "\n  " + m;
      throw NotFound(msg);
    }
    chip_projection = io_read(ws.chip_projection(options.config));
    for (const auto& id : ws.store().chip_ids()) chip_ids.insert(id);
    worker = std::thread([this] { work(); });
    routes();
  }

  ~Impl() {
    server.stop();
    if (server_thread.joinable()) server_thread.join();
    {
      std::lock_guard lock(job_mutex);
      stopping = true;
    }
    job_cv.notify_all();
    if (worker.joinable()) worker.join();
  }

  static std::string io_read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }

  static void send_json(httplib::Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  void require_chip(const std::string& id) const {
    if (!chip_ids.count(id)) throw NotFound("unknown chip '" + id + "'");
  }

  void work() {
    for (;;) {
      std::string id;
      std::vector<std::string> chips;
      std::string key;
      {
        std::unique_lock lock(job_mutex);
        job_cv.wait(lock, [&] { return stopping || !queue.empty(); });
        if (stopping) return;
        id = queue.front();
        queue.pop_front();
        auto& job = jobs[id];
        job.status = "running";
        chips = job.chips;
        key = job.key;
      }
      std::string status = "done", error;
      try {
        const auto p = pipeline::project_segments(ws, options.config, chips);
        std::lock_guard lock(cache_mutex);
        segment_projections[key] = projection::projection_json(p);
      } catch (const std::exception& e) {
        status = "failed";
        error = e.what();
        log::error("segment projection job " + id + ": " + error);
      }
      std::lock_guard lock(job_mutex);
      jobs[id].status = status;
      jobs[id].error = error;
    }
  }

  std::string submit(std::vector<std::string> chips) {
    std::sort(chips.begin(), chips.end());
    chips.erase(std::unique(chips.begin(), chips.end()), chips.end());
    std::string key;
    for (const auto& c : chips) key += c + ",";
    bool cached;
    {
      std::lock_guard lock(cache_mutex);
      cached = segment_projections.count(key) != 0;
    }
    std::lock_guard lock(job_mutex);
    const std::string id = std::to_string(next_job++);
    Job job;
    job.chips = std::move(chips);
    job.key = key;
    if (cached) {
      job.status = "done";
      jobs[id] = std::move(job);
    } else {
      jobs[id] = std::move(job);
      queue.push_back(id);
      job_cv.notify_one();
    }
    return id;
  }

  const std::vector<std::uint8_t>& thumbnail(const std::string& id) {
    require_chip(id);
    std::lock_guard lock(cache_mutex);
    auto it = thumbnails.find(id);
    if (it == thumbnails.end()) {
      it = thumbnails.emplace(id, thumbnail_png(ws.store().load(id), options.rgb_bands)).first;
    }
    return it->second;
  }

  superpixels::SegmentMap segments_of(const std::string& id) const {
    require_chip(id);
    return superpixels::load_segment_map(ws.segments(options.config, id));
  }

  const std::string& segments(const std::string& id) {
    require_chip(id);
    std::lock_guard lock(cache_mutex);
    auto it = segment_json.find(id);
    if (it != segment_json.end()) return it->second;
    const auto map = segments_of(id);
    json segs = json::array();
    for (const auto& s : map.segments) {
      segs.push_back({{"id", s.id},
                      {"area", s.pixel_count},
                      {"centroid", {s.centroid_row, s.centroid_col}},
                      {"bbox", {s.bbox.row0, s.bbox.col0, s.bbox.row1, s.bbox.col1}},
                      {"rle", segment_rle(map, s.id)}});
    }
    json body = {{"chip_id", id}, {"height", map.height}, {"width", map.width}, {"segments", std::move(segs)}};
    return segment_json.emplace(id, body.dump()).first->second;
  }

  template <typename Fn>
  httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const NotFound& e) {
        send_json(res, {{"error", e.what()}}, 404);
      } catch (const InvalidArgument& e) {
        send_json(res, {{"error", e.what()}}, 400);
      } catch (const json::exception& e) {
        send_json(res, {{"error", std::string("bad request: ") + e.what()}}, 400);
      } catch (const std::exception& e) {
        send_json(res, {{"error", e.what()}}, 500);
      }
    };
  }

  void routes() {
    server.Get("/api/meta", guarded([this](const httplib::Request&, httplib::Response& res) {
      const auto& store = ws.store();
      json tiles = json::array();
      for (const auto& t : store.tiles()) tiles.push_back(t.id);
      send_json(res, {{"chips", store.chips().size()},
                      {"bands", store.bands()},
                      {"chip_size", store.chip_size()},
                      {"tiles", tiles},
                      {"model", options.config.model_tag()},
                      {"config", json::parse(options.config.to_json())},
                      {"rgb_bands", options.rgb_bands},
                      {"labels", labels.read().size()}});
    }));
    server.Get("/api/projection/chips", guarded([this](const httplib::Request&, httplib::Response& res) {
      res.set_content(chip_projection, "application/json");
    }));
    server.Post("/api/projection/segments", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = json::parse(req.body);
      if (!body.contains("chip_ids") || !body["chip_ids"].is_array() || body["chip_ids"].empty()) {
        throw InvalidArgument("chip_ids: expected a non-empty array of chip ids");
      }
      std::vector<std::string> chips;
      std::vector<std::string> unknown;
      for (const auto& c : body["chip_ids"]) {
        const auto id = c.get<std::string>();
        (chip_ids.count(id) ? chips : unknown).push_back(id);
      }
      if (!unknown.empty()) {
        send_json(res, {{"error", "unknown chip ids"}, {"chip_ids", unknown}}, 404);
        return;
      }
      send_json(res, {{"job_id", submit(std::move(chips))}}, 202);
    }));
    server.Get(R"(/api/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      Job job;
      {
        std::lock_guard lock(job_mutex);
        auto it = jobs.find(id);
        if (it == jobs.end()) throw NotFound("unknown job '" + id + "'");
        job = it->second;
      }
      json body = {{"job_id", id}, {"status", job.status}, {"chip_ids", job.chips}};
      if (job.status == "failed") body["error"] = job.error;
      if (job.status == "done") {
        std::lock_guard lock(cache_mutex);
        body["result"] = json::parse(segment_projections.at(job.key));
      }
      send_json(res, body);
    }));
    server.Get(R"(/api/chips/([^/]+)/thumbnail\.png)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const auto& png = thumbnail(req.matches[1]);
                 res.set_content(reinterpret_cast<const char*>(png.data()), png.size(), "image/png");
               }));
    server.Get(R"(/api/chips/([^/]+)/segments)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      res.set_content(segments(req.matches[1]), "application/json");
    }));
    server.Post("/api/labels", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = json::parse(req.body);
      const json& items = body.is_array() ? body : body.contains("records") ? body["records"] : json::array({body});
      std::vector<LabelRecord> records;
      std::vector<json> rejected;
      for (std::size_t i = 0; i < items.size(); ++i) {
        try {
          auto r = parse_record(items[i].dump(), true);
          require_chip(r.chip_id);
          if (r.segment_id && *r.segment_id >= segments_of(r.chip_id).size()) {
            throw InvalidArgument("segment_id: chip " + r.chip_id + " has no segment " +
                                  std::to_string(*r.segment_id));
          }
          records.push_back(std::move(r));
        } catch (const Error& e) {
          rejected.push_back({{"index", i}, {"error", e.what()}});
        }
      }
      if (!rejected.empty()) {
        send_json(res, {{"error", "label records rejected"}, {"rejected", rejected}}, 400);
        return;
      }
      labels.append(records);
      send_json(res, {{"accepted", records.size()}}, 201);
    }));
    server.Get("/api/labels/export", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string format = req.has_param("format") ? req.get_param_value("format") : "csv";
      const auto records = labels.read();
      if (format == "csv") {
        res.set_content(export_csv(records), "text/csv");
      } else if (format == "masks") {
        const auto masks = export_masks(records, [this](const std::string& id) { return segments_of(id); });
        json out = {{"legend", masks.legend}, {"masks", json::array()}};
        for (const auto& m : masks.masks) {
          const auto png = encode_png(m.values, m.width, m.height, 1);
          out["masks"].push_back({{"chip_id", m.chip_id},
                                  {"width", m.width},
                                  {"height", m.height},
                                  {"png_base64", graphs::base64_encode(png)}});
        }
        send_json(res, out);
      } else {
        throw InvalidArgument("format: expected csv or masks");
      }
    }));
  }
};

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

Service::~Service() = default;

int Service::start(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("serve: cannot bind " + host + ":" + std::to_string(port));
  impl_->server_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  log::info("serving on http://" + host + ":" + std::to_string(bound));
  return bound;
}

void Service::run(const std::string& host, int port) {
  log::info("serving on http://" + host + ":" + std::to_string(port));
  if (!impl_->server.listen(host, port)) throw Error("serve: cannot listen on " + host + ":" + std::to_string(port));
}

void Service::stop() { impl_->server.stop(); }

}  // namespace terralabel::service
