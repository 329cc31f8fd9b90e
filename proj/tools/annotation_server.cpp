#include "annotation_server.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>

#include "httplib.h"
#include "json.hpp"
#include "speechconf/error.hpp"
#include "speechconf/textio.hpp"

namespace speechconf::cli {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void send_json(httplib::Response& res, int status, const ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, ordered_json{{"error", message}});
}

double now_seconds() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

}  // namespace

AnnotationServer::AnnotationServer(const DatasetManifest& manifest, std::filesystem::path annotations)
    : store_(std::move(annotations)), http_(std::make_unique<httplib::Server>()) {
  for (const auto& c : manifest.clips) {
    if (c.role != SplitRole::Labelled) continue;
    clip_ids_.push_back(c.id);
    if (!c.audio.empty()) audio_[c.id] = manifest.resolve(c.audio);
  }
  std::sort(clip_ids_.begin(), clip_ids_.end());
  if (std::filesystem::exists(store_)) records_ = read_annotations_jsonl(store_);
  for (const auto& r : records_) last_ts_ = std::max(last_ts_, r.ts);
  routes();
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = http_->bind_to_any_port(host);
    if (p < 0) throw Error(Errc::Io, "cannot bind " + host);
    return p;
  }
  if (!http_->bind_to_port(host, port)) throw Error(Errc::Io, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void AnnotationServer::run() { http_->listen_after_bind(); }

void AnnotationServer::stop() {
  if (http_) http_->stop();
}

std::vector<AnnotationRecord> AnnotationServer::records() const {
  std::shared_lock lock(mu_);
  return records_;
}

void AnnotationServer::routes() {
  // Raters that rated each clip, from the records under a held lock.
  auto raters_per_clip = [this] {
    std::map<std::string, std::set<std::string>> out;
    for (const auto& r : records_) out[r.clip_id].insert(r.rater_id);
    return out;
  };

  http_->Get("/api/clips", [this, raters_per_clip](const httplib::Request&, httplib::Response& res) {
    std::shared_lock lock(mu_);
    const auto done = raters_per_clip();
    ordered_json clips = ordered_json::array();
    for (const auto& id : clip_ids_) {
      const auto it = done.find(id);
      const std::vector<std::string> raters = it == done.end() ? std::vector<std::string>{}
                                                                : std::vector<std::string>(it->second.begin(), it->second.end());
      clips.push_back({{"id", id}, {"annotations", raters.size()}, {"raters", raters}});
    }
    send_json(res, 200, clips);
  });

  http_->Get(R"(/api/clips/([^/]+)/audio)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const auto it = audio_.find(id);
    if (it == audio_.end() || !std::filesystem::exists(it->second)) {
      send_error(res, 404, "no audio for clip " + id);
      return;
    }
    const auto bytes = textio::read_binary(it->second);
    res.status = 200;
    res.set_content(std::string(bytes.begin(), bytes.end()), "audio/wav");
  });

  http_->Get("/api/next", [this, raters_per_clip](const httplib::Request& req, httplib::Response& res) {
    const auto rater = req.get_param_value("rater");
    if (rater.empty()) {
      send_error(res, 400, "rater parameter required");
      return;
    }
    std::shared_lock lock(mu_);
    const auto done = raters_per_clip();
    const std::string* best = nullptr;
    std::size_t best_count = 0;
    std::size_t remaining = 0;
    // clip_ids_ is sorted, so the first minimum wins ties by id.
    for (const auto& id : clip_ids_) {
      const auto it = done.find(id);
      const std::size_t n = it == done.end() ? 0 : it->second.size();
      if (it != done.end() && it->second.count(rater)) continue;
      ++remaining;
      if (!best || n < best_count) {
        best = &id;
        best_count = n;
      }
    }
    if (!best) {
      send_json(res, 200, ordered_json{{"clip_id", nullptr}, {"remaining", 0}});
      return;
    }
    send_json(res, 200, ordered_json{{"clip_id", *best}, {"remaining", remaining}});
  });

  http_->Post("/api/labels", [this](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      send_error(res, 409, "body is not JSON");
      return;
    }
    if (!body.is_object() || !body.contains("clip_id") || !body.contains("rater_id") || !body.contains("value") ||
        !body["clip_id"].is_string() || !body["rater_id"].is_string() || !body["value"].is_string() ||
        body["rater_id"].get<std::string>().empty()) {
      send_error(res, 409, "body needs string fields clip_id, rater_id and value");
      return;
    }
    AnnotationRecord rec;
    rec.clip_id = body["clip_id"].get<std::string>();
    rec.rater_id = body["rater_id"].get<std::string>();
    if (!std::binary_search(clip_ids_.begin(), clip_ids_.end(), rec.clip_id)) {
      send_error(res, 404, "unknown clip " + rec.clip_id);
      return;
    }
    const auto value = parse_rating(body["value"].get<std::string>());
    if (!value) {
      send_error(res, 400, "value must be low, medium, high or not_clear");
      return;
    }
    rec.value = *value;
    {
      std::unique_lock lock(mu_);
      // Strictly increasing timestamps keep latest-wins equal to arrival order.
      rec.ts = std::max(now_seconds(), last_ts_ + 1e-6);
      std::ofstream out(store_, std::ios::app | std::ios::binary);
      out << annotation_to_json(rec) << '\n';
      out.flush();
      if (!out) {
        send_error(res, 500, "cannot append to the annotation store");
        return;
      }
      last_ts_ = rec.ts;
      records_.push_back(rec);
    }
    send_json(res, 201, json::parse(annotation_to_json(rec)));
  });

  http_->Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
    std::shared_lock lock(mu_);
    std::map<std::string, std::set<std::string>> per_rater;
    for (const auto& r : records_) per_rater[r.rater_id].insert(r.clip_id);
    ordered_json raters = ordered_json::object();
    for (const auto& [rater, clips] : per_rater) {
      raters[rater] = {{"done", clips.size()}, {"remaining", clip_ids_.size() - std::min(clips.size(), clip_ids_.size())}};
    }
    send_json(res, 200, ordered_json{{"total_clips", clip_ids_.size()}, {"raters", raters}});
  });

  http_->Get("/api/export", [this](const httplib::Request&, httplib::Response& res) {
    std::shared_lock lock(mu_);
    res.status = 200;
    res.set_content(rater_matrix_csv(build_rater_matrix(records_)), "text/csv");
  });
}

}  // namespace speechconf::cli
