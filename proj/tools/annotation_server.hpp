#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include "manifest.hpp"
#include "speechconf/annotation.hpp"

namespace httplib {
class Server;
}

namespace speechconf::cli {

/// HTTP backend of the labelling tool. Serves the labelled clips of a
/// manifest and appends submitted labels to a JSONL store, which is the only
/// file it writes.
class AnnotationServer {
 public:
  AnnotationServer(const DatasetManifest& manifest, std::filesystem::path annotations);
  ~AnnotationServer();
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  /// Binds without serving. Port 0 picks a free port; the bound port is returned.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called.
  void run();
  void stop();

  std::vector<AnnotationRecord> records() const;

 private:
  void routes();

  std::vector<std::string> clip_ids_;  // sorted
  std::map<std::string, std::filesystem::path> audio_;
  std::filesystem::path store_;
  std::unique_ptr<httplib::Server> http_;

  mutable std::shared_mutex mu_;
  std::vector<AnnotationRecord> records_;
  double last_ts_ = 0.0;
};

}  // namespace speechconf::cli
