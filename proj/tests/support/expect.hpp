#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "speechconf/error.hpp"

namespace testing {

/// Error code thrown by `f`, or Errc::Io when it returns normally.
inline speechconf::Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const speechconf::Error& e) {
    return e.code();
  }
  return speechconf::Errc::Io;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& stem) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (stem + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
