#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <fmt/format.h>

#include "entcap/commands.hpp"

#ifndef ENTCAP_FIXTURE_DIR
#error "ENTCAP_FIXTURE_DIR must point at tests/fixtures"
#endif

namespace entcap::test_support {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(ENTCAP_FIXTURE_DIR) / name;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / fmt::format("entcap-{}-{:x}", tag, rd());
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

}  // namespace entcap::test_support
