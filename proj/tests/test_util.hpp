#pragma once

#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>

#include "scfc/errors.hpp"

// Asserts that `expr` throws scfc::Error carrying exactly `errc`.
#define REQUIRE_ERRC(expr, errc)                                   \
  do {                                                             \
    bool thrown_ = false;                                          \
    try {                                                          \
      (void)(expr);                                                \
    } catch (const scfc::Error& e_) {                              \
      thrown_ = true;                                              \
      CHECK_MESSAGE(e_.code() == (errc), e_.what());               \
    }                                                              \
    CHECK_MESSAGE(thrown_, #expr " did not throw");                \
  } while (0)

namespace testutil {

// Unique directory under the system temp root, removed on destruction.
class TempDir {
 public:
  TempDir() {
    auto base = std::filesystem::temp_directory_path();
    std::random_device rd;
    for (int attempt = 0; attempt < 64; ++attempt) {
      auto candidate = base / ("scfc_test_" + std::to_string(rd()));
      std::error_code ec;
      if (std::filesystem::create_directory(candidate, ec)) {
        path_ = candidate;
        return;
      }
    }
    throw std::runtime_error("could not create a temp directory");
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path file(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
