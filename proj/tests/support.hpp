// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <string>

#include "cstr/tensor.hpp"

namespace test {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    cstr::Rng rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("cstr_test_" + std::to_string(rng.next_u64()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline cstr::Tensor uniform(std::uint64_t seed, const cstr::Shape& shape, float lo = -1.0f, float hi = 1.0f) {
  cstr::Rng rng(seed);
  return cstr::seeded_uniform(rng, shape, lo, hi);
}

inline double max_abs_diff(const cstr::Tensor& a, const cstr::Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(double{a[k]} - double{b[k]}));
  return m;
}

}  // namespace test

// Asserts that `expr` throws cstr::Error of the given kind.
#define CHECK_ERROR_KIND(expr, expected_kind)                   \
  do {                                                          \
    bool thrown_ = false;                                       \
    try {                                                       \
      (void)(expr);                                             \
    } catch (const cstr::Error& e_) {                           \
      thrown_ = true;                                           \
      CHECK(e_.kind() == (expected_kind));                      \
    }                                                           \
    CHECK_MESSAGE(thrown_, "expected cstr::Error from " #expr); \
  } while (0)
