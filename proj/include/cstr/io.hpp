// SPDX-License-Identifier: Apache-2.0
//
// Image and weight-container file formats.
//
//  PFM  "Pf\n<w> <h>\n<scale>\n" + w*h float32, bottom row first. A negative
//       scale marks little-endian payloads; written files use "-1.0".
//  PGM  "P5\n<w> <h>\n<maxval>\n" + samples (1 byte if maxval < 256, else
//       2 bytes big-endian). Values are scaled to [0, 1] by maxval.
//  CSTRW001 weight container, all integers and floats little-endian:
//       magic[8] u32 count { u16 name_len, name, u8 rank, u32 extents[rank],
//       float32 payload[volume] } * count
#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cstr/tensor.hpp"

namespace cstr {

// --- raw file helpers --------------------------------------------------------

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

// --- PFM ---------------------------------------------------------------------

// Returns [h x w], top row first.
Tensor decode_pfm(std::string_view bytes);
// Accepts [h x w] or [1 x h x w].
std::string encode_pfm(const Tensor& map);

Tensor read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const Tensor& map);

// --- PGM / PPM -----------------------------------------------------------------

// Returns [h x w] in [0, 1].
Tensor decode_pgm(std::string_view bytes);
// Values are clamped to [0, 1] and rounded to the maxval grid.
std::string encode_pgm(const Tensor& image, unsigned maxval = 255);

Tensor read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Tensor& image, unsigned maxval = 255);

// Binary "P6" colour image, returns [3 x h x w] in [0, 1].
Tensor decode_ppm(std::string_view bytes);

// [3 x h x w] -> [1 x h x w] with luma weights 0.299 / 0.587 / 0.114;
// [1 x h x w] and [h x w] pass through as [1 x h x w].
Tensor to_grayscale(const Tensor& image);

// Reads P5 or P6 by magic and returns [1 x h x w].
Tensor read_gray_image(const std::filesystem::path& path);

// --- weights -------------------------------------------------------------------

// Named tensors in insertion order. Names are unique, nonempty UTF-8 strings
// of at most 65535 bytes; every tensor is finite.
class WeightStore {
 public:
  void insert(std::string name, Tensor tensor);
  // Inserts or overwrites, keeping the original position on overwrite.
  void set(const std::string& name, Tensor tensor);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  const Tensor* find(const std::string& name) const;

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  friend bool operator==(const WeightStore& a, const WeightStore& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

inline constexpr std::string_view kWeightsMagic = "CSTRW001";

WeightStore decode_weights(std::string_view bytes);
std::string encode_weights(const WeightStore& store);

WeightStore read_weights(const std::filesystem::path& path);
void write_weights(const std::filesystem::path& path, const WeightStore& store);

bool is_valid_utf8(std::string_view s) noexcept;

}  // namespace cstr
