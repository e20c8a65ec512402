// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float32 arrays and the handful of kernels the stereo
// pipeline is built from. Every kernel accumulates in a fixed sequential
// order, so identical inputs give bit-identical outputs.
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cstr/error.hpp"

namespace cstr {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_volume(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  // Construction from file or user data: additionally rejects NaN/Inf.
  static Tensor from_external(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  float& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  float at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  float& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  float at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Bitwise equality, distinguishing -0.0f from 0.0f and comparing NaN payloads.
bool bit_identical(const Tensor& a, const Tensor& b) noexcept;

// 64-bit FNV-1a over shape and raw float bytes; used for golden transcripts.
std::uint64_t fingerprint(const Tensor& t) noexcept;

// Deterministic generator: std::mt19937_64 (its output sequence is fixed by
// the C++ standard) feeding a Box-Muller transform evaluated in double.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Tensor seeded_normal(Rng& rng, const Shape& shape, float stddev);
Tensor seeded_uniform(Rng& rng, const Shape& shape, float lo, float hi);

// --- elementwise and structural helpers ------------------------------------

Tensor identity(std::size_t n);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor transpose2d(const Tensor& a);
// [c x h x w] -> [c x w x h]
Tensor transpose_hw(const Tensor& a);
// Stacks [c_i x h x w] operands along the channel axis.
Tensor concat_channels(std::initializer_list<const Tensor*> parts);
// Per pixel, normalizes the channel vector of [c x h x w] to zero mean and
// unit variance.
Tensor normalize_channels(const Tensor& a, float eps = 1e-5f);

// --- kernels ----------------------------------------------------------------

Tensor softmax_axis(const Tensor& t, std::size_t axis);

Tensor matmul(const Tensor& a, const Tensor& b);

// Zero-padded "same" cross-correlation:
//   out[o][y][x] = bias[o] + sum_{i,u,v} k[o][i][u][v] * in[i][y*s+u-kh/2][x*s+v-kw/2]
// Output extents are ceil(h/s) x ceil(w/s).
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t stride = 1);

// Mean over width windows of `factor`, the last window truncated at the edge.
Tensor avgpool_width(const Tensor& t, std::size_t factor);

// Bilinear interpolation with align_corners = false:
//   src = (dst + 0.5) * in / out - 0.5, clamped to [0, in - 1].
// Accepts [h x w] or [c x h x w].
Tensor bilinear_upsample(const Tensor& t, std::size_t out_h, std::size_t out_w);

float linear_interp_1d(std::span<const float> values, double x);
float linear_interp_1d(const Tensor& values, double x);

// Replicate-edge padding of [c x h x w] (or [h x w]) up to the next multiple.
Tensor pad_to_multiple(const Tensor& t, std::size_t multiple);
// Keeps the top-left out_h x out_w block of [c x h x w] (or [h x w]).
Tensor crop(const Tensor& t, std::size_t out_h, std::size_t out_w);

}  // namespace cstr
