// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "cstr/config.hpp"
#include "cstr/tensor.hpp"

namespace cstr {

// Allowed (left column, right column) pairs on one epipolar line.
class EpipolarMask {
 public:
  EpipolarMask(std::size_t left_width, std::size_t right_width, MatchConvention convention);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  MatchConvention convention() const noexcept { return convention_; }

  bool allowed(std::size_t i, std::size_t j) const noexcept { return allowed_[i * cols_ + j] != 0; }
  std::size_t allowed_count() const noexcept;
  bool row_has_candidate(std::size_t i) const noexcept;

  // The same rule seen from the right image: [cols x rows].
  EpipolarMask transposed() const;

  // 0 where allowed, -inf elsewhere; added to attention logits.
  Tensor logit_bias() const;
  // `cost` where allowed, +inf elsewhere.
  Tensor apply_to_cost(const Tensor& cost) const;

 private:
  EpipolarMask(std::size_t rows, std::size_t cols, MatchConvention convention,
               std::vector<unsigned char> allowed)
      : rows_(rows), cols_(cols), convention_(convention), allowed_(std::move(allowed)) {}

  std::size_t rows_, cols_;
  MatchConvention convention_;
  std::vector<unsigned char> allowed_;
};

EpipolarMask epipolar_mask(std::size_t left_width, std::size_t right_width,
                           MatchConvention convention = MatchConvention::kLeftNotRight);

// Disparity implied by matching left column i with right column j.
inline double candidate_disparity(std::size_t i, std::size_t j) noexcept {
  return i > j ? static_cast<double>(i - j) : static_cast<double>(j - i);
}

// Right-line position of the match of left column i at disparity d.
inline double match_position(std::size_t i, double d, MatchConvention convention) noexcept {
  return convention == MatchConvention::kLeftNotRight ? static_cast<double>(i) + d
                                                      : static_cast<double>(i) - d;
}

}  // namespace cstr
