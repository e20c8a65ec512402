// SPDX-License-Identifier: Apache-2.0
#include "cstr/mask.hpp"

#include <algorithm>
#include <limits>

namespace cstr {

EpipolarMask::EpipolarMask(std::size_t left_width, std::size_t right_width,
                           MatchConvention convention)
    : rows_(left_width), cols_(right_width), convention_(convention) {
  if (rows_ == 0 || cols_ == 0) fail(ErrorKind::kValue, "epipolar_mask: extents must be positive");
  allowed_.resize(rows_ * cols_);
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t j = 0; j < cols_; ++j) {
      const bool ok = convention == MatchConvention::kLeftNotRight ? i <= j : i >= j;
      allowed_[i * cols_ + j] = ok ? 1 : 0;
    }
  }
}

std::size_t EpipolarMask::allowed_count() const noexcept {
  return static_cast<std::size_t>(std::count(allowed_.begin(), allowed_.end(), 1));
}

bool EpipolarMask::row_has_candidate(std::size_t i) const noexcept {
  for (std::size_t j = 0; j < cols_; ++j) {
    if (allowed(i, j)) return true;
  }
  return false;
}

EpipolarMask EpipolarMask::transposed() const {
  std::vector<unsigned char> t(allowed_.size());
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t[j * rows_ + i] = allowed_[i * cols_ + j];
  return EpipolarMask(cols_, rows_, convention_, std::move(t));
}

Tensor EpipolarMask::logit_bias() const {
  Tensor out({rows_, cols_});
  for (std::size_t k = 0; k < allowed_.size(); ++k) {
    out[k] = allowed_[k] ? 0.0f : -std::numeric_limits<float>::infinity();
  }
  return out;
}

Tensor EpipolarMask::apply_to_cost(const Tensor& cost) const {
  if (cost.shape() != Shape{rows_, cols_}) {
    fail(ErrorKind::kShape, "mask " + shape_to_string({rows_, cols_}) + " vs cost " +
                                shape_to_string(cost.shape()));
  }
  Tensor out = cost;
  for (std::size_t k = 0; k < allowed_.size(); ++k) {
    if (!allowed_[k]) out[k] = std::numeric_limits<float>::infinity();
  }
  return out;
}

EpipolarMask epipolar_mask(std::size_t left_width, std::size_t right_width,
                           MatchConvention convention) {
  return EpipolarMask(left_width, right_width, convention);
}

}  // namespace cstr
