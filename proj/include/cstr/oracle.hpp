// SPDX-License-Identifier: Apache-2.0
//
// Brute-force reference implementations used to cross-check the production
// kernels. They share no code with the kernels they check beyond Tensor
// storage: attention and transport are evaluated straight from their
// formulas in double precision.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cstr/attention.hpp"
#include "cstr/config.hpp"
#include "cstr/mask.hpp"
#include "cstr/matching.hpp"
#include "cstr/tensor.hpp"

namespace cstr::oracle {

// Queries [n x c] attending to keys [m x c]: returns queries + attention,
// each head's logits built term by term from Wq, Wk and the relative table.
// `allowed`, when given, is an [n x m] predicate in row-major order.
Tensor dense_attention(const Tensor& queries, const Tensor& keys, const AttentionWeights& w,
                       std::size_t heads, const std::vector<bool>* allowed = nullptr);

// Row-by-row and column-by-column application of dense_attention to
// [c x h x w] features. The height oracle gathers columns directly.
Tensor dense_width(const Tensor& f, const AttentionWeights& w, std::size_t heads);
Tensor dense_height(const Tensor& f, const AttentionWeights& w, std::size_t heads);

struct DenseCross {
  Tensor left, right;
};
DenseCross dense_cross(const Tensor& left, const Tensor& right, const AttentionWeights& w,
                       std::size_t heads, const EpipolarMask& mask);

// Unscaled content logits q_i . k_j of one head, float arithmetic in the
// same order as the production kernel so the comparison can be exact.
Tensor content_logits(const Tensor& x, const AttentionWeights& w, std::size_t head, std::size_t heads);

// Multiplicative-domain Sinkhorn with the same dustbin marginals, column
// update before row update. Returns the (n+1) x (m+1) plan in double.
std::vector<double> scaling_sinkhorn(const Tensor& cost, int iters, double epsilon,
                                     double dustbin_cost);

struct PixelEstimate {
  float disparity = 0.0f;
  float occlusion = 1.0f;
};

// Direct evaluation of the windowed regression for one plan row: argmax over
// admissible candidates, window of the argmax and its two neighbours,
// renormalized expectation of |i - j|, occlusion 1 - window mass.
PixelEstimate direct_regression(std::span<const float> plan_row, std::size_t i,
                                const EpipolarMask& mask);

}  // namespace cstr::oracle
