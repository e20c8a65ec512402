// SPDX-License-Identifier: Apache-2.0
//
// Matching head: dustbin-augmented entropic optimal transport over each
// epipolar line, windowed disparity/occlusion regression, and the
// full-resolution refinement block.
#pragma once

#include <cstddef>

#include "cstr/config.hpp"
#include "cstr/mask.hpp"
#include "cstr/parallel.hpp"
#include "cstr/tensor.hpp"

namespace cstr {

// Transport plans of every line, [h x (w_left + 1) x (w_right + 1)]. The last
// row and column of each plan are the dustbins. Real rows carry unit mass,
// real columns unit mass, the dustbin row w_right and the dustbin column
// w_left; the dustbin/dustbin corner is a slack cell in [0, min(w_l, w_r)].
struct AssignmentVolume {
  Tensor plans;

  std::size_t lines() const { return plans.dim(0); }
  std::size_t left_width() const { return plans.dim(1) - 1; }
  std::size_t right_width() const { return plans.dim(2) - 1; }
  float at(std::size_t line, std::size_t i, std::size_t j) const { return plans.at(line, i, j); }
};

// Log-domain Sinkhorn on `cost` [n x m] (entries finite or +inf) augmented
// with a dustbin row and column of constant `dustbin_cost`. Each iteration
// normalizes columns, then rows, so real-row marginals are exact on return.
Tensor sinkhorn(const Tensor& cost, int iters, double epsilon, double dustbin_cost = 0.0);

// Cost = -scores on admissible cells, +inf elsewhere, one plan per line.
AssignmentVolume transport_scores(const Tensor& scores, const EpipolarMask& mask, int iters,
                                  double epsilon, double dustbin_cost, const Exec& exec = {});

struct RawEstimate {
  Tensor disparity;  // [h x w_left], pixels at plan resolution
  Tensor occlusion;  // [h x w_left], in [0, 1]
};

// Per left pixel: argmax over admissible right candidates, a three-candidate
// window around it (clipped to admissible, in-range candidates), window mass
// renormalized into a disparity expectation, occlusion = 1 - window mass.
RawEstimate regress_raw(const AssignmentVolume& volume, MatchConvention convention);

struct RefineWeights {
  Tensor conv1_kernel, conv1_bias;  // [hidden x 2 x 3 x 3]
  Tensor conv2_kernel, conv2_bias;  // [1 x hidden x 3 x 3]
  Tensor occ_kernel, occ_bias;      // [1 x 2 x 3 x 3]
};

struct RefinedEstimate {
  Tensor disparity;  // [H x W]
  Tensor occlusion;  // [H x W]
};

// Upsamples raw maps to the image size (disparity values scaled by the
// resolution ratio), adds a two-convolution residual computed from
// [disparity, image] and corrects occlusion in logit space with one
// convolution over [occlusion, image]. Disparity is clamped to [0, W - 1].
RefinedEstimate refine_full_res(const Tensor& raw_disparity, const Tensor& raw_occlusion,
                                const Tensor& left_image, const RefineWeights& weights);

}  // namespace cstr
