// SPDX-License-Identifier: Apache-2.0
//
// Supervision losses with analytic gradients, evaluation metrics, and a
// central finite-difference gradient checker. Losses accumulate in double.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include "cstr/config.hpp"
#include "cstr/matching.hpp"
#include "cstr/tensor.hpp"

namespace cstr {

// Ground truth at one resolution. Pixels with occlusion >= 0.5 form the
// unmatched set; the rest are matched and need a finite disparity.
struct GtBundle {
  Tensor disparity;  // [h x w]
  Tensor occlusion;  // [h x w], 0 or 1
};

struct LossValue {
  double value = 0.0;
  Tensor gradient;  // same shape as the differentiated input
};

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kOcclusionClamp = 1e-7;

// Mean -log of the plan mass interpolated at each matched pixel's true
// match position, plus mean -log of each unmatched pixel's dustbin entry.
// Probabilities are floored at kProbabilityFloor. The gradient is taken
// with respect to every plan entry.
LossValue relative_response_loss(const AssignmentVolume& volume, const GtBundle& gt,
                                 MatchConvention convention = MatchConvention::kLeftNotRight);

// Mean over pixels with valid_mask > 0.5 of 0.5 e^2 (|e| < 1) or |e| - 0.5.
LossValue smooth_l1(const Tensor& pred, const Tensor& gt, const Tensor& valid_mask);

// Mean binary cross-entropy with predictions clamped to
// [kOcclusionClamp, 1 - kOcclusionClamp]; the gradient is zero where the
// clamp is active.
LossValue binary_entropy_loss(const Tensor& pred, const Tensor& gt);

struct LossWeights {
  double w1 = 1.0, w2 = 1.0, w3 = 1.0, w4 = 1.0;
};

struct LossBreakdown {
  double rr_raw = 0.0;
  double d1_raw = 0.0;
  double d1_final = 0.0;
  double be_final = 0.0;
  double total = 0.0;
};

// Combines parts into total = w1 rr_raw + w2 d1_raw + w3 d1_final + w4 be_final.
LossBreakdown total_loss(const LossBreakdown& parts, const LossWeights& weights);

// Metrics over pixels with mask > 0.5. Throw on an empty mask.
double epe(const Tensor& pred, const Tensor& gt, const Tensor& mask);
double three_px_error(const Tensor& pred, const Tensor& gt, const Tensor& mask);
// Intersection over union of two binary maps; 1 when both are empty.
double occ_iou(const Tensor& pred_binary, const Tensor& gt_binary);
// 1 where value > threshold, else 0.
Tensor binarize(const Tensor& t, float threshold = 0.5f);

using ScalarFn = std::function<double(const Tensor&)>;

// Max over checked coordinates of |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-8)
// with g_fd a central difference. The divisor is the realized float32 step
// (x + h) - (x - h). When max_coords > 0 and the tensor is larger, a seeded
// random subset of max_coords coordinates (at least 32) is checked.
double finite_diff_check(const ScalarFn& loss, const Tensor& point, const Tensor& analytic_grad,
                         float step = 1e-4f, std::size_t max_coords = 0, std::uint64_t seed = 0);

}  // namespace cstr
