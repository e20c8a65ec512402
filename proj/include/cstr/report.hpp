// SPDX-License-Identifier: Apache-2.0
//
// Disparity evaluation and the key=value text the command-line tools print.
#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "cstr/tensor.hpp"

namespace cstr {

// Fixed-point rendering independent of the global locale.
std::string format_fixed(double value, int decimals = 4);

struct EvalReport {
  double epe = 0.0;
  double three_px = 0.0;  // percent
  std::optional<double> occ_iou;
  std::size_t pixels = 0;  // pixels the disparity metrics were computed over
};

// Disparity metrics over the pixels `gt_occ` marks visible (value <= 0.5),
// or over every pixel when it is null. IOU needs both occlusion maps; each
// is binarized at 0.5. Maps may be [h x w] or [1 x h x w].
EvalReport evaluate_maps(const Tensor& pred, const Tensor& gt, const Tensor* gt_occ = nullptr,
                         const Tensor* pred_occ = nullptr);

// "epe=..\nthree_px=..\n[occ_iou=..\n]pixels=..\n"
std::string format_eval_report(const EvalReport& report);

}  // namespace cstr
