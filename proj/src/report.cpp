// SPDX-License-Identifier: Apache-2.0
#include "cstr/report.hpp"

#include <array>
#include <charconv>

#include "cstr/losses.hpp"

namespace cstr {

namespace {

Tensor as_map(const Tensor& t, const char* what) {
  if (t.rank() == 2) return t;
  if (t.rank() == 3 && t.dim(0) == 1) return t.reshaped({t.dim(1), t.dim(2)});
  fail(ErrorKind::kShape, std::string(what) + " must be [h x w], got " + shape_to_string(t.shape()));
}

void require_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kShape, std::string(what) + " " + shape_to_string(b.shape()) +
                                " does not match prediction " + shape_to_string(a.shape()));
  }
}

}  // namespace

std::string format_fixed(double value, int decimals) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] =
      std::to_chars(buf.data(), buf.data() + buf.size(), value, std::chars_format::fixed, decimals);
  if (ec != std::errc()) fail(ErrorKind::kValue, "format_fixed: value does not fit");
  std::string s(buf.data(), ptr);
  // Avoid printing "-0.0000".
  if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

EvalReport evaluate_maps(const Tensor& pred, const Tensor& gt, const Tensor* gt_occ,
                         const Tensor* pred_occ) {
  const Tensor p = as_map(pred, "prediction");
  const Tensor g = as_map(gt, "ground truth");
  require_shape(p, g, "ground truth");

  Tensor visible(p.shape(), 1.0f);
  Tensor gt_bin;
  if (gt_occ) {
    gt_bin = binarize(as_map(*gt_occ, "ground-truth occlusion"));
    require_shape(p, gt_bin, "ground-truth occlusion");
    for (std::size_t k = 0; k < visible.size(); ++k) visible[k] = 1.0f - gt_bin[k];
  }

  EvalReport r;
  for (float v : visible.data()) r.pixels += v > 0.5f;
  if (r.pixels == 0) fail(ErrorKind::kValue, "evaluation: every pixel is occluded");
  r.epe = epe(p, g, visible);
  r.three_px = three_px_error(p, g, visible);
  if (gt_occ && pred_occ) {
    const Tensor pred_bin = binarize(as_map(*pred_occ, "predicted occlusion"));
    require_shape(p, pred_bin, "predicted occlusion");
    r.occ_iou = occ_iou(pred_bin, gt_bin);
  }
  return r;
}

std::string format_eval_report(const EvalReport& report) {
  std::string out = "epe=" + format_fixed(report.epe) + "\n";
  out += "three_px=" + format_fixed(report.three_px) + "\n";
  if (report.occ_iou) out += "occ_iou=" + format_fixed(*report.occ_iou) + "\n";
  out += "pixels=" + std::to_string(report.pixels) + "\n";
  return out;
}

}  // namespace cstr
