// SPDX-License-Identifier: Apache-2.0
#include "cstr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cstr {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kShape, std::string(op) + ": " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
}

}  // namespace

LossValue relative_response_loss(const AssignmentVolume& volume, const GtBundle& gt,
                                 MatchConvention convention) {
  const Tensor& plans = volume.plans;
  if (plans.rank() != 3) fail(ErrorKind::kShape, "relative_response_loss: plans must be rank 3");
  const std::size_t h = volume.lines(), wl = volume.left_width(), wr = volume.right_width();
  const Shape pixel_shape = {h, wl};
  if (gt.disparity.shape() != pixel_shape || gt.occlusion.shape() != pixel_shape) {
    fail(ErrorKind::kShape, "relative_response_loss: ground truth " +
                                shape_to_string(gt.disparity.shape()) + " does not match plan pixels " +
                                shape_to_string(pixel_shape));
  }

  std::size_t n_matched = 0, n_unmatched = 0;
  for (float o : gt.occlusion.data()) (o >= 0.5f ? n_unmatched : n_matched) += 1;
  if (n_matched == 0 && n_unmatched == 0) {
    fail(ErrorKind::kValue, "relative_response_loss: no matched and no unmatched pixels");
  }

  LossValue out{0.0, Tensor(plans.shape())};
  double matched_sum = 0.0, unmatched_sum = 0.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t i = 0; i < wl; ++i) {
      const std::size_t row = (y * (wl + 1) + i) * (wr + 1);
      if (gt.occlusion.at(y, i) >= 0.5f) {
        const double t = plans[row + wr];
        unmatched_sum += -std::log(std::max(t, kProbabilityFloor));
        if (t > kProbabilityFloor) {
          out.gradient[row + wr] = static_cast<float>(-1.0 / (t * static_cast<double>(n_unmatched)));
        }
        continue;
      }
      const double d = gt.disparity.at(y, i);
      const double x = match_position(i, d, convention);
      if (!std::isfinite(d) || !(x >= 0.0) || x > static_cast<double>(wr - 1)) {
        fail(ErrorKind::kValue, "relative_response_loss: ground truth disparity " + std::to_string(d) +
                                    " at line " + std::to_string(y) + ", pixel " + std::to_string(i) +
                                    " falls outside the right line");
      }
      const auto lo = static_cast<std::size_t>(std::floor(x));
      const double frac = x - static_cast<double>(lo);
      const std::size_t hi = frac > 0.0 ? lo + 1 : lo;
      const double t = (1.0 - frac) * plans[row + lo] + frac * plans[row + hi];
      matched_sum += -std::log(std::max(t, kProbabilityFloor));
      if (t > kProbabilityFloor) {
        const double g = -1.0 / (t * static_cast<double>(n_matched));
        out.gradient[row + lo] += static_cast<float>(g * (1.0 - frac));
        if (hi != lo) out.gradient[row + hi] += static_cast<float>(g * frac);
      }
    }
  }
  if (n_matched) out.value += matched_sum / static_cast<double>(n_matched);
  if (n_unmatched) out.value += unmatched_sum / static_cast<double>(n_unmatched);
  return out;
}

LossValue smooth_l1(const Tensor& pred, const Tensor& gt, const Tensor& valid_mask) {
  require_same(pred, gt, "smooth_l1");
  require_same(pred, valid_mask, "smooth_l1");
  std::size_t n = 0;
  for (float m : valid_mask.data()) n += m > 0.5f;
  if (n == 0) fail(ErrorKind::kValue, "smooth_l1: empty valid mask");
  const double inv_n = 1.0 / static_cast<double>(n);
  LossValue out{0.0, Tensor(pred.shape())};
  double sum = 0.0;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    if (!(valid_mask[p] > 0.5f)) continue;
    const double e = static_cast<double>(pred[p]) - static_cast<double>(gt[p]);
    const double a = std::abs(e);
    if (a < 1.0) {
      sum += 0.5 * e * e;
      out.gradient[p] = static_cast<float>(e * inv_n);
    } else {
      sum += a - 0.5;
      out.gradient[p] = static_cast<float>((e > 0.0 ? 1.0 : -1.0) * inv_n);
    }
  }
  out.value = sum * inv_n;
  return out;
}

LossValue binary_entropy_loss(const Tensor& pred, const Tensor& gt) {
  require_same(pred, gt, "binary_entropy_loss");
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  LossValue out{0.0, Tensor(pred.shape())};
  double sum = 0.0;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    const double raw = pred[p];
    const double prob = std::clamp(raw, kOcclusionClamp, 1.0 - kOcclusionClamp);
    const double y = gt[p];
    sum += -(y * std::log(prob) + (1.0 - y) * std::log(1.0 - prob));
    if (raw > kOcclusionClamp && raw < 1.0 - kOcclusionClamp) {
      out.gradient[p] = static_cast<float>((prob - y) / (prob * (1.0 - prob)) * inv_n);
    }
  }
  out.value = sum * inv_n;
  return out;
}

LossBreakdown total_loss(const LossBreakdown& parts, const LossWeights& w) {
  LossBreakdown out = parts;
  out.total = w.w1 * parts.rr_raw + w.w2 * parts.d1_raw + w.w3 * parts.d1_final +
              w.w4 * parts.be_final;
  return out;
}

namespace {

std::size_t mask_count(const Tensor& mask, const char* op) {
  std::size_t n = 0;
  for (float m : mask.data()) n += m > 0.5f;
  if (n == 0) fail(ErrorKind::kValue, std::string(op) + ": empty evaluation mask");
  return n;
}

}  // namespace

double epe(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  require_same(pred, gt, "epe");
  require_same(pred, mask, "epe");
  const std::size_t n = mask_count(mask, "epe");
  double sum = 0.0;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    if (mask[p] > 0.5f) sum += std::abs(static_cast<double>(pred[p]) - static_cast<double>(gt[p]));
  }
  return sum / static_cast<double>(n);
}

double three_px_error(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  require_same(pred, gt, "three_px_error");
  require_same(pred, mask, "three_px_error");
  const std::size_t n = mask_count(mask, "three_px_error");
  std::size_t bad = 0;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    if (mask[p] > 0.5f && std::abs(static_cast<double>(pred[p]) - static_cast<double>(gt[p])) > 3.0) ++bad;
  }
  return 100.0 * static_cast<double>(bad) / static_cast<double>(n);
}

double occ_iou(const Tensor& pred_binary, const Tensor& gt_binary) {
  require_same(pred_binary, gt_binary, "occ_iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t p = 0; p < pred_binary.size(); ++p) {
    const bool a = pred_binary[p] > 0.5f, b = gt_binary[p] > 0.5f;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Tensor binarize(const Tensor& t, float threshold) {
  Tensor out(t.shape());
  for (std::size_t p = 0; p < t.size(); ++p) out[p] = t[p] > threshold ? 1.0f : 0.0f;
  return out;
}

double finite_diff_check(const ScalarFn& loss, const Tensor& point, const Tensor& analytic_grad,
                         float step, std::size_t max_coords, std::uint64_t seed) {
  if (!(step > 0.0f) || !std::isfinite(step)) fail(ErrorKind::kValue, "finite_diff_check: step must be positive");
  if (point.shape() != analytic_grad.shape()) {
    fail(ErrorKind::kShape, "finite_diff_check: point " + shape_to_string(point.shape()) +
                                " vs gradient " + shape_to_string(analytic_grad.shape()));
  }
  std::vector<std::size_t> coords(point.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (max_coords > 0 && coords.size() > max_coords) {
    const std::size_t keep = std::max<std::size_t>(max_coords, 32);
    Rng rng(seed);
    // Partial Fisher-Yates.
    for (std::size_t k = 0; k < keep; ++k) {
      const std::size_t r = k + static_cast<std::size_t>(rng.next_u64() % (coords.size() - k));
      std::swap(coords[k], coords[r]);
    }
    coords.resize(keep);
  }

  Tensor probe = point;
  double worst = 0.0;
  for (std::size_t c : coords) {
    const float x = point[c];
    const float xp = x + step, xm = x - step;
    probe[c] = xp;
    const double fp = loss(probe);
    probe[c] = xm;
    const double fm = loss(probe);
    probe[c] = x;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      fail(ErrorKind::kValue, "finite_diff_check: non-finite loss at perturbed coordinate " + std::to_string(c));
    }
    const double g_fd = (fp - fm) / (static_cast<double>(xp) - static_cast<double>(xm));
    const double g_a = analytic_grad[c];
    const double denom = std::max({std::abs(g_a), std::abs(g_fd), 1e-8});
    worst = std::max(worst, std::abs(g_a - g_fd) / denom);
  }
  return worst;
}

}  // namespace cstr
