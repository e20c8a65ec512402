// SPDX-License-Identifier: Apache-2.0
#include "cstr/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace cstr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const double* v, std::size_t n, std::size_t stride) {
  double peak = kNegInf;
  for (std::size_t k = 0; k < n; ++k) peak = std::max(peak, v[k * stride]);
  if (peak == kNegInf) return kNegInf;
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) sum += std::exp(v[k * stride] - peak);
  return peak + std::log(sum);
}

}  // namespace

Tensor sinkhorn(const Tensor& cost, int iters, double epsilon, double dustbin_cost) {
  if (cost.rank() != 2) fail(ErrorKind::kShape, "sinkhorn: cost must be [n x m], got " + shape_to_string(cost.shape()));
  if (iters < 1) fail(ErrorKind::kValue, "sinkhorn: iters must be at least 1");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) fail(ErrorKind::kValue, "sinkhorn: epsilon must be positive and finite");
  if (!std::isfinite(dustbin_cost)) fail(ErrorKind::kValue, "sinkhorn: dustbin cost must be finite");

  const std::size_t n = cost.dim(0), m = cost.dim(1), rows = n + 1, cols = m + 1;
  // Log kernel -C / eps, dustbins appended.
  std::vector<double> z(rows * cols, -dustbin_cost / epsilon);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const float c = cost.at(i, j);
      if (std::isnan(c) || c == -std::numeric_limits<float>::infinity()) {
        fail(ErrorKind::kValue, "sinkhorn: cost entries must be finite or +inf");
      }
      z[i * cols + j] = std::isinf(c) ? kNegInf : -static_cast<double>(c) / epsilon;
    }
  }
  std::vector<double> log_a(rows, 0.0), log_b(cols, 0.0);
  log_a[n] = std::log(static_cast<double>(m));
  log_b[m] = std::log(static_cast<double>(n));

  std::vector<double> u(rows, 0.0), v(cols, 0.0), scratch(std::max(rows, cols));
  for (int it = 0; it < iters; ++it) {
    for (std::size_t j = 0; j < cols; ++j) {
      for (std::size_t i = 0; i < rows; ++i) scratch[i] = z[i * cols + j] + u[i];
      v[j] = log_b[j] - log_sum_exp(scratch.data(), rows, 1);
    }
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) scratch[j] = z[i * cols + j] + v[j];
      u[i] = log_a[i] - log_sum_exp(scratch.data(), cols, 1);
    }
  }

  Tensor plan({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double lz = z[i * cols + j];
      plan.at(i, j) = lz == kNegInf ? 0.0f : static_cast<float>(std::exp(lz + u[i] + v[j]));
    }
  }
  if (!plan.all_finite()) fail(ErrorKind::kValue, "sinkhorn: plan became non-finite");
  return plan;
}

AssignmentVolume transport_scores(const Tensor& scores, const EpipolarMask& mask, int iters,
                                  double epsilon, double dustbin_cost, const Exec& exec) {
  if (scores.rank() != 3 || scores.dim(1) != mask.rows() || scores.dim(2) != mask.cols()) {
    fail(ErrorKind::kShape, "transport_scores: scores " + shape_to_string(scores.shape()) +
                                " vs mask " + shape_to_string({mask.rows(), mask.cols()}));
  }
  const std::size_t h = scores.dim(0), n = mask.rows(), m = mask.cols();
  AssignmentVolume out{Tensor({h, n + 1, m + 1})};
  parallel_for(h, exec, [&](std::size_t y) {
    Tensor cost({n, m});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const float s = scores.at(y, i, j);
        cost.at(i, j) = mask.allowed(i, j) ? -s : std::numeric_limits<float>::infinity();
        if (mask.allowed(i, j) && !std::isfinite(s)) {
          fail(ErrorKind::kValue, "transport_scores: non-finite score on an admissible cell");
        }
      }
    const Tensor plan = sinkhorn(cost, iters, epsilon, dustbin_cost);
    std::copy(plan.data().begin(), plan.data().end(),
              out.plans.data().begin() + static_cast<std::ptrdiff_t>(y * plan.size()));
  });
  return out;
}

RawEstimate regress_raw(const AssignmentVolume& volume, MatchConvention convention) {
  if (volume.plans.rank() != 3 || volume.plans.dim(1) < 2 || volume.plans.dim(2) < 2) {
    fail(ErrorKind::kShape, "regress_raw: plans must be [h x (w_l+1) x (w_r+1)] with w_l, w_r >= 1, got " +
                                shape_to_string(volume.plans.shape()));
  }
  const std::size_t h = volume.lines(), wl = volume.left_width(), wr = volume.right_width();
  const EpipolarMask mask(wl, wr, convention);
  RawEstimate out{Tensor({h, wl}), Tensor({h, wl})};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t i = 0; i < wl; ++i) {
      std::size_t best = wr;
      float best_mass = -1.0f;
      for (std::size_t j = 0; j < wr; ++j) {
        if (!mask.allowed(i, j)) continue;
        const float t = volume.at(y, i, j);
        if (t > best_mass) best_mass = t, best = j;
      }
      if (best == wr) {
        fail(ErrorKind::kValue, "regress_raw: left pixel " + std::to_string(i) +
                                    " has no admissible candidate");
      }
      const std::size_t lo = best == 0 ? 0 : best - 1;
      const std::size_t hi = std::min(best + 1, wr - 1);
      float mass = 0.0f;
      for (std::size_t j = lo; j <= hi; ++j) {
        if (mask.allowed(i, j)) mass += volume.at(y, i, j);
      }
      float disparity = static_cast<float>(candidate_disparity(i, best));
      if (mass > 0.0f) {
        disparity = 0.0f;
        for (std::size_t j = lo; j <= hi; ++j) {
          if (!mask.allowed(i, j)) continue;
          disparity += static_cast<float>(candidate_disparity(i, j)) * (volume.at(y, i, j) / mass);
        }
      }
      out.disparity.at(y, i) = disparity;
      out.occlusion.at(y, i) = std::clamp(1.0f - mass, 0.0f, 1.0f);
    }
  }
  return out;
}

RefinedEstimate refine_full_res(const Tensor& raw_disparity, const Tensor& raw_occlusion,
                                const Tensor& left_image, const RefineWeights& weights) {
  if (raw_disparity.rank() != 2 || raw_occlusion.shape() != raw_disparity.shape()) {
    fail(ErrorKind::kShape, "refine_full_res: raw maps must share an [h x w] shape, got " +
                                shape_to_string(raw_disparity.shape()) + " and " +
                                shape_to_string(raw_occlusion.shape()));
  }
  const Tensor image = left_image.rank() == 2
                           ? left_image.reshaped({1, left_image.dim(0), left_image.dim(1)})
                           : left_image;
  if (image.rank() != 3 || image.dim(0) != 1) {
    fail(ErrorKind::kShape, "refine_full_res: image must be single-channel, got " +
                                shape_to_string(left_image.shape()));
  }
  const std::size_t h = raw_disparity.dim(0), w = raw_disparity.dim(1);
  const std::size_t H = image.dim(1), W = image.dim(2);
  if (H % h != 0 || W % w != 0 || H / h != W / w) {
    fail(ErrorKind::kShape, "refine_full_res: image " + shape_to_string(image.shape()) +
                                " is not an integer multiple of raw maps " +
                                shape_to_string(raw_disparity.shape()));
  }
  const float factor = static_cast<float>(W / w);

  Tensor disparity = scale(bilinear_upsample(raw_disparity, H, W), factor).reshaped({1, H, W});
  const Tensor base_occ = bilinear_upsample(raw_occlusion, H, W).reshaped({1, H, W});

  const Tensor disp_in = concat_channels({&disparity, &image});
  const Tensor hidden = relu(conv2d(disp_in, weights.conv1_kernel, weights.conv1_bias));
  const Tensor residual = conv2d(hidden, weights.conv2_kernel, weights.conv2_bias);

  const Tensor occ_in = concat_channels({&base_occ, &image});
  const Tensor occ_delta = conv2d(occ_in, weights.occ_kernel, weights.occ_bias);

  RefinedEstimate out{Tensor({H, W}), Tensor({H, W})};
  constexpr float kLogitClamp = 1e-6f;
  const float max_disp = static_cast<float>(W - 1);
  for (std::size_t p = 0; p < H * W; ++p) {
    out.disparity[p] = std::clamp(disparity[p] + residual[p], 0.0f, max_disp);
    const float q = std::clamp(base_occ[p], kLogitClamp, 1.0f - kLogitClamp);
    const float logit = std::log(q / (1.0f - q)) + occ_delta[p];
    out.occlusion[p] = 1.0f / (1.0f + std::exp(-logit));
  }
  return out;
}

}  // namespace cstr
