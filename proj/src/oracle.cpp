// SPDX-License-Identifier: Apache-2.0
#include "cstr/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cstr::oracle {

namespace {

using Matrix = std::vector<std::vector<double>>;

// x [rows x c] times W [c x c], column range [c0, c0 + ch).
Matrix project(const Tensor& x, const Tensor& w, std::size_t c0, std::size_t ch) {
  const std::size_t rows = x.dim(0), c = x.dim(1);
  Matrix out(rows, std::vector<double>(ch, 0.0));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < ch; ++t) {
      double s = 0.0;
      for (std::size_t a = 0; a < c; ++a) s += double{x.at(r, a)} * double{w.at(a, c0 + t)};
      out[r][t] = s;
    }
  return out;
}

// Relative embedding of offset o projected by W, head slice only.
std::vector<double> project_offset(const AttentionWeights& w, long o, const Tensor& proj,
                                   std::size_t c0, std::size_t ch) {
  const auto row = static_cast<std::size_t>(o + static_cast<long>(w.span()) - 1);
  std::vector<double> out(ch, 0.0);
  for (std::size_t t = 0; t < ch; ++t)
    for (std::size_t a = 0; a < w.channels(); ++a) out[t] += double{w.rel.at(row, a)} * double{proj.at(a, c0 + t)};
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) s += a[t] * b[t];
  return s;
}

Tensor column_tokens(const Tensor& f, std::size_t x) {
  const std::size_t c = f.dim(0), h = f.dim(1);
  Tensor t({h, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t k = 0; k < c; ++k) t.at(y, k) = f.at(k, y, x);
  return t;
}

Tensor row_tokens(const Tensor& f, std::size_t y) {
  const std::size_t c = f.dim(0), w = f.dim(2);
  Tensor t({w, c});
  for (std::size_t x = 0; x < w; ++x)
    for (std::size_t k = 0; k < c; ++k) t.at(x, k) = f.at(k, y, x);
  return t;
}

}  // namespace

Tensor dense_attention(const Tensor& queries, const Tensor& keys, const AttentionWeights& w,
                       std::size_t heads, const std::vector<bool>* allowed) {
  const std::size_t n = queries.dim(0), m = keys.dim(0), c = w.channels(), ch = c / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(ch));

  // Concatenated head outputs before Wo.
  Matrix mixed(n, std::vector<double>(c, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * ch;
    const Matrix q = project(queries, w.wq, c0, ch);
    const Matrix k = project(keys, w.wk, c0, ch);
    const Matrix v = project(keys, w.wv, c0, ch);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> logit(m, -std::numeric_limits<double>::infinity());
      for (std::size_t j = 0; j < m; ++j) {
        if (allowed && !(*allowed)[i * m + j]) continue;
        const long o = static_cast<long>(j) - static_cast<long>(i);
        const auto pk = project_offset(w, o, w.wk, c0, ch);
        const auto pq = project_offset(w, o, w.wq, c0, ch);
        logit[j] = (dot(q[i], k[j]) + dot(q[i], pk) + dot(pq, k[j])) * scale;
      }
      const double peak = *std::max_element(logit.begin(), logit.end());
      double z = 0.0;
      for (double& l : logit) z += (l = std::exp(l - peak));
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t t = 0; t < ch; ++t) mixed[i][c0 + t] += logit[j] / z * v[j][t];
    }
  }
  Tensor out = queries;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < c; ++t) {
      double s = 0.0;
      for (std::size_t a = 0; a < c; ++a) s += mixed[i][a] * double{w.wo.at(a, t)};
      out.at(i, t) = static_cast<float>(double{queries.at(i, t)} + s);
    }
  return out;
}

Tensor dense_width(const Tensor& f, const AttentionWeights& w, std::size_t heads) {
  Tensor out(f.shape());
  for (std::size_t y = 0; y < f.dim(1); ++y) {
    const Tensor x = row_tokens(f, y);
    const Tensor r = dense_attention(x, x, w, heads);
    for (std::size_t i = 0; i < f.dim(2); ++i)
      for (std::size_t k = 0; k < f.dim(0); ++k) out.at(k, y, i) = r.at(i, k);
  }
  return out;
}

Tensor dense_height(const Tensor& f, const AttentionWeights& w, std::size_t heads) {
  Tensor out(f.shape());
  for (std::size_t x = 0; x < f.dim(2); ++x) {
    const Tensor col = column_tokens(f, x);
    const Tensor r = dense_attention(col, col, w, heads);
    for (std::size_t y = 0; y < f.dim(1); ++y)
      for (std::size_t k = 0; k < f.dim(0); ++k) out.at(k, y, x) = r.at(y, k);
  }
  return out;
}

DenseCross dense_cross(const Tensor& left, const Tensor& right, const AttentionWeights& w,
                       std::size_t heads, const EpipolarMask& mask) {
  const std::size_t width = left.dim(2);
  std::vector<bool> lr(width * width), rl(width * width);
  for (std::size_t i = 0; i < width; ++i)
    for (std::size_t j = 0; j < width; ++j) {
      lr[i * width + j] = mask.allowed(i, j);
      rl[j * width + i] = mask.allowed(i, j);
    }
  DenseCross out{Tensor(left.shape()), Tensor(right.shape())};
  for (std::size_t y = 0; y < left.dim(1); ++y) {
    const Tensor xl = row_tokens(left, y), xr = row_tokens(right, y);
    const Tensor a = dense_attention(xl, xr, w, heads, &lr);
    const Tensor b = dense_attention(xr, xl, w, heads, &rl);
    for (std::size_t i = 0; i < width; ++i)
      for (std::size_t k = 0; k < left.dim(0); ++k) {
        out.left.at(k, y, i) = a.at(i, k);
        out.right.at(k, y, i) = b.at(i, k);
      }
  }
  return out;
}

Tensor content_logits(const Tensor& x, const AttentionWeights& w, std::size_t head, std::size_t heads) {
  const std::size_t n = x.dim(0), ch = w.channels() / heads, c0 = head * ch;
  const Tensor q = matmul(x, w.wq), k = matmul(x, w.wk);
  const float inv_scale = 1.0f / std::sqrt(static_cast<float>(ch));
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      float cc = 0.0f;
      for (std::size_t t = c0; t < c0 + ch; ++t) cc += q.at(i, t) * k.at(j, t);
      out.at(i, j) = cc * inv_scale;
    }
  return out;
}

std::vector<double> scaling_sinkhorn(const Tensor& cost, int iters, double epsilon,
                                     double dustbin_cost) {
  const std::size_t n = cost.dim(0), m = cost.dim(1), rows = n + 1, cols = m + 1;
  std::vector<double> kernel(rows * cols, std::exp(-dustbin_cost / epsilon));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const float c = cost.at(i, j);
      kernel[i * cols + j] = std::isinf(c) ? 0.0 : std::exp(-double{c} / epsilon);
    }
  std::vector<double> a(rows, 1.0), b(cols, 1.0), u(rows, 1.0), v(cols, 1.0);
  a[n] = static_cast<double>(m);
  b[m] = static_cast<double>(n);
  for (int it = 0; it < iters; ++it) {
    for (std::size_t j = 0; j < cols; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < rows; ++i) s += kernel[i * cols + j] * u[i];
      v[j] = b[j] / s;
    }
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += kernel[i * cols + j] * v[j];
      u[i] = a[i] / s;
    }
  }
  std::vector<double> plan(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) plan[i * cols + j] = u[i] * kernel[i * cols + j] * v[j];
  return plan;
}

PixelEstimate direct_regression(std::span<const float> plan_row, std::size_t i,
                                const EpipolarMask& mask) {
  const std::size_t wr = mask.cols();
  std::vector<std::size_t> candidates;
  for (std::size_t j = 0; j < wr; ++j)
    if (mask.allowed(i, j)) candidates.push_back(j);
  if (candidates.empty()) return {};
  std::size_t k = candidates.front();
  for (std::size_t j : candidates)
    if (plan_row[j] > plan_row[k]) k = j;

  std::vector<std::size_t> window;
  for (std::size_t j : candidates)
    if (j + 1 >= k && j <= k + 1) window.push_back(j);
  float mass = 0.0f;
  for (std::size_t j : window) mass += plan_row[j];

  PixelEstimate e;
  const auto disparity_of = [i](std::size_t j) { return static_cast<float>(i > j ? i - j : j - i); };
  if (mass > 0.0f) {
    e.disparity = 0.0f;
    for (std::size_t j : window) e.disparity += disparity_of(j) * (plan_row[j] / mass);
  } else {
    e.disparity = disparity_of(k);
  }
  e.occlusion = std::clamp(1.0f - mass, 0.0f, 1.0f);
  return e;
}

}  // namespace cstr::oracle
