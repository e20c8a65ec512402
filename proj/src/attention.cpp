// SPDX-License-Identifier: Apache-2.0
#include "cstr/attention.hpp"

#include <cmath>
#include <limits>

namespace cstr {

void AttentionWeights::validate(std::size_t heads) const {
  const Shape square = {wq.dim(0), wq.dim(0)};
  const std::size_t c = square[0];
  for (const auto* m : {&wq, &wk, &wv, &wo}) {
    if (m->shape() != square) {
      fail(ErrorKind::kShape, "attention projections must all be " + shape_to_string(square) +
                                  ", got " + shape_to_string(m->shape()));
    }
  }
  if (rel.rank() != 2 || rel.dim(1) != c || rel.dim(0) % 2 == 0) {
    fail(ErrorKind::kShape, "relative position table must be [(2*span-1) x " + std::to_string(c) +
                                "], got " + shape_to_string(rel.shape()));
  }
  if (heads == 0 || c % heads != 0) {
    fail(ErrorKind::kShape, "channels (" + std::to_string(c) + ") not divisible by heads (" +
                                std::to_string(heads) + ")");
  }
}

AttentionWeights AttentionWeights::zeros(std::size_t channels, std::size_t span) {
  return {Tensor({channels, channels}), Tensor({channels, channels}), Tensor({channels, channels}),
          Tensor({channels, channels}), Tensor({2 * span - 1, channels})};
}

AttentionWeights AttentionWeights::random(Rng& rng, std::size_t channels, std::size_t span) {
  const float s = 1.0f / std::sqrt(static_cast<float>(channels));
  AttentionWeights w;
  w.wq = seeded_normal(rng, {channels, channels}, s);
  w.wk = seeded_normal(rng, {channels, channels}, s);
  w.wv = seeded_normal(rng, {channels, channels}, s);
  w.wo = seeded_normal(rng, {channels, channels}, s);
  w.rel = seeded_normal(rng, {2 * span - 1, channels}, 0.5f);
  return w;
}

AttentionWeights AttentionWeights::from_store(const WeightStore& store, const std::string& prefix) {
  return {store.get(prefix + ".Wq"), store.get(prefix + ".Wk"), store.get(prefix + ".Wv"),
          store.get(prefix + ".Wo"), store.get(prefix + ".rel")};
}

void AttentionWeights::to_store(WeightStore& store, const std::string& prefix) const {
  store.set(prefix + ".Wq", wq);
  store.set(prefix + ".Wk", wk);
  store.set(prefix + ".Wv", wv);
  store.set(prefix + ".Wo", wo);
  store.set(prefix + ".rel", rel);
}

namespace {

// Rows of the relative table for offsets -(n-1) .. m-1, projected by Wq and
// Wk. Row r corresponds to offset r - (n - 1).
struct PositionTables {
  Tensor pq, pk;
  std::size_t zero_row;
};

PositionTables project_positions(const AttentionWeights& w, std::size_t n, std::size_t m) {
  const std::size_t span = w.span();
  if (n > span || m > span) {
    fail(ErrorKind::kValue, "line length " + std::to_string(std::max(n, m)) +
                                " exceeds relative position span " + std::to_string(span));
  }
  const std::size_t c = w.channels();
  const std::size_t rows = n + m - 1;
  const std::size_t first = span - n;  // table row of offset -(n-1)
  Tensor sub({rows, c});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) sub.at(r, k) = w.rel.at(first + r, k);
  return {matmul(sub, w.wq), matmul(sub, w.wk), n - 1};
}

// Scaled three-term logits of one head for projected queries q [n x c] and
// keys k [m x c].
void head_logits(const Tensor& q, const Tensor& k, const PositionTables& pos, std::size_t head,
                 std::size_t ch, float inv_scale, Tensor& out) {
  const std::size_t n = q.dim(0), m = k.dim(0), c0 = head * ch;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t o = pos.zero_row + j - i;
      float cc = 0.0f, cp = 0.0f, pc = 0.0f;
      for (std::size_t t = c0; t < c0 + ch; ++t) {
        cc += q.at(i, t) * k.at(j, t);
        cp += q.at(i, t) * pos.pk.at(o, t);
        pc += pos.pq.at(o, t) * k.at(j, t);
      }
      out.at(i, j) = (cc + cp + pc) * inv_scale;
    }
  }
}

// Pre-residual multi-head attention of tokens xq [n x c] over xk [m x c].
// `bias` is [n x m] (0 or -inf) or null. When `scores` is given it receives
// the head-averaged logits including the bias.
Tensor attend(const Tensor& xq, const Tensor& xk, const AttentionWeights& w, std::size_t heads,
              const PositionTables& pos, const Tensor* bias, Tensor* scores) {
  const std::size_t n = xq.dim(0), m = xk.dim(0), c = w.channels(), ch = c / heads;
  const float inv_scale = 1.0f / std::sqrt(static_cast<float>(ch));
  const Tensor q = matmul(xq, w.wq);
  const Tensor k = matmul(xk, w.wk);
  const Tensor v = matmul(xk, w.wv);

  Tensor mixed({n, c});
  Tensor logits({n, m});
  if (scores) *scores = Tensor({n, m});
  for (std::size_t h = 0; h < heads; ++h) {
    head_logits(q, k, pos, h, ch, inv_scale, logits);
    if (bias) {
      for (std::size_t e = 0; e < logits.size(); ++e) logits[e] += (*bias)[e];
    }
    if (scores) {
      for (std::size_t e = 0; e < logits.size(); ++e) (*scores)[e] += logits[e];
    }
    const Tensor probs = softmax_axis(logits, 1);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const float a = probs.at(i, j);
        if (a == 0.0f) continue;
        for (std::size_t t = h * ch; t < (h + 1) * ch; ++t) mixed.at(i, t) += a * v.at(j, t);
      }
    }
  }
  if (scores) {
    const float inv_heads = 1.0f / static_cast<float>(heads);
    for (auto& s : scores->data()) s *= inv_heads;
  }
  return matmul(mixed, w.wo);
}

void check_feature(const Tensor& f, const AttentionWeights& w, std::size_t heads, const char* op) {
  if (f.rank() != 3) {
    fail(ErrorKind::kShape, std::string(op) + ": expected [c x h x w], got " + shape_to_string(f.shape()));
  }
  w.validate(heads);
  if (f.dim(0) != w.channels()) {
    fail(ErrorKind::kShape, std::string(op) + ": feature " + shape_to_string(f.shape()) + " vs " +
                                std::to_string(w.channels()) + "-channel weights");
  }
}

// Row y of f as tokens [w x c].
Tensor row_tokens(const Tensor& f, std::size_t y) {
  const std::size_t c = f.dim(0), w = f.dim(2);
  Tensor x({w, c});
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t k = 0; k < c; ++k) x.at(i, k) = f.at(k, y, i);
  return x;
}

void add_row(Tensor& out, std::size_t y, const Tensor& tokens) {
  const std::size_t c = out.dim(0), w = out.dim(2);
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t k = 0; k < c; ++k) out.at(k, y, i) += tokens.at(i, k);
}

}  // namespace

Tensor relative_logits(const Tensor& queries, const Tensor& keys, const AttentionWeights& w,
                       std::size_t head, std::size_t heads) {
  w.validate(heads);
  if (queries.rank() != 2 || keys.rank() != 2 || queries.dim(1) != w.channels() ||
      keys.dim(1) != w.channels()) {
    fail(ErrorKind::kShape, "relative_logits: tokens " + shape_to_string(queries.shape()) + " / " +
                                shape_to_string(keys.shape()) + " vs " +
                                std::to_string(w.channels()) + "-channel weights");
  }
  if (head >= heads) fail(ErrorKind::kValue, "relative_logits: head index out of range");
  const std::size_t ch = w.channels() / heads;
  const auto pos = project_positions(w, queries.dim(0), keys.dim(0));
  Tensor out({queries.dim(0), keys.dim(0)});
  head_logits(matmul(queries, w.wq), matmul(keys, w.wk), pos, head, ch,
              1.0f / std::sqrt(static_cast<float>(ch)), out);
  return out;
}

Tensor relative_logits(const Tensor& x, const AttentionWeights& w, std::size_t head,
                       std::size_t heads) {
  return relative_logits(x, x, w, head, heads);
}

Tensor axial_attention_width(const Tensor& f, const AttentionWeights& w, std::size_t heads,
                             const Exec& exec) {
  check_feature(f, w, heads, "axial_attention_width");
  const std::size_t h = f.dim(1), width = f.dim(2);
  const auto pos = project_positions(w, width, width);
  Tensor out = f;
  parallel_for(h, exec, [&](std::size_t y) {
    const Tensor x = row_tokens(f, y);
    add_row(out, y, attend(x, x, w, heads, pos, nullptr, nullptr));
  });
  return out;
}

Tensor axial_attention_height(const Tensor& f, const AttentionWeights& w, std::size_t heads,
                              const Exec& exec) {
  check_feature(f, w, heads, "axial_attention_height");
  return transpose_hw(axial_attention_width(transpose_hw(f), w, heads, exec));
}

CrossAttentionResult cross_attention(const Tensor& left, const Tensor& right,
                                     const AttentionWeights& w, std::size_t heads,
                                     const EpipolarMask* mask, const Exec& exec) {
  check_feature(left, w, heads, "cross_attention");
  if (left.shape() != right.shape()) {
    fail(ErrorKind::kShape, "cross_attention: left " + shape_to_string(left.shape()) +
                                " vs right " + shape_to_string(right.shape()));
  }
  const std::size_t h = left.dim(1), width = left.dim(2);
  Tensor bias_lr, bias_rl;
  if (mask) {
    if (mask->rows() != width || mask->cols() != width) {
      fail(ErrorKind::kShape, "cross_attention: mask " + shape_to_string({mask->rows(), mask->cols()}) +
                                  " for line width " + std::to_string(width));
    }
    const EpipolarMask back = mask->transposed();
    for (std::size_t i = 0; i < width; ++i) {
      if (!mask->row_has_candidate(i) || !back.row_has_candidate(i)) {
        fail(ErrorKind::kValue, "cross_attention: mask leaves position " + std::to_string(i) +
                                    " with no admissible partner");
      }
    }
    bias_lr = mask->logit_bias();
    bias_rl = back.logit_bias();
  }
  const auto pos = project_positions(w, width, width);

  CrossAttentionResult result{left, right, Tensor({h, width, width})};
  parallel_for(h, exec, [&](std::size_t y) {
    const Tensor xl = row_tokens(left, y);
    const Tensor xr = row_tokens(right, y);
    Tensor line_scores;
    const Tensor to_left = attend(xl, xr, w, heads, pos, mask ? &bias_lr : nullptr, &line_scores);
    const Tensor to_right = attend(xr, xl, w, heads, pos, mask ? &bias_rl : nullptr, nullptr);
    add_row(result.left, y, to_left);
    add_row(result.right, y, to_right);
    std::copy(line_scores.data().begin(), line_scores.data().end(),
              result.scores.data().begin() + static_cast<std::ptrdiff_t>(y * width * width));
  });
  return result;
}

Tensor axial_block(const Tensor& f, const AttentionWeights& width, const AttentionWeights& height,
                   std::size_t heads, const Exec& exec) {
  const Tensor a = normalize_channels(axial_attention_width(f, width, heads, exec));
  return normalize_channels(axial_attention_height(a, height, heads, exec));
}

CrossAttentionResult cross_block(const Tensor& left, const Tensor& right, const AttentionWeights& w,
                                 std::size_t heads, const EpipolarMask* mask, const Exec& exec) {
  CrossAttentionResult r = cross_attention(left, right, w, heads, mask, exec);
  r.left = normalize_channels(r.left);
  r.right = normalize_channels(r.right);
  return r;
}

}  // namespace cstr
