// SPDX-License-Identifier: Apache-2.0
//
// Multi-head attention over image lines with a three-term relative position
// encoding. Tokens are channel row vectors: q = x Wq, k = x Wk, v = x Wv.
// For query position i and key position j with offset o = j - i, the logit
// of one head is
//
//   (q_i . k_j + q_i . (p_o Wk) + (p_o Wq) . k_j) / sqrt(c_head)
//
// restricted to that head's channel slice. The position-position term is
// deliberately absent.
#pragma once

#include <cstddef>
#include <string>

#include "cstr/io.hpp"
#include "cstr/mask.hpp"
#include "cstr/parallel.hpp"
#include "cstr/tensor.hpp"

namespace cstr {

struct AttentionWeights {
  Tensor wq, wk, wv;  // [c x c]
  Tensor wo;          // [c x c] output projection
  Tensor rel;         // [(2 * span - 1) x c], row o + span - 1 holds p_o

  std::size_t channels() const { return wq.dim(0); }
  std::size_t span() const { return (rel.dim(0) + 1) / 2; }

  // Throws on inconsistent shapes or a head count that does not divide c.
  void validate(std::size_t heads) const;

  static AttentionWeights zeros(std::size_t channels, std::size_t span);
  static AttentionWeights random(Rng& rng, std::size_t channels, std::size_t span);
  // Reads "<prefix>.{Wq,Wk,Wv,Wo,rel}".
  static AttentionWeights from_store(const WeightStore& store, const std::string& prefix);
  void to_store(WeightStore& store, const std::string& prefix) const;
};

// Tokens [n x c] attending to themselves.
Tensor relative_logits(const Tensor& x, const AttentionWeights& w, std::size_t head,
                       std::size_t heads);
// Queries [n x c] attending to keys [m x c]; offsets are key index minus
// query index.
Tensor relative_logits(const Tensor& queries, const Tensor& keys, const AttentionWeights& w,
                       std::size_t head, std::size_t heads);

// Self attention along each row of f [c x h x w] with shared weights.
// Returns f + attention(f).
Tensor axial_attention_width(const Tensor& f, const AttentionWeights& w, std::size_t heads,
                             const Exec& exec = {});
// Same along each column.
Tensor axial_attention_height(const Tensor& f, const AttentionWeights& w, std::size_t heads,
                              const Exec& exec = {});

struct CrossAttentionResult {
  Tensor left;    // left + attention(left -> right)
  Tensor right;   // right + attention(right -> left)
  // [h x w_left x w_right] left->right logits averaged over heads; masked
  // entries hold -inf.
  Tensor scores;
};

// Per epipolar line, each image's pixels attend to the other image's
// pixels on the same row. `mask` is [w x w] in left-row x right-column
// order; the right image uses its transpose.
CrossAttentionResult cross_attention(const Tensor& left, const Tensor& right,
                                     const AttentionWeights& w, std::size_t heads,
                                     const EpipolarMask* mask = nullptr, const Exec& exec = {});

// Transformer sublayers as stacked in a matching layer: every attention
// pass is followed by per-pixel channel normalization of its output.
Tensor axial_block(const Tensor& f, const AttentionWeights& width, const AttentionWeights& height,
                   std::size_t heads, const Exec& exec = {});
CrossAttentionResult cross_block(const Tensor& left, const Tensor& right, const AttentionWeights& w,
                                 std::size_t heads, const EpipolarMask* mask, const Exec& exec = {});

}  // namespace cstr
