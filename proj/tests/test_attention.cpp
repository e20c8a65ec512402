// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include "cstr/attention.hpp"
#include "cstr/oracle.hpp"

using cstr::AttentionWeights;
using cstr::ErrorKind;
using cstr::Tensor;

namespace {

AttentionWeights random_weights(std::uint64_t seed, std::size_t c, std::size_t span) {
  cstr::Rng rng(seed);
  return AttentionWeights::random(rng, c, span);
}

// Tokens [n x c] of row y / column x.
Tensor row_of(const Tensor& f, std::size_t y) {
  Tensor t({f.dim(2), f.dim(0)});
  for (std::size_t i = 0; i < f.dim(2); ++i)
    for (std::size_t k = 0; k < f.dim(0); ++k) t.at(i, k) = f.at(k, y, i);
  return t;
}

Tensor pre_residual(const Tensor& out, const Tensor& in) {
  Tensor d(out.shape());
  for (std::size_t k = 0; k < d.size(); ++k) d[k] = out[k] - in[k];
  return d;
}

}  // namespace

TEST_CASE("relative_logits hand-computed two-token case") {
  AttentionWeights w = AttentionWeights::zeros(1, 2);
  w.wq[0] = 2.0f;
  w.wk[0] = 3.0f;
  w.rel = Tensor({3, 1}, {0.5f, 1.0f, -2.0f});  // offsets -1, 0, +1
  const Tensor x({2, 1}, {1.0f, -1.0f});
  CHECK(cstr::relative_logits(x, w, 0, 1) == Tensor({2, 2}, {18.0f, -6.0f, -6.0f, -6.0f}));
}

TEST_CASE("relative_logits structure") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    AttentionWeights w = random_weights(seed, 8, 10);
    const Tensor x = test::uniform(100 + seed, {7, 8});
    const Tensor zero_content = cstr::relative_logits(Tensor({7, 8}), w, 1, 2);
    for (float v : zero_content.data()) CHECK(v == 0.0f);
    w.rel = Tensor(w.rel.shape());
    for (std::size_t h = 0; h < 2; ++h) {
      CHECK(cstr::bit_identical(cstr::relative_logits(x, w, h, 2), cstr::oracle::content_logits(x, w, h, 2)));
    }
  }
}

TEST_CASE("relative_logits errors") {
  const AttentionWeights w = random_weights(1, 4, 3);
  CHECK_ERROR_KIND(cstr::relative_logits(Tensor({4, 4}), w, 0, 1), ErrorKind::kValue);  // longer than span
  CHECK_ERROR_KIND(cstr::relative_logits(Tensor({2, 4}), w, 0, 3), ErrorKind::kShape);
  CHECK_ERROR_KIND(cstr::relative_logits(Tensor({2, 4}), w, 2, 2), ErrorKind::kValue);
  CHECK_ERROR_KIND(cstr::relative_logits(Tensor({2, 5}), w, 0, 1), ErrorKind::kShape);
}

TEST_CASE("single-token rows reduce to the value projection") {
  const AttentionWeights w = random_weights(2, 4, 4);
  const Tensor f = test::uniform(3, {4, 3, 1});
  const Tensor out = cstr::axial_attention_width(f, w, 2);
  const Tensor g = test::uniform(4, {4, 1, 3});
  const Tensor hout = cstr::axial_attention_height(g, w, 2);
  for (std::size_t y = 0; y < 3; ++y) {
    const Tensor proj = cstr::matmul(cstr::matmul(row_of(f, y), w.wv), w.wo);
    for (std::size_t k = 0; k < 4; ++k) CHECK(out.at(k, y, 0) == doctest::Approx(f.at(k, y, 0) + proj.at(0, k)));
  }
  for (std::size_t x = 0; x < 3; ++x) {
    Tensor tok({1, 4});
    for (std::size_t k = 0; k < 4; ++k) tok.at(0, k) = g.at(k, 0, x);
    const Tensor proj = cstr::matmul(cstr::matmul(tok, w.wv), w.wo);
    for (std::size_t k = 0; k < 4; ++k) CHECK(hout.at(k, 0, x) == doctest::Approx(g.at(k, 0, x) + proj.at(0, k)));
  }
}

TEST_CASE("zero query projection gives uniform attention") {
  AttentionWeights w = random_weights(5, 4, 6);
  w.wq = Tensor({4, 4});
  const Tensor f = test::uniform(6, {4, 2, 6});
  const Tensor d = pre_residual(cstr::axial_attention_width(f, w, 2), f);
  for (std::size_t y = 0; y < 2; ++y) {
    const Tensor v = cstr::matmul(row_of(f, y), w.wv);
    Tensor mean({1, 4});
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t k = 0; k < 4; ++k) mean.at(0, k) += v.at(i, k) / 6.0f;
    const Tensor want = cstr::matmul(mean, w.wo);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(d.at(k, y, i) - want.at(0, k)) < 1e-5);
  }
}

TEST_CASE("axial attention matches the dense oracle") {
  const AttentionWeights w = random_weights(7, 8, 8);
  const Tensor row = test::uniform(8, {8, 1, 8});
  CHECK(test::max_abs_diff(cstr::axial_attention_width(row, w, 4), cstr::oracle::dense_width(row, w, 4)) < 1e-5);
  const Tensor col = test::uniform(9, {8, 6, 1});
  CHECK(test::max_abs_diff(cstr::axial_attention_height(col, w, 2), cstr::oracle::dense_height(col, w, 2)) < 1e-5);
  const Tensor big = test::uniform(10, {8, 5, 7});
  CHECK(test::max_abs_diff(cstr::axial_attention_width(big, w, 1), cstr::oracle::dense_width(big, w, 1)) < 1e-5);
  CHECK(test::max_abs_diff(cstr::axial_attention_height(big, w, 8), cstr::oracle::dense_height(big, w, 8)) < 1e-5);
}

TEST_CASE("without position terms attention is shift-equivariant on periodic rows") {
  AttentionWeights w = random_weights(11, 4, 8);
  w.rel = Tensor(w.rel.shape());
  const Tensor f = test::uniform(12, {4, 2, 8});
  for (std::size_t s = 1; s < 8; s += 3) {
    Tensor shifted(f.shape());
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 8; ++x) shifted.at(k, y, (x + s) % 8) = f.at(k, y, x);
    const Tensor a = pre_residual(cstr::axial_attention_width(f, w, 2), f);
    const Tensor b = pre_residual(cstr::axial_attention_width(shifted, w, 2), shifted);
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 8; ++x) CHECK(std::abs(b.at(k, y, (x + s) % 8) - a.at(k, y, x)) < 1e-5);
  }
}

TEST_CASE("output shape does not depend on the head count") {
  const AttentionWeights w = random_weights(13, 8, 5);
  const Tensor f = test::uniform(14, {8, 3, 5});
  for (std::size_t heads : {1, 2, 4, 8}) {
    CHECK(cstr::axial_attention_width(f, w, heads).shape() == f.shape());
    CHECK(cstr::axial_block(f, w, w, heads).shape() == f.shape());
  }
  CHECK_ERROR_KIND(cstr::axial_attention_width(f, w, 3), ErrorKind::kShape);
  CHECK_ERROR_KIND(cstr::axial_attention_width(Tensor({8, 5}), w, 1), ErrorKind::kShape);
}

TEST_CASE("cross attention with uniform weights on identical inputs") {
  AttentionWeights w = random_weights(15, 4, 5);
  w.wq = Tensor({4, 4});
  const Tensor f = test::uniform(16, {4, 2, 5});
  const cstr::CrossAttentionResult r = cstr::cross_attention(f, f, w, 2);
  const Tensor want = cstr::axial_attention_width(f, w, 2);
  CHECK(test::max_abs_diff(r.left, want) < 1e-5);
  CHECK(test::max_abs_diff(r.right, want) < 1e-5);
}

TEST_CASE("masked cross attention: single admissible partner") {
  const AttentionWeights w = random_weights(17, 4, 4);
  const Tensor l = test::uniform(18, {4, 1, 4}), r = test::uniform(19, {4, 1, 4});
  const cstr::EpipolarMask mask(4, 4, cstr::MatchConvention::kLeftNotRight);
  const cstr::CrossAttentionResult x = cstr::cross_attention(l, r, w, 2, &mask);
  // Left pixel 3 may only see right pixel 3; right pixel 0 only left pixel 0.
  const Tensor pl = cstr::matmul(cstr::matmul(row_of(r, 0), w.wv), w.wo);
  const Tensor pr = cstr::matmul(cstr::matmul(row_of(l, 0), w.wv), w.wo);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(x.left.at(k, 0, 3) - l.at(k, 0, 3) == doctest::Approx(pl.at(3, k)).epsilon(1e-5));
    CHECK(x.right.at(k, 0, 0) - r.at(k, 0, 0) == doctest::Approx(pr.at(0, k)).epsilon(1e-5));
  }
}

TEST_CASE("masked cross attention matches the dense oracle") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const AttentionWeights w = random_weights(20 + seed, 4, 4);
    const Tensor l = test::uniform(30 + seed, {4, 1, 4}), r = test::uniform(40 + seed, {4, 1, 4});
    const auto conv = seed % 2 ? cstr::MatchConvention::kRightNotLeft : cstr::MatchConvention::kLeftNotRight;
    const cstr::EpipolarMask mask(4, 4, conv);
    const cstr::CrossAttentionResult x = cstr::cross_attention(l, r, w, 2, &mask);
    const cstr::oracle::DenseCross d = cstr::oracle::dense_cross(l, r, w, 2, mask);
    CHECK(test::max_abs_diff(x.left, d.left) < 1e-5);
    CHECK(test::max_abs_diff(x.right, d.right) < 1e-5);
  }
}

TEST_CASE("cross scores are head-averaged masked logits") {
  const AttentionWeights w = random_weights(50, 8, 6);
  const Tensor l = test::uniform(51, {8, 2, 6}), r = test::uniform(52, {8, 2, 6});
  const cstr::EpipolarMask mask(6, 6, cstr::MatchConvention::kLeftNotRight);
  const cstr::CrossAttentionResult x = cstr::cross_attention(l, r, w, 4, &mask);
  CHECK(x.scores.shape() == cstr::Shape{2, 6, 6});
  for (std::size_t y = 0; y < 2; ++y) {
    Tensor mean({6, 6});
    for (std::size_t h = 0; h < 4; ++h) {
      const Tensor lg = cstr::relative_logits(row_of(l, y), row_of(r, y), w, h, 4);
      for (std::size_t e = 0; e < 36; ++e) mean[e] += lg[e] / 4.0f;
    }
    Tensor line({6, 6});
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j) {
        line.at(i, j) = x.scores.at(y, i, j);
        if (mask.allowed(i, j)) {
          CHECK(x.scores.at(y, i, j) == doctest::Approx(mean.at(i, j)).epsilon(1e-5));
        } else {
          CHECK(x.scores.at(y, i, j) == -std::numeric_limits<float>::infinity());
        }
      }
    // Softmax over the admissible entries of every score row is a distribution.
    const Tensor p = cstr::softmax_axis(line, 1);
    for (std::size_t i = 0; i < 6; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 6; ++j) s += p.at(i, j);
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("cross attention errors") {
  const AttentionWeights w = random_weights(60, 4, 4);
  const Tensor a = test::uniform(61, {4, 1, 4});
  CHECK_ERROR_KIND(cstr::cross_attention(a, test::uniform(62, {4, 1, 3}), w, 1), ErrorKind::kShape);
  const cstr::EpipolarMask wrong(3, 3, cstr::MatchConvention::kLeftNotRight);
  CHECK_ERROR_KIND(cstr::cross_attention(a, a, w, 1, &wrong), ErrorKind::kShape);
}

TEST_CASE("weights store round trip") {
  const AttentionWeights w = random_weights(70, 4, 3);
  cstr::WeightStore s;
  w.to_store(s, "x");
  CHECK(s.size() == 5);
  CHECK(s.contains("x.rel"));
  const AttentionWeights back = AttentionWeights::from_store(s, "x");
  CHECK(back.wq == w.wq);
  CHECK(back.rel == w.rel);
  CHECK(back.span() == 3);
  CHECK_ERROR_KIND(AttentionWeights::from_store(s, "y"), ErrorKind::kConfig);
}
