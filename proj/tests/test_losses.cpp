// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include "cstr/losses.hpp"

using cstr::AssignmentVolume;
using cstr::ErrorKind;
using cstr::GtBundle;
using cstr::MatchConvention;
using cstr::Tensor;

TEST_CASE("relative response loss examples") {
  // One line, three left pixels, four right pixels.
  Tensor plans({1, 4, 5});
  plans.at(0, 0, 2) = 1.0f;  // pixel 0, disparity 2 -> right 2
  plans.at(0, 1, 1) = 0.5f;  // pixel 1, disparity 0.5 -> right 1.5
  plans.at(0, 1, 2) = 0.5f;
  plans.at(0, 2, 4) = 0.25f;  // pixel 2 unmatched, dustbin 0.25
  GtBundle gt{Tensor({1, 3}, {2.0f, 0.5f, 0.0f}), Tensor({1, 3}, {0.0f, 0.0f, 1.0f})};
  const cstr::LossValue v = cstr::relative_response_loss(AssignmentVolume{plans}, gt);
  // Matched mean (0 + ln 2) / 2 plus unmatched mean -ln 0.25.
  CHECK(v.value == doctest::Approx(std::log(2.0) / 2 + std::log(4.0)));

  GtBundle mid{Tensor({1, 3}, {9.0f, 0.5f, 9.0f}), Tensor({1, 3}, {1.0f, 0.0f, 1.0f})};
  Tensor only({1, 4, 5});
  only.at(0, 1, 1) = 0.5f;
  only.at(0, 1, 2) = 0.5f;
  only.at(0, 0, 4) = 1.0f;
  only.at(0, 2, 4) = 1.0f;
  CHECK(cstr::relative_response_loss(AssignmentVolume{only}, mid).value == doctest::Approx(0.6931).epsilon(1e-4));
}

TEST_CASE("relative response loss uses the match position of the convention") {
  Tensor plans({1, 4, 4});
  plans.at(0, 2, 0) = 1.0f;
  GtBundle gt{Tensor({1, 3}, {0.0f, 0.0f, 2.0f}), Tensor({1, 3}, {1.0f, 1.0f, 0.0f})};
  plans.at(0, 0, 3) = 1.0f;
  plans.at(0, 1, 3) = 1.0f;
  CHECK(cstr::relative_response_loss(AssignmentVolume{plans}, gt, MatchConvention::kRightNotLeft).value ==
        doctest::Approx(0.0));
  CHECK_ERROR_KIND(cstr::relative_response_loss(AssignmentVolume{plans}, gt, MatchConvention::kLeftNotRight),
                   ErrorKind::kValue);
}

TEST_CASE("relative response loss gradient passes finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cstr::Rng rng(seed);
    const Tensor plans = cstr::seeded_uniform(rng, {1, 6, 6}, 0.05f, 1.0f);
    GtBundle gt{Tensor({1, 5}), Tensor({1, 5})};
    for (std::size_t i = 0; i < 5; ++i) {
      if (rng.uniform() < 0.3) gt.occlusion.at(0, i) = 1.0f;
      else gt.disparity.at(0, i) = static_cast<float>(rng.uniform(0.0, 4.0 - static_cast<double>(i)));
    }
    const auto f = [&gt](const Tensor& p) { return cstr::relative_response_loss(AssignmentVolume{p}, gt).value; };
    const auto lv = cstr::relative_response_loss(AssignmentVolume{plans}, gt);
    CHECK(lv.value >= 0.0);
    CHECK(cstr::finite_diff_check(f, plans, lv.gradient, 1e-4f) < 1e-3);
  }
}

TEST_CASE("relative response loss errors") {
  const AssignmentVolume v{Tensor({1, 3, 3}, 0.5f)};
  CHECK_ERROR_KIND(cstr::relative_response_loss(v, {Tensor({1, 3}), Tensor({1, 3})}), ErrorKind::kShape);
  CHECK_ERROR_KIND(cstr::relative_response_loss(v, {Tensor({1, 2}, {5.0f, 0.0f}), Tensor({1, 2})}), ErrorKind::kValue);
}

TEST_CASE("smooth l1 examples") {
  const Tensor one({1, 1}, 1.0f);
  CHECK(cstr::smooth_l1(Tensor({1, 1}, 2.0f), Tensor({1, 1}, 2.0f), one).value == 0.0);
  CHECK(cstr::smooth_l1(Tensor({1, 1}, 2.5f), Tensor({1, 1}, 2.0f), one).value == doctest::Approx(0.125));
  const cstr::LossValue big = cstr::smooth_l1(Tensor({1, 1}, 5.0f), Tensor({1, 1}, 2.0f), one);
  CHECK(big.value == doctest::Approx(2.5));
  CHECK(big.gradient[0] == 1.0f);
  // Invalid pixels do not contribute.
  const cstr::LossValue masked =
      cstr::smooth_l1(Tensor({1, 2}, {5.0f, 100.0f}), Tensor({1, 2}, {2.0f, 0.0f}), Tensor({1, 2}, {1.0f, 0.0f}));
  CHECK(masked.value == doctest::Approx(2.5));
  CHECK(masked.gradient[1] == 0.0f);
  CHECK_ERROR_KIND(cstr::smooth_l1(one, one, Tensor({1, 1})), ErrorKind::kValue);
  CHECK_ERROR_KIND(cstr::smooth_l1(one, Tensor({1, 2}), one), ErrorKind::kShape);
}

TEST_CASE("smooth l1 gradient passes finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cstr::Rng rng(100 + seed);
    Tensor pred = cstr::seeded_uniform(rng, {4, 4}, -3.0f, 3.0f), gt(pred.shape()), valid(pred.shape(), 1.0f);
    for (std::size_t k = 0; k < pred.size(); ++k) {
      const double e = rng.uniform() < 0.5 ? rng.uniform(0.05, 0.9) : rng.uniform(1.1, 4.0);
      gt[k] = static_cast<float>(pred[k] + (rng.uniform() < 0.5 ? e : -e));
    }
    const auto f = [&](const Tensor& p) { return cstr::smooth_l1(p, gt, valid).value; };
    CHECK(cstr::finite_diff_check(f, pred, cstr::smooth_l1(pred, gt, valid).gradient) < 1e-3);
  }
}

TEST_CASE("binary entropy examples") {
  const Tensor y({2, 2}, {0.0f, 1.0f, 1.0f, 0.0f});
  CHECK(std::abs(cstr::binary_entropy_loss(y, y).value) < 1e-6);
  CHECK(cstr::binary_entropy_loss(Tensor({2, 2}, 0.5f), y).value == doctest::Approx(0.6931).epsilon(1e-4));
  // Clamped predictions get no gradient.
  const cstr::LossValue c = cstr::binary_entropy_loss(Tensor({1, 1}, 0.0f), Tensor({1, 1}, 1.0f));
  CHECK(c.value == doctest::Approx(-std::log(cstr::kOcclusionClamp)));
  CHECK(c.gradient[0] == 0.0f);
}

TEST_CASE("binary entropy gradient passes finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cstr::Rng rng(200 + seed);
    const Tensor pred = cstr::seeded_uniform(rng, {4, 4}, 0.05f, 0.95f);
    Tensor gt(pred.shape());
    for (auto& v : gt.data()) v = rng.uniform() < 0.5 ? 1.0f : 0.0f;
    const auto f = [&gt](const Tensor& p) { return cstr::binary_entropy_loss(p, gt).value; };
    const auto lv = cstr::binary_entropy_loss(pred, gt);
    CHECK(lv.value > 0.0);
    CHECK(cstr::finite_diff_check(f, pred, lv.gradient) < 1e-3);
  }
}

TEST_CASE("total loss examples") {
  CHECK(cstr::total_loss({}, {}).total == 0.0);
  CHECK(cstr::total_loss({1, 2, 3, 4, 0}, {1, 1, 1, 1}).total == 10.0);
  CHECK(cstr::total_loss({5, 5, 2, 5, 0}, {0, 0, 1, 0}).total == 2.0);
  const cstr::LossBreakdown b = cstr::total_loss({1, 2, 3, 4, 99}, {2, 0, 0, 0});
  CHECK(b.rr_raw == 1.0);
  CHECK(b.total == 2.0);
}

TEST_CASE("metric examples") {
  const Tensor gt = test::uniform(1, {4, 4}, 0.0f, 10.0f);
  const Tensor all(gt.shape(), 1.0f);
  CHECK(cstr::epe(gt, gt, all) == 0.0);
  CHECK(cstr::three_px_error(gt, gt, all) == 0.0);

  Tensor base({4, 4}), off4({4, 4}), mixed({4, 4});
  for (std::size_t k = 0; k < 16; ++k) {
    base[k] = static_cast<float>(k);
    off4[k] = base[k] + 4.0f;
    mixed[k] = base[k] + (k < 8 ? 2.0f : 6.0f);
  }
  CHECK(cstr::epe(off4, base, all) == 4.0);
  CHECK(cstr::three_px_error(off4, base, all) == 100.0);
  CHECK(cstr::epe(mixed, base, all) == 4.0);
  CHECK(cstr::three_px_error(mixed, base, all) == 50.0);

  const Tensor occ({2, 2}, {1, 0, 1, 0});
  CHECK(cstr::occ_iou(occ, occ) == 1.0);
  CHECK(cstr::occ_iou(occ, Tensor({2, 2}, {0, 1, 0, 1})) == 0.0);
  CHECK(cstr::occ_iou(Tensor({2, 2}), Tensor({2, 2})) == 1.0);
  CHECK(cstr::binarize(Tensor({3}, {0.2f, 0.5f, 0.51f})) == Tensor({3}, {0.0f, 0.0f, 1.0f}));
  CHECK_ERROR_KIND(cstr::epe(gt, gt, Tensor({4, 4})), ErrorKind::kValue);
}

TEST_CASE("metrics are permutation invariant and scale covariant") {
  const Tensor pred = test::uniform(2, {1, 20}, 0.0f, 10.0f), gt = test::uniform(3, {1, 20}, 0.0f, 10.0f);
  const Tensor mask = test::uniform(4, {1, 20}, 0.0f, 1.0f);
  Tensor pp(pred.shape()), pg(gt.shape()), pm(mask.shape());
  for (std::size_t k = 0; k < 20; ++k) {
    const std::size_t s = (7 * k + 3) % 20;
    pp[s] = pred[k], pg[s] = gt[k], pm[s] = mask[k];
  }
  CHECK(cstr::epe(pp, pg, pm) == doctest::Approx(cstr::epe(pred, gt, mask)));
  CHECK(cstr::three_px_error(pp, pg, pm) == cstr::three_px_error(pred, gt, mask));
  CHECK(cstr::epe(cstr::scale(pred, 2.0f), cstr::scale(gt, 2.0f), mask) ==
        doctest::Approx(2.0 * cstr::epe(pred, gt, mask)));
}

TEST_CASE("finite difference checker") {
  const Tensor x = test::uniform(5, {3, 4});
  const auto half_sq = [](const Tensor& p) {
    double s = 0.0;
    for (float v : p.data()) s += 0.5 * double{v} * double{v};
    return s;
  };
  CHECK(cstr::finite_diff_check(half_sq, x, x) < 1e-6);
  // A doubled gradient is off by |2x - x| / |2x| = 0.5 on every coordinate.
  CHECK(cstr::finite_diff_check(half_sq, x, cstr::scale(x, 2.0f)) == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(cstr::finite_diff_check(half_sq, x, cstr::scale(x, -1.0f)) == doctest::Approx(2.0).epsilon(1e-3));

  const Tensor big = test::uniform(6, {100});
  CHECK(cstr::finite_diff_check(half_sq, big, big, 1e-4f, 10, 1) < 1e-6);
  CHECK_ERROR_KIND(cstr::finite_diff_check(half_sq, x, x, 0.0f), ErrorKind::kValue);
  CHECK_ERROR_KIND(cstr::finite_diff_check(half_sq, x, big), ErrorKind::kShape);
  const auto blows_up = [](const Tensor& p) { return p[0] > 0.0f ? std::numeric_limits<double>::infinity() : 0.0; };
  CHECK_ERROR_KIND(cstr::finite_diff_check(blows_up, Tensor({1}), Tensor({1})), ErrorKind::kValue);
}
