// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <algorithm>

#include "cstr/pipeline.hpp"

using cstr::ErrorKind;
using cstr::ForwardResult;
using cstr::ImagePair;
using cstr::ModelDescription;
using cstr::RunConfig;
using cstr::Tensor;

// Fingerprints recorded from a reference run; any arithmetic change shows up here.
constexpr std::uint64_t kGoldenForwardDisparity = 5229274106879415823ULL;
constexpr std::uint64_t kGoldenForwardOcclusion = 3194208782735152274ULL;

namespace {

RunConfig small_config() {
  RunConfig cfg;
  cfg.layers = 2;
  cfg.channels = 8;
  cfg.heads = 2;
  cfg.rel_span = 16;
  return cfg;
}

ImagePair random_pair(std::uint64_t seed, std::size_t h, std::size_t w) {
  cstr::Rng rng(seed);
  Tensor l = cstr::seeded_uniform(rng, {1, h, w}, 0.0f, 1.0f);
  Tensor r = cstr::seeded_uniform(rng, {1, h, w}, 0.0f, 1.0f);
  return {std::move(l), std::move(r)};
}

}  // namespace

TEST_CASE("make_image_pair") {
  const ImagePair p = cstr::make_image_pair(Tensor({4, 8}, 0.5f), Tensor({1, 4, 8}, 0.5f));
  CHECK(p.left.shape() == cstr::Shape{1, 4, 8});
  CHECK(p.right.shape() == cstr::Shape{1, 4, 8});
  try {
    cstr::make_image_pair(Tensor({4, 8}), Tensor({4, 6}));
    FAIL("expected a shape error");
  } catch (const cstr::Error& e) {
    CHECK(e.kind() == ErrorKind::kShape);
    CHECK(std::string(e.what()).find("[4x8]") != std::string::npos);
    CHECK(std::string(e.what()).find("[4x6]") != std::string::npos);
  }
}

TEST_CASE("backbone output shape and zero input") {
  const RunConfig cfg;
  const ModelDescription model(cfg, cstr::init_weights(cfg, 0));
  const cstr::BackboneOutput out = cstr::backbone_forward(random_pair(1, 16, 32), model);
  CHECK(out.left.shape() == cstr::Shape{128, 4, 8});
  CHECK(out.context.seed_left.shape() == cstr::Shape{128, 4, 2});

  const cstr::BackboneOutput zero = cstr::backbone_forward({Tensor({1, 16, 32}), Tensor({1, 16, 32})}, model);
  CHECK(zero.left == Tensor({128, 4, 8}));

  CHECK_ERROR_KIND(cstr::backbone_forward(random_pair(1, 18, 32), model), ErrorKind::kShape);
}

TEST_CASE("forward shapes and fusion schedule") {
  for (auto [strategy, expected] :
       {std::pair{cstr::CepStrategy::kM1, std::vector<std::size_t>{0, 1, 2}},
        std::pair{cstr::CepStrategy::kM2, std::vector<std::size_t>{2}},
        std::pair{cstr::CepStrategy::kM3, std::vector<std::size_t>{0, 1, 2}}}) {
    RunConfig cfg = small_config();
    cfg.layers = 3;
    cfg.cep_strategy = strategy;
    const ModelDescription model(cfg, cstr::init_weights(cfg, 3));
    const ForwardResult r = cstr::forward(random_pair(2, 8, 16), model);
    CHECK(r.fused_layers == expected);
    CHECK(r.disparity.shape() == cstr::Shape{8, 16});
    CHECK(r.occlusion.shape() == cstr::Shape{8, 16});
    CHECK(r.raw.disparity.shape() == cstr::Shape{2, 4});
    CHECK(r.plans.plans.shape() == cstr::Shape{2, 5, 5});
    for (float d : r.disparity.data()) CHECK((d >= 0.0f && d <= 15.0f));
    for (float o : r.occlusion.data()) CHECK((o >= 0.0f && o <= 1.0f));
  }
}

TEST_CASE("default model fuses on every layer and is thread independent") {
  const RunConfig cfg;
  const ModelDescription model(cfg, cstr::init_weights(cfg, 0));
  const ImagePair pair = random_pair(7, 16, 32);
  const ForwardResult a = cstr::forward(pair, model, nullptr, cstr::Exec{1});
  const ForwardResult b = cstr::forward(pair, model, nullptr, cstr::Exec{4});
  CHECK(a.fused_layers.size() == 6);
  CHECK(cstr::bit_identical(a.disparity, b.disparity));
  CHECK(cstr::bit_identical(a.occlusion, b.occlusion));
  CHECK(cstr::bit_identical(a.plans.plans, b.plans.plans));
  CHECK(cstr::fingerprint(a.disparity) == kGoldenForwardDisparity);
  CHECK(cstr::fingerprint(a.occlusion) == kGoldenForwardOcclusion);
}

TEST_CASE("layer count and weight validation") {
  RunConfig cfg = small_config();
  cfg.layers = 0;
  CHECK_ERROR_KIND(cstr::init_weights(cfg, 0), ErrorKind::kConfig);
  cfg.layers = 1;
  const ModelDescription one(cfg, cstr::init_weights(cfg, 0));
  CHECK(cstr::forward(random_pair(3, 8, 8), one).fused_layers == std::vector<std::size_t>{0});

  cstr::WeightStore renamed;
  bool first = true;
  for (const auto& [name, t] : cstr::init_weights(cfg, 0)) {
    renamed.insert(first ? name + "_x" : name, t);
    first = false;
  }
  CHECK_ERROR_KIND(ModelDescription(cfg, renamed), ErrorKind::kConfig);
  CHECK_ERROR_KIND(cstr::cstr_layer(one.layer(0).width.wq, one.layer(0).width.wq, {}, 1, one), ErrorKind::kValue);
}

TEST_CASE("forward_any_size pads and crops") {
  const RunConfig cfg = small_config();
  const ModelDescription model(cfg, cstr::init_weights(cfg, 5));
  const ForwardResult r = cstr::forward_any_size(random_pair(4, 10, 18), model);
  CHECK(r.disparity.shape() == cstr::Shape{10, 18});
  CHECK(r.occlusion.shape() == cstr::Shape{10, 18});
  CHECK(*std::max_element(r.disparity.data().begin(), r.disparity.data().end()) <= 17.0f);
  const ImagePair padded = cstr::pad_pair(random_pair(4, 10, 18), 4);
  CHECK(padded.left.shape() == cstr::Shape{1, 12, 20});
}

TEST_CASE("identical images give near-zero raw disparity") {
  const RunConfig cfg;
  cstr::WeightStore store = cstr::init_weights(cfg, 0);
  const std::size_t c = static_cast<std::size_t>(cfg.channels);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    // Without a cross update the two sides stay identical through every layer.
    store.set(p + ".mmp.cross.Wo", Tensor({c, c}));
    store.set(p + ".cep.cross.Wo", Tensor({c, c}));
  }
  const std::string last = "layer" + std::to_string(cfg.layers - 1) + ".mmp.cross";
  store.set(last + ".Wq", cstr::identity(c));
  store.set(last + ".Wk", cstr::identity(c));
  store.set(last + ".rel", Tensor(store.get(last + ".rel").shape()));
  const ModelDescription model(cfg, std::move(store));

  cstr::Rng rng(99);
  const Tensor img = cstr::seeded_uniform(rng, {1, 16, 32}, 0.0f, 1.0f);
  const ForwardResult r = cstr::forward({img, img}, model);
  std::vector<float> d(r.raw.disparity.data().begin(), r.raw.disparity.data().end());
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
  CHECK(d[d.size() / 2] < 1.0f);
}

TEST_CASE("ground truth downsampling") {
  Tensor disp({4, 8}, 4.0f), occ({4, 8});
  occ.at(0, 2) = 1.0f;
  const cstr::GtBundle g = cstr::downsample_ground_truth({disp, occ}, 2, cstr::MatchConvention::kLeftNotRight);
  CHECK(g.disparity.shape() == cstr::Shape{2, 4});
  CHECK(g.disparity.at(1, 1) == 2.0f);
  CHECK(g.occlusion.at(0, 1) == 1.0f);
  CHECK(g.occlusion.at(1, 1) == 0.0f);
  // x = 2 would match at 4, past the last right pixel 3.
  CHECK(g.occlusion.at(1, 2) == 1.0f);
  CHECK_ERROR_KIND(cstr::downsample_ground_truth({disp, occ}, 3, cstr::MatchConvention::kLeftNotRight),
                   ErrorKind::kShape);
}

TEST_CASE("loss path") {
  const RunConfig cfg = small_config();
  const ModelDescription model(cfg, cstr::init_weights(cfg, 6));
  const ImagePair pair = random_pair(8, 8, 16);
  const cstr::GtBundle gt{Tensor({8, 16}, 1.0f), Tensor({8, 16})};
  const ForwardResult r = cstr::forward(pair, model, &gt);
  REQUIRE(r.loss.has_value());
  const cstr::LossBreakdown& b = *r.loss;
  CHECK(b.rr_raw > 0.0);
  CHECK(b.be_final > 0.0);
  CHECK(b.total == doctest::Approx(b.rr_raw + b.d1_raw + b.d1_final + b.be_final));
  CHECK_FALSE(cstr::forward(pair, model).loss.has_value());
  const cstr::GtBundle wrong{Tensor({8, 8}), Tensor({8, 8})};
  CHECK_ERROR_KIND(cstr::forward(pair, model, &wrong), ErrorKind::kShape);
}
