// SPDX-License-Identifier: Apache-2.0
#include "cstr/model.hpp"

#include <bit>
#include <cmath>

namespace cstr {

namespace {

std::size_t downsample_steps(const RunConfig& c) {
  return static_cast<std::size_t>(std::countr_zero(static_cast<unsigned>(c.mmp_factor)));
}

std::size_t stage_channels(const RunConfig& c, std::size_t stage) {
  const std::size_t n = downsample_steps(c);
  if (stage == n) return static_cast<std::size_t>(c.channels);
  return std::max<std::size_t>(1, static_cast<std::size_t>(c.channels) >> (n - stage));
}

float he_stddev(std::size_t fan_in) { return std::sqrt(2.0f / static_cast<float>(fan_in)); }

void add_conv(std::vector<WeightSpec>& out, const std::string& prefix, std::size_t c_out,
              std::size_t c_in, float stddev) {
  out.push_back({prefix + ".kernel", {c_out, c_in, 3, 3}, stddev});
  out.push_back({prefix + ".bias", {c_out}, 0.0f});
}

void add_attention(std::vector<WeightSpec>& out, const std::string& prefix, const RunConfig& c) {
  const auto ch = static_cast<std::size_t>(c.channels);
  const auto span = static_cast<std::size_t>(c.rel_span);
  const float s = 1.0f / std::sqrt(static_cast<float>(ch));
  for (const char* m : {"Wq", "Wk", "Wv", "Wo"}) out.push_back({prefix + "." + m, {ch, ch}, s});
  out.push_back({prefix + ".rel", {2 * span - 1, ch}, 0.5f});
}

std::string layer_prefix(std::size_t i) { return "layer" + std::to_string(i); }

}  // namespace

std::vector<WeightSpec> weight_manifest(const RunConfig& config) {
  config.validate();
  std::vector<WeightSpec> out;
  const std::size_t n = downsample_steps(config);
  add_conv(out, "backbone.conv0", stage_channels(config, 0), 1, he_stddev(9));
  for (std::size_t k = 1; k <= n; ++k) {
    const std::size_t c_in = stage_channels(config, k - 1);
    add_conv(out, "backbone.conv" + std::to_string(k), stage_channels(config, k), c_in,
             he_stddev(9 * c_in));
  }
  const auto c = static_cast<std::size_t>(config.channels);
  const auto layers = static_cast<std::size_t>(config.layers);
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string p = layer_prefix(i);
    add_attention(out, p + ".mmp.wax", config);
    add_attention(out, p + ".mmp.hax", config);
    add_attention(out, p + ".mmp.cross", config);
    add_attention(out, p + ".cep.wax", config);
    add_attention(out, p + ".cep.hax", config);
    if (cep_emits_payload(config.cep_strategy, i, layers)) {
      add_attention(out, p + ".cep.cross", config);
      const std::string f = "fusion" + std::to_string(i);
      add_conv(out, f + ".conv1", c, 2 * c, he_stddev(9 * 2 * c));
      add_conv(out, f + ".conv2", c, c, he_stddev(9 * c));
    }
  }
  add_conv(out, "refine.conv1", kRefineHidden, 2, he_stddev(18));
  add_conv(out, "refine.conv2", 1, kRefineHidden, 0.1f * he_stddev(9 * kRefineHidden));
  add_conv(out, "refine.occ", 1, 2, 0.1f * he_stddev(18));
  return out;
}

WeightStore init_weights(const RunConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  WeightStore store;
  for (const auto& spec : weight_manifest(config)) {
    store.insert(spec.name, seeded_normal(rng, spec.shape, spec.init_stddev));
  }
  return store;
}

void validate_weights(const RunConfig& config, const WeightStore& store) {
  for (const auto& spec : weight_manifest(config)) {
    const Tensor* t = store.find(spec.name);
    if (!t) fail(ErrorKind::kConfig, "weights: missing tensor '" + spec.name + "'");
    if (t->shape() != spec.shape) {
      fail(ErrorKind::kConfig, "weights: tensor '" + spec.name + "' has shape " +
                                   shape_to_string(t->shape()) + ", expected " +
                                   shape_to_string(spec.shape));
    }
  }
}

ModelDescription::ModelDescription(RunConfig config, WeightStore weights)
    : config_(std::move(config)), store_(std::move(weights)) {
  config_.validate();
  validate_weights(config_, store_);

  auto conv = [this](const std::string& prefix, std::size_t stride) {
    return ConvWeights{store_.get(prefix + ".kernel"), store_.get(prefix + ".bias"), stride};
  };
  const std::size_t n = downsample_steps(config_);
  backbone_.push_back(conv("backbone.conv0", 1));
  for (std::size_t k = 1; k <= n; ++k) backbone_.push_back(conv("backbone.conv" + std::to_string(k), 2));

  const auto layers = static_cast<std::size_t>(config_.layers);
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string p = layer_prefix(i);
    MatchingLayerWeights lw{AttentionWeights::from_store(store_, p + ".mmp.wax"),
                            AttentionWeights::from_store(store_, p + ".mmp.hax"),
                            AttentionWeights::from_store(store_, p + ".mmp.cross"),
                            {AttentionWeights::from_store(store_, p + ".cep.wax"),
                             AttentionWeights::from_store(store_, p + ".cep.hax"), std::nullopt},
                            std::nullopt};
    if (cep_emits_payload(config_.cep_strategy, i, layers)) {
      lw.context.cross = AttentionWeights::from_store(store_, p + ".cep.cross");
      const std::string f = "fusion" + std::to_string(i);
      const ConvWeights c1 = conv(f + ".conv1", 1), c2 = conv(f + ".conv2", 1);
      lw.fusion = FusionWeights{c1.kernel, c1.bias, c2.kernel, c2.bias};
    }
    layers_.push_back(std::move(lw));
  }
  refine_ = {store_.get("refine.conv1.kernel"), store_.get("refine.conv1.bias"),
             store_.get("refine.conv2.kernel"), store_.get("refine.conv2.bias"),
             store_.get("refine.occ.kernel"),   store_.get("refine.occ.bias")};
}

}  // namespace cstr
