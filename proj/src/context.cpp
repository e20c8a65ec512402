// SPDX-License-Identifier: Apache-2.0
#include "cstr/context.hpp"

namespace cstr {

ContextState make_context_features(const Tensor& backbone_left, const Tensor& backbone_right,
                                   std::size_t width_factor, CepStrategy strategy) {
  if (width_factor == 0) fail(ErrorKind::kValue, "make_context_features: width factor must be at least 1");
  if (backbone_left.rank() != 3 || backbone_left.shape() != backbone_right.shape()) {
    fail(ErrorKind::kShape, "make_context_features: left " + shape_to_string(backbone_left.shape()) +
                                " vs right " + shape_to_string(backbone_right.shape()));
  }
  ContextState s;
  s.seed_left = avgpool_width(backbone_left, 2 * width_factor);
  s.seed_right = avgpool_width(backbone_right, 2 * width_factor);
  s.left = s.seed_left;
  s.right = s.seed_right;
  s.strategy = strategy;
  return s;
}

bool cep_emits_payload(CepStrategy strategy, std::size_t layer, std::size_t total_layers) noexcept {
  return strategy != CepStrategy::kM2 || layer + 1 == total_layers;
}

CepStepResult cep_step(const ContextState& state, std::size_t layer, std::size_t total_layers,
                       const CepLayerWeights& weights, std::size_t heads,
                       MatchConvention convention, const Exec& exec) {
  if (layer >= total_layers) {
    fail(ErrorKind::kValue, "cep_step: layer " + std::to_string(layer) + " >= total layers " +
                                std::to_string(total_layers));
  }
  const bool emits = cep_emits_payload(state.strategy, layer, total_layers);
  if (emits && !weights.cross) {
    fail(ErrorKind::kConfig, "cep_step: layer " + std::to_string(layer) + " needs cross-attention weights");
  }

  CepStepResult out{state, std::nullopt};
  out.state.layer_index = layer + 1;

  const bool from_seed = state.strategy == CepStrategy::kM1;
  const Tensor& in_left = from_seed ? state.seed_left : state.left;
  const Tensor& in_right = from_seed ? state.seed_right : state.right;
  Tensor axial_left = axial_block(in_left, weights.width, weights.height, heads, exec);
  Tensor axial_right = axial_block(in_right, weights.width, weights.height, heads, exec);

  if (!emits) {
    out.state.left = std::move(axial_left);
    out.state.right = std::move(axial_right);
    return out;
  }
  const std::size_t w = axial_left.dim(2);
  const EpipolarMask mask(w, w, convention);
  CrossAttentionResult x = cross_block(axial_left, axial_right, *weights.cross, heads, &mask, exec);
  if (state.strategy == CepStrategy::kM3) {
    out.state.left = x.left;
    out.state.right = x.right;
  } else {
    out.state.left = std::move(axial_left);
    out.state.right = std::move(axial_right);
  }
  out.payload = FusionPayload{std::move(x.left), std::move(x.right)};
  return out;
}

Tensor path_fusion(const Tensor& mmp_feature, const Tensor& ctx_feature, const FusionWeights& weights) {
  if (mmp_feature.rank() != 3 || ctx_feature.rank() != 3 || mmp_feature.dim(0) != ctx_feature.dim(0)) {
    fail(ErrorKind::kShape, "path_fusion: matching feature " + shape_to_string(mmp_feature.shape()) +
                                " vs context feature " + shape_to_string(ctx_feature.shape()));
  }
  const Tensor up = bilinear_upsample(ctx_feature, mmp_feature.dim(1), mmp_feature.dim(2));
  const Tensor joined = concat_channels({&mmp_feature, &up});
  const Tensor hidden = relu(conv2d(joined, weights.conv1_kernel, weights.conv1_bias));
  return conv2d(hidden, weights.conv2_kernel, weights.conv2_bias);
}

}  // namespace cstr
