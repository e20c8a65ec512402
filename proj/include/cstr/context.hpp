// SPDX-License-Identifier: Apache-2.0
//
// Context path: a width-pooled copy of the backbone features that runs its
// own axial and cross attention stack and is periodically fused back into
// the matching path.
//
// Per layer l of L, with A(.) = axial block and X(.) = cross block:
//   M1  payload = X(A(seed)),  carried = A(seed)         (every layer)
//   M2  carried = A(carried),  payload = X(carried) only at l = L - 1
//   M3  carried = X(A(carried)), payload = carried       (every layer)
#pragma once

#include <cstddef>
#include <optional>

#include "cstr/attention.hpp"
#include "cstr/config.hpp"
#include "cstr/parallel.hpp"
#include "cstr/tensor.hpp"

namespace cstr {

struct ContextState {
  Tensor seed_left, seed_right;  // pooled backbone features, never modified
  Tensor left, right;            // features carried to the next layer
  CepStrategy strategy = CepStrategy::kM3;
  std::size_t layer_index = 0;
};

// Average-pools the width of both feature maps by 2 * width_factor.
ContextState make_context_features(const Tensor& backbone_left, const Tensor& backbone_right,
                                   std::size_t width_factor, CepStrategy strategy);

struct CepLayerWeights {
  AttentionWeights width, height;
  std::optional<AttentionWeights> cross;  // required whenever the layer emits a payload
};

struct FusionPayload {
  Tensor left, right;
};

struct CepStepResult {
  ContextState state;
  std::optional<FusionPayload> payload;
};

bool cep_emits_payload(CepStrategy strategy, std::size_t layer, std::size_t total_layers) noexcept;

CepStepResult cep_step(const ContextState& state, std::size_t layer, std::size_t total_layers,
                       const CepLayerWeights& weights, std::size_t heads,
                       MatchConvention convention, const Exec& exec = {});

struct FusionWeights {
  Tensor conv1_kernel, conv1_bias;  // [c x 2c x 3 x 3], [c]
  Tensor conv2_kernel, conv2_bias;  // [c x c x 3 x 3], [c]
};

// relu(conv1([mmp, upsample(ctx)])) -> conv2. The result replaces the
// matching-path feature; there is no residual around it.
Tensor path_fusion(const Tensor& mmp_feature, const Tensor& ctx_feature, const FusionWeights& weights);

}  // namespace cstr
