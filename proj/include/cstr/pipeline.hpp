// SPDX-License-Identifier: Apache-2.0
//
// End-to-end forward pass:
//   backbone -> L matching layers (context step, optional fusion, axial
//   self attention, masked cross attention) -> optimal transport on the last
//   layer's scores -> raw regression -> full-resolution refinement.
#pragma once

#include <optional>
#include <vector>

#include "cstr/context.hpp"
#include "cstr/losses.hpp"
#include "cstr/matching.hpp"
#include "cstr/model.hpp"
#include "cstr/parallel.hpp"

namespace cstr {

// Rectified grayscale pair, each [1 x H x W] with values in [0, 1].
struct ImagePair {
  Tensor left, right;
};

// Accepts [h x w], [1 x h x w] or [3 x h x w] per side (RGB is converted to
// luma) and checks that both sides agree.
ImagePair make_image_pair(const Tensor& left, const Tensor& right);

struct BackboneOutput {
  Tensor left, right;  // [c x H/f x W/f]
  ContextState context;
};

// Image extents must be multiples of the MMP factor; see pad_pair.
BackboneOutput backbone_forward(const ImagePair& pair, const ModelDescription& model,
                                const Exec& exec = {});

struct LayerOutput {
  Tensor left, right;
  ContextState context;
  Tensor scores;  // [h x w x w] from this layer's cross attention
  bool fused = false;
};

LayerOutput cstr_layer(const Tensor& left, const Tensor& right, const ContextState& context,
                       std::size_t layer, const ModelDescription& model, const Exec& exec = {});

struct ForwardResult {
  Tensor disparity;  // [H x W], full resolution
  Tensor occlusion;  // [H x W]
  RawEstimate raw;   // at MMP resolution
  AssignmentVolume plans;
  std::vector<std::size_t> fused_layers;
  std::optional<LossBreakdown> loss;
};

// `gt`, when given, is at full resolution and produces the loss breakdown.
ForwardResult forward(const ImagePair& pair, const ModelDescription& model,
                      const GtBundle* gt = nullptr, const Exec& exec = {});

// Ground truth resampled to the plan grid: nearest sample at the top-left of
// each factor x factor block, disparity divided by factor. Matched pixels
// whose match would fall outside the right line are marked occluded.
GtBundle downsample_ground_truth(const GtBundle& gt, std::size_t factor, MatchConvention convention);

// Replicate-edge padding of both images to multiples of `multiple`.
ImagePair pad_pair(const ImagePair& pair, std::size_t multiple);

// Pads to the MMP factor, runs forward, crops the full-resolution maps back.
ForwardResult forward_any_size(const ImagePair& pair, const ModelDescription& model,
                               const Exec& exec = {});

}  // namespace cstr
