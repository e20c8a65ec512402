// SPDX-License-Identifier: Apache-2.0
#include "cstr/pipeline.hpp"

#include <cmath>

namespace cstr {

namespace {

template <typename Fn>
auto stage(const std::string& where, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw e.with_context(where);
  }
}

Tensor matched_mask(const Tensor& occlusion) {
  Tensor m(occlusion.shape());
  for (std::size_t p = 0; p < m.size(); ++p) m[p] = occlusion[p] >= 0.5f ? 0.0f : 1.0f;
  return m;
}

}  // namespace

ImagePair make_image_pair(const Tensor& left, const Tensor& right) {
  ImagePair pair{to_grayscale(left), to_grayscale(right)};
  if (pair.left.shape() != pair.right.shape()) {
    fail(ErrorKind::kShape, "image pair shapes differ: left " + shape_to_string(left.shape()) +
                                ", right " + shape_to_string(right.shape()));
  }
  if (!pair.left.all_finite() || !pair.right.all_finite()) {
    fail(ErrorKind::kValue, "image pair contains non-finite values");
  }
  return pair;
}

BackboneOutput backbone_forward(const ImagePair& pair, const ModelDescription& model, const Exec& exec) {
  const RunConfig& cfg = model.config();
  const auto factor = static_cast<std::size_t>(cfg.mmp_factor);
  if (pair.left.rank() != 3 || pair.left.dim(0) != 1 || pair.left.shape() != pair.right.shape()) {
    fail(ErrorKind::kShape, "backbone: expected two [1 x H x W] images, got " +
                                shape_to_string(pair.left.shape()) + " and " +
                                shape_to_string(pair.right.shape()));
  }
  const std::size_t H = pair.left.dim(1), W = pair.left.dim(2);
  if (H % factor != 0 || W % factor != 0) {
    fail(ErrorKind::kShape, "backbone: image " + std::to_string(H) + "x" + std::to_string(W) +
                                " is not divisible by " + std::to_string(factor) + "; pad the pair first");
  }
  auto run = [&model](const Tensor& image) {
    Tensor f = image;
    const auto& convs = model.backbone();
    for (std::size_t k = 0; k < convs.size(); ++k) {
      f = conv2d(f, convs[k].kernel, convs[k].bias, convs[k].stride);
      if (k + 1 < convs.size()) f = relu(f);
    }
    return f;
  };
  std::vector<Tensor> feats(2);
  parallel_for(2, exec, [&](std::size_t s) { feats[s] = run(s == 0 ? pair.left : pair.right); });
  BackboneOutput out{feats[0], feats[1], {}};
  out.context = make_context_features(out.left, out.right,
                                      static_cast<std::size_t>(cfg.cep_width_factor), cfg.cep_strategy);
  return out;
}

LayerOutput cstr_layer(const Tensor& left, const Tensor& right, const ContextState& context,
                       std::size_t layer, const ModelDescription& model, const Exec& exec) {
  const RunConfig& cfg = model.config();
  const auto layers = static_cast<std::size_t>(cfg.layers);
  if (layer >= layers) {
    fail(ErrorKind::kValue, "cstr_layer: layer " + std::to_string(layer) + " >= " + std::to_string(layers));
  }
  const auto heads = static_cast<std::size_t>(cfg.heads);
  const MatchingLayerWeights& lw = model.layer(layer);
  const std::string where = "layer " + std::to_string(layer);

  CepStepResult ctx = stage(where + " / context", [&] {
    return cep_step(context, layer, layers, lw.context, heads, cfg.match_convention, exec);
  });

  LayerOutput out{left, right, std::move(ctx.state), {}, false};
  if (ctx.payload) {
    stage(where + " / fusion", [&] {
      out.left = path_fusion(out.left, ctx.payload->left, *lw.fusion);
      out.right = path_fusion(out.right, ctx.payload->right, *lw.fusion);
      return 0;
    });
    out.fused = true;
  }
  stage(where + " / axial", [&] {
    out.left = axial_block(out.left, lw.width, lw.height, heads, exec);
    out.right = axial_block(out.right, lw.width, lw.height, heads, exec);
    return 0;
  });
  stage(where + " / cross", [&] {
    const std::size_t w = out.left.dim(2);
    const EpipolarMask mask(w, w, cfg.match_convention);
    CrossAttentionResult x = cross_block(out.left, out.right, lw.cross, heads, &mask, exec);
    out.left = std::move(x.left);
    out.right = std::move(x.right);
    out.scores = std::move(x.scores);
    return 0;
  });
  return out;
}

GtBundle downsample_ground_truth(const GtBundle& gt, std::size_t factor, MatchConvention convention) {
  if (gt.disparity.rank() != 2 || gt.occlusion.shape() != gt.disparity.shape()) {
    fail(ErrorKind::kShape, "ground truth disparity " + shape_to_string(gt.disparity.shape()) +
                                " and occlusion " + shape_to_string(gt.occlusion.shape()) + " must match");
  }
  const std::size_t H = gt.disparity.dim(0), W = gt.disparity.dim(1);
  if (factor == 0 || H % factor != 0 || W % factor != 0) {
    fail(ErrorKind::kShape, "ground truth " + shape_to_string(gt.disparity.shape()) +
                                " is not divisible by " + std::to_string(factor));
  }
  const std::size_t h = H / factor, w = W / factor;
  GtBundle out{Tensor({h, w}), Tensor({h, w})};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const float occ = gt.occlusion.at(y * factor, x * factor) >= 0.5f ? 1.0f : 0.0f;
      const float d = gt.disparity.at(y * factor, x * factor) / static_cast<float>(factor);
      const double pos = match_position(x, d, convention);
      const bool in_range = std::isfinite(d) && pos >= 0.0 && pos <= static_cast<double>(w - 1);
      out.occlusion.at(y, x) = occ > 0.5f || !in_range ? 1.0f : 0.0f;
      out.disparity.at(y, x) = std::isfinite(d) ? d : 0.0f;
    }
  }
  return out;
}

ForwardResult forward(const ImagePair& pair, const ModelDescription& model, const GtBundle* gt,
                      const Exec& exec) {
  const RunConfig& cfg = model.config();
  BackboneOutput bb = stage("backbone", [&] { return backbone_forward(pair, model, exec); });

  ForwardResult result;
  Tensor left = std::move(bb.left), right = std::move(bb.right), scores;
  ContextState ctx = std::move(bb.context);
  for (std::size_t l = 0; l < static_cast<std::size_t>(cfg.layers); ++l) {
    LayerOutput lo = cstr_layer(left, right, ctx, l, model, exec);
    if (lo.fused) result.fused_layers.push_back(l);
    left = std::move(lo.left);
    right = std::move(lo.right);
    ctx = std::move(lo.context);
    scores = std::move(lo.scores);
  }

  const std::size_t w = scores.dim(1);
  const EpipolarMask mask(w, w, cfg.match_convention);
  result.plans = stage("optimal transport", [&] {
    return transport_scores(scores, mask, cfg.sinkhorn_iters, cfg.sinkhorn_epsilon, cfg.dustbin_cost, exec);
  });
  result.raw = stage("regression", [&] { return regress_raw(result.plans, cfg.match_convention); });
  RefinedEstimate refined = stage("refinement", [&] {
    return refine_full_res(result.raw.disparity, result.raw.occlusion, pair.left, model.refine());
  });
  result.disparity = std::move(refined.disparity);
  result.occlusion = std::move(refined.occlusion);

  if (gt) {
    result.loss = stage("loss", [&] {
      const auto factor = static_cast<std::size_t>(cfg.mmp_factor);
      if (gt->disparity.shape() != result.disparity.shape()) {
        fail(ErrorKind::kShape, "ground truth " + shape_to_string(gt->disparity.shape()) +
                                    " vs prediction " + shape_to_string(result.disparity.shape()));
      }
      const GtBundle coarse = downsample_ground_truth(*gt, factor, cfg.match_convention);
      const Tensor coarse_valid = matched_mask(coarse.occlusion);
      const Tensor full_valid = matched_mask(gt->occlusion);

      LossBreakdown parts;
      parts.rr_raw = relative_response_loss(result.plans, coarse, cfg.match_convention).value;
      parts.d1_raw = smooth_l1(result.raw.disparity, coarse.disparity, coarse_valid).value;
      parts.d1_final = smooth_l1(result.disparity, gt->disparity, full_valid).value;
      parts.be_final = binary_entropy_loss(result.occlusion, gt->occlusion).value;
      return total_loss(parts, {cfg.w1, cfg.w2, cfg.w3, cfg.w4});
    });
  }
  return result;
}

ImagePair pad_pair(const ImagePair& pair, std::size_t multiple) {
  return {pad_to_multiple(pair.left, multiple), pad_to_multiple(pair.right, multiple)};
}

ForwardResult forward_any_size(const ImagePair& pair, const ModelDescription& model, const Exec& exec) {
  const std::size_t H = pair.left.dim(1), W = pair.left.dim(2);
  ForwardResult r = forward(pad_pair(pair, static_cast<std::size_t>(model.config().mmp_factor)), model,
                            nullptr, exec);
  if (r.disparity.dim(0) != H || r.disparity.dim(1) != W) {
    r.disparity = crop(r.disparity, H, W);
    r.occlusion = crop(r.occlusion, H, W);
    // Keep disparities inside the cropped width.
    for (auto& d : r.disparity.data()) d = std::min(d, static_cast<float>(W - 1));
  }
  return r;
}

}  // namespace cstr
