// SPDX-License-Identifier: Apache-2.0
//
// Weight naming scheme (c = channels, n = log2(mmp_factor), s = rel_span):
//
//   backbone.conv0.{kernel,bias}       [c>>n x 1 x 3 x 3], stride 1
//   backbone.conv{k}.{kernel,bias}     [c>>(n-k) x c>>(n-k+1) x 3 x 3], stride 2, k = 1..n
//   layer{i}.mmp.{wax,hax,cross}.{Wq,Wk,Wv,Wo,rel}
//   layer{i}.cep.{wax,hax}.{Wq,Wk,Wv,Wo,rel}
//   layer{i}.cep.cross.{...}           only on layers that emit a context payload
//   fusion{i}.conv{1,2}.{kernel,bias}  only on layers that emit a context payload
//   refine.conv1.{kernel,bias}         [16 x 2 x 3 x 3]
//   refine.conv2.{kernel,bias}         [1 x 16 x 3 x 3]
//   refine.occ.{kernel,bias}           [1 x 2 x 3 x 3]
//
// Projections are [c x c]; relative tables are [(2s - 1) x c]. Channel counts
// below 1 are raised to 1 and the last backbone stage always has c channels.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cstr/attention.hpp"
#include "cstr/config.hpp"
#include "cstr/context.hpp"
#include "cstr/io.hpp"
#include "cstr/matching.hpp"

namespace cstr {

inline constexpr std::size_t kRefineHidden = 16;

struct WeightSpec {
  std::string name;
  Shape shape;
  float init_stddev;
};

// Every tensor the configuration requires, in file order.
std::vector<WeightSpec> weight_manifest(const RunConfig& config);

// Seeded-normal tensors for the manifest, drawn from one Rng(seed) stream in
// manifest order. Biases are zero.
WeightStore init_weights(const RunConfig& config, std::uint64_t seed);

// Throws Error(kConfig) naming the first missing or mis-shaped tensor.
void validate_weights(const RunConfig& config, const WeightStore& store);

struct ConvWeights {
  Tensor kernel, bias;
  std::size_t stride = 1;
};

struct MatchingLayerWeights {
  AttentionWeights width, height, cross;
  CepLayerWeights context;
  std::optional<FusionWeights> fusion;
};

// Validated configuration plus typed views of its weights.
class ModelDescription {
 public:
  ModelDescription(RunConfig config, WeightStore weights);

  const RunConfig& config() const noexcept { return config_; }
  const WeightStore& weights() const noexcept { return store_; }

  const std::vector<ConvWeights>& backbone() const noexcept { return backbone_; }
  const MatchingLayerWeights& layer(std::size_t i) const { return layers_.at(i); }
  const RefineWeights& refine() const noexcept { return refine_; }

 private:
  RunConfig config_;
  WeightStore store_;
  std::vector<ConvWeights> backbone_;
  std::vector<MatchingLayerWeights> layers_;
  RefineWeights refine_;
};

}  // namespace cstr
