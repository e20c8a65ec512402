// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>

namespace cstr {

enum class CepStrategy { kM1, kM2, kM3 };

// Which side of the diagonal of a left-row x right-row matrix may match.
//  kLeftNotRight: left column i matches right column j only if i - j <= 0.
//  kRightNotLeft: the mirrored rule, i - j >= 0 (the usual rectified-stereo
//                 layout where a left pixel sits right of its match).
enum class MatchConvention { kLeftNotRight, kRightNotLeft };

const char* to_string(CepStrategy s) noexcept;
const char* to_string(MatchConvention c) noexcept;

struct RunConfig {
  int layers = 6;
  int channels = 128;
  int heads = 4;
  // Main-matching-path resolution is 1 / mmp_factor of the input.
  int mmp_factor = 4;
  CepStrategy cep_strategy = CepStrategy::kM3;
  // Context width is the MMP width average-pooled by 2 * cep_width_factor.
  int cep_width_factor = 2;
  int sinkhorn_iters = 10;
  double sinkhorn_epsilon = 0.1;
  double dustbin_cost = 0.0;
  double w1 = 1.0;
  double w2 = 1.0;
  double w3 = 1.0;
  double w4 = 1.0;
  long long seed = 0;
  // Longest line (in MMP pixels) the relative-position tables cover.
  int rel_span = 128;
  MatchConvention match_convention = MatchConvention::kLeftNotRight;

  double mmp_scale() const noexcept { return 1.0 / mmp_factor; }
  int head_channels() const noexcept { return channels / heads; }

  // Throws Error(kConfig) on the first violated invariant.
  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// UTF-8 "key = value" lines; '#' starts a comment. Keys not mentioned keep
// their defaults. Recognized keys: layers, channels, heads, mmp_scale
// (1/2, 1/4, 1/8 or 0.5, 0.25, 0.125), cep_strategy (M1|M2|M3),
// cep_width_factor, sinkhorn_iters, sinkhorn_epsilon, dustbin_cost,
// w1..w4, seed, rel_span, match_convention (left_not_right|right_not_left).
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::string& path);

// Inverse of parse_config: every key written explicitly.
std::string to_config_text(const RunConfig& config);

}  // namespace cstr
