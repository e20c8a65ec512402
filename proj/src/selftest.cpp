// SPDX-License-Identifier: Apache-2.0
#include "cstr/selftest.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>

#include "cstr/attention.hpp"
#include "cstr/config.hpp"
#include "cstr/context.hpp"
#include "cstr/io.hpp"
#include "cstr/losses.hpp"
#include "cstr/matching.hpp"
#include "cstr/model.hpp"
#include "cstr/oracle.hpp"
#include "cstr/pipeline.hpp"
#include "cstr/report.hpp"

namespace cstr {

namespace {

using Clock = std::chrono::steady_clock;

std::string num(double v) {
  std::array<char, 32> buf{};
  const auto [ptr, ec] =
      std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::general, 4);
  return ec == std::errc() ? std::string(buf.data(), ptr) : std::string("?");
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = std::abs(double{a[k]} - double{b[k]});
    if (!(d <= m)) m = d;  // NaN propagates as failure
  }
  return m;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.next_u64() % (hi - lo + 1));
}

// Runs `body` and converts any exception into a failed result.
template <typename Fn>
CheckResult guarded(std::string name, int criterion, Fn&& body) {
  CheckResult r{std::move(name), criterion, false, {}};
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  } catch (...) {
    r.passed = false;
    r.detail = "unknown exception";
  }
  return r;
}

Tensor unnormalized_softmax(const Tensor& t, std::size_t axis) {
  Tensor out(t.shape());
  const std::size_t n = t.dim(axis);
  std::size_t inner = 1;
  for (std::size_t a = axis + 1; a < t.rank(); ++a) inner *= t.dim(a);
  // Rescale every slice by its largest exponent, skipping the division.
  for (std::size_t base = 0; base < t.size(); base += n * inner) {
    for (std::size_t in = 0; in < inner; ++in) {
      float peak = -std::numeric_limits<float>::infinity();
      for (std::size_t i = 0; i < n; ++i) peak = std::max(peak, t[base + in + i * inner]);
      for (std::size_t i = 0; i < n; ++i) {
        out[base + in + i * inner] = std::exp(t[base + in + i * inner] - peak);
      }
    }
  }
  return out;
}

float random_finite_float(Rng& rng) {
  for (;;) {
    const auto bits = static_cast<std::uint32_t>(rng.next_u64());
    const float f = std::bit_cast<float>(bits);
    if (std::isfinite(f)) return f;
  }
}

Tensor random_bits_tensor(Rng& rng, const Shape& shape) {
  std::vector<float> v(shape_volume(shape));
  for (auto& f : v) f = random_finite_float(rng);
  return Tensor(shape, std::move(v));
}

std::string random_name(Rng& rng) {
  static const std::array<std::string, 8> pieces = {"a", "Z", "_", ".", "7", "\xC3\xA9", "\xCE\xBB",
                                                    "\xE2\x82\xAC"};
  std::string s;
  const std::size_t n = pick(rng, 1, 12);
  for (std::size_t k = 0; k < n; ++k) s += pieces[rng.next_u64() % pieces.size()];
  return s;
}

// Structured outcome of feeding bytes to a decoder: parsed, rejected with a
// cstr::Error, or anything else (a failure).
template <typename Fn>
bool decoder_is_safe(Fn&& decode, std::string_view bytes) {
  try {
    decode(bytes);
    return true;
  } catch (const Error&) {
    return true;
  } catch (...) {
    return false;
  }
}

std::string mutate(Rng& rng, std::string bytes) {
  switch (rng.next_u64() % 4) {
    case 0:
      bytes.resize(pick(rng, 0, bytes.size() ? bytes.size() - 1 : 0));
      break;
    case 1:
      for (std::size_t k = pick(rng, 1, 4); k > 0 && !bytes.empty(); --k) {
        bytes[rng.next_u64() % bytes.size()] = static_cast<char>(rng.next_u64() & 0xff);
      }
      break;
    case 2:
      bytes.insert(rng.next_u64() % (bytes.size() + 1), 1, static_cast<char>(rng.next_u64() & 0xff));
      break;
    default: {
      std::string junk(pick(rng, 0, 64), '\0');
      for (auto& c : junk) c = static_cast<char>(rng.next_u64() & 0xff);
      bytes = bytes.substr(0, std::min<std::size_t>(bytes.size(), 12)) + junk;
    }
  }
  return bytes;
}

}  // namespace

CheckResult check_softmax(const SoftmaxFn& softmax) {
  return guarded("softmax_normalization", 0, [&](CheckResult& r) {
    double worst_sum = 0.0, worst_ratio = 0.0;
    bool bounded = true;
    Rng rng(909);
    for (int c = 0; c < 20; ++c) {
      const Tensor x = seeded_uniform(rng, {pick(rng, 1, 6), pick(rng, 1, 9)}, -30.0f, 30.0f);
      const Tensor p = softmax(x, 1);
      for (std::size_t i = 0; i < x.dim(0); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < x.dim(1); ++j) {
          const double v = p.at(i, j);
          bounded = bounded && v >= 0.0 && v <= 1.0;
          sum += v;
          if (p.at(i, 0) > 1e-6f && v > 1e-6) {
            const double want = std::exp(double{x.at(i, j)} - double{x.at(i, 0)});
            worst_ratio = std::max(worst_ratio, std::abs(v / p.at(i, 0) - want) / want);
          }
        }
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      }
    }
    const Tensor ex = softmax(Tensor({1, 3}, {std::log(1.0f), std::log(2.0f), std::log(3.0f)}), 1);
    const double ex_err = std::max({std::abs(ex[0] - 1.0 / 6), std::abs(ex[1] - 2.0 / 6),
                                    std::abs(ex[2] - 3.0 / 6)});
    const Tensor big = softmax(Tensor({1, 2}, {1000.0f, 0.0f}), 1);
    const bool big_ok = big[0] == 1.0f && big[1] == 0.0f;
    r.passed = bounded && worst_sum < 1e-6 && worst_ratio < 1e-4 && ex_err < 1e-6 && big_ok;
    r.detail = "max_row_sum_err=" + num(worst_sum) + " max_ratio_err=" + num(worst_ratio) +
               " example_err=" + num(ex_err) + (big_ok ? "" : " overflow_case_failed");
  });
}

CheckResult check_attention_oracle() {
  return guarded("attention_oracle", 1, [](CheckResult& r) {
    const auto t0 = Clock::now();
    Rng rng(1001);
    double worst = 0.0;
    int cases = 0;
    for (; cases < 24; ++cases) {
      const std::size_t c = std::array<std::size_t, 3>{2, 4, 8}[rng.next_u64() % 3];
      std::size_t heads = std::size_t{1} << (rng.next_u64() % 3);
      while (c % heads) heads /= 2;
      const std::size_t h = cases == 0 ? 16 : pick(rng, 1, 16);
      const std::size_t w = cases == 0 ? 16 : pick(rng, 1, 16);
      const std::size_t span = std::max(h, w) + pick(rng, 0, 3);
      const AttentionWeights wa = AttentionWeights::random(rng, c, span);
      const AttentionWeights wb = AttentionWeights::random(rng, c, span);
      const Tensor f = seeded_uniform(rng, {c, h, w}, -1.0f, 1.0f);
      const Tensor g = seeded_uniform(rng, {c, h, w}, -1.0f, 1.0f);
      worst = std::max(worst, max_abs_diff(axial_attention_width(f, wa, heads), oracle::dense_width(f, wa, heads)));
      worst = std::max(worst, max_abs_diff(axial_attention_height(f, wb, heads), oracle::dense_height(f, wb, heads)));
      const auto conv = cases % 2 ? MatchConvention::kRightNotLeft : MatchConvention::kLeftNotRight;
      const EpipolarMask mask(w, w, conv);
      const CrossAttentionResult x = cross_attention(f, g, wa, heads, &mask);
      const oracle::DenseCross d = oracle::dense_cross(f, g, wa, heads, mask);
      worst = std::max({worst, max_abs_diff(x.left, d.left), max_abs_diff(x.right, d.right)});
    }
    const double secs = seconds_since(t0);
    r.passed = worst < 1e-5 && secs < 10.0;
    r.detail = "cases=" + std::to_string(cases) + " max_abs_diff=" + num(worst) + " seconds=" + num(secs);
  });
}

CheckResult check_position_structure() {
  return guarded("position_encoding_structure", 2, [](CheckResult& r) {
    Rng rng(2002);
    int content_mismatch = 0, zero_mismatch = 0, cases = 0;
    for (; cases < 12; ++cases) {
      const std::size_t c = 4 * pick(rng, 1, 2), heads = pick(rng, 1, 2) * 2, n = pick(rng, 1, 12);
      AttentionWeights w = AttentionWeights::random(rng, c, n + 2);
      const Tensor x = seeded_uniform(rng, {n, c}, -1.0f, 1.0f);
      const AttentionWeights with_rel = w;
      w.rel = Tensor(w.rel.shape());
      for (std::size_t h = 0; h < heads; ++h) {
        if (!bit_identical(relative_logits(x, w, h, heads), oracle::content_logits(x, w, h, heads))) {
          ++content_mismatch;
        }
        const Tensor z = relative_logits(Tensor({n, c}), with_rel, h, heads);
        for (float v : z.data()) zero_mismatch += v != 0.0f;
      }
    }
    r.passed = content_mismatch == 0 && zero_mismatch == 0;
    r.detail = "cases=" + std::to_string(cases) + " content_mismatches=" + std::to_string(content_mismatch) +
               " nonzero_logits_without_content=" + std::to_string(zero_mismatch);
  });
}

CheckResult check_sinkhorn_conservation() {
  return guarded("sinkhorn_conservation", 3, [](CheckResult& r) {
    Rng rng(3003);
    double row_err = 0.0, mass_err = 0.0, masked = 0.0, oracle_diff = 0.0;
    int cases = 0;
    for (; cases < 24; ++cases) {
      const std::size_t n = cases == 0 ? 64 : pick(rng, 1, 64);
      const std::size_t m = cases == 0 ? 64 : (cases % 3 == 0 ? n : pick(rng, 1, 64));
      Tensor cost = seeded_uniform(rng, {n, m}, 0.0f, 10.0f);
      if (n == m && cases % 2 == 0) {
        cost = EpipolarMask(n, m, MatchConvention::kLeftNotRight).apply_to_cost(cost);
      } else {
        for (auto& v : cost.data())
          if (rng.uniform() < 0.2) v = std::numeric_limits<float>::infinity();
      }
      const Tensor plan = sinkhorn(cost, 10, 0.1);
      double total = 0.0;
      for (std::size_t i = 0; i <= n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j <= m; ++j) {
          row += plan.at(i, j);
          if (i < n && j < m && std::isinf(cost.at(i, j))) masked = std::max(masked, double{plan.at(i, j)});
        }
        if (i < n) row_err = std::max(row_err, std::abs(row - 1.0));
        total += row;
      }
      mass_err = std::max(mass_err, std::abs(total - static_cast<double>(n + m)));
      const auto ref = oracle::scaling_sinkhorn(cost, 10, 0.1, 0.0);
      for (std::size_t k = 0; k < ref.size(); ++k) {
        oracle_diff = std::max(oracle_diff, std::abs(ref[k] - double{plan[k]}));
      }
    }
    r.passed = row_err < 1e-4 && mass_err < 1e-4 && masked < 1e-8 && oracle_diff < 1e-5;
    r.detail = "cases=" + std::to_string(cases) + " max_row_err=" + num(row_err) + " max_mass_err=" +
               num(mass_err) + " max_masked_mass=" + num(masked) + " max_oracle_diff=" + num(oracle_diff);
  });
}

CheckResult check_regression_oracle() {
  return guarded("regression_oracle", 4, [](CheckResult& r) {
    Rng rng(4004);
    double worst = 0.0;
    std::size_t rows = 0;
    for (int c = 0; c < 100; ++c) {
      const std::size_t w = pick(rng, 2, 16);
      const auto conv = c % 2 ? MatchConvention::kRightNotLeft : MatchConvention::kLeftNotRight;
      Tensor plans = seeded_uniform(rng, {1, w + 1, w + 1}, 0.0f, 0.5f);
      // Sparse rows exercise window clipping and the zero-mass fallback.
      if (c % 5 == 0) {
        for (auto& v : plans.data())
          if (rng.uniform() < 0.7) v = 0.0f;
      }
      const RawEstimate est = regress_raw(AssignmentVolume{plans}, conv);
      const EpipolarMask mask(w, w, conv);
      for (std::size_t i = 0; i < w; ++i, ++rows) {
        const auto row = plans.data().subspan(i * (w + 1), w + 1);
        const oracle::PixelEstimate e = oracle::direct_regression(row, i, mask);
        worst = std::max({worst, std::abs(double{e.disparity} - est.disparity.at(0, i)),
                          std::abs(double{e.occlusion} - est.occlusion.at(0, i))});
      }
    }
    // Worked example: window [0.2, 0.5, 0.3] at disparities 4, 5, 6.
    Tensor plans({1, 9, 9});
    plans.at(0, 0, 4) = 0.2f;
    plans.at(0, 0, 5) = 0.5f;
    plans.at(0, 0, 6) = 0.3f;
    const RawEstimate ex = regress_raw(AssignmentVolume{plans}, MatchConvention::kLeftNotRight);
    const double ex_err = std::max(std::abs(ex.disparity.at(0, 0) - 5.1), std::abs(double{ex.occlusion.at(0, 0)}));
    r.passed = worst < 1e-7 && ex_err < 1e-6;
    r.detail = "rows=" + std::to_string(rows) + " max_diff=" + num(worst) + " worked_example_err=" + num(ex_err);
  });
}

CheckResult check_gradient_relative_response() {
  return guarded("gradient_relative_response", 5, [](CheckResult& r) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(5000 + seed);
      const std::size_t w = 5;
      const Tensor plans = seeded_uniform(rng, {1, w + 1, w + 1}, 0.05f, 1.0f);
      GtBundle gt{Tensor({1, w}), Tensor({1, w})};
      for (std::size_t i = 0; i < w; ++i) {
        if (i > 0 && rng.uniform() < 0.3) {
          gt.occlusion.at(0, i) = 1.0f;
        } else {
          gt.disparity.at(0, i) = static_cast<float>(rng.uniform(0.0, static_cast<double>(w - 1 - i)));
        }
      }
      const auto loss = [&gt](const Tensor& p) { return relative_response_loss(AssignmentVolume{p}, gt).value; };
      const LossValue lv = relative_response_loss(AssignmentVolume{plans}, gt);
      worst = std::max(worst, finite_diff_check(loss, plans, lv.gradient, 1e-4f));
    }
    r.passed = worst < 1e-3;
    r.detail = "seeds=20 max_rel_err=" + num(worst);
  });
}

CheckResult check_gradient_smooth_l1() {
  return guarded("gradient_smooth_l1", 5, [](CheckResult& r) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(5100 + seed);
      const Tensor pred = seeded_uniform(rng, {4, 4}, -3.0f, 3.0f);
      Tensor gt(pred.shape()), valid(pred.shape());
      for (std::size_t k = 0; k < pred.size(); ++k) {
        // Errors stay clear of the |e| = 1 kink.
        const double mag = rng.uniform() < 0.5 ? rng.uniform(0.05, 0.85) : rng.uniform(1.15, 3.0);
        gt[k] = static_cast<float>(pred[k] - (rng.uniform() < 0.5 ? -mag : mag));
        valid[k] = k == 0 || rng.uniform() < 0.75 ? 1.0f : 0.0f;
      }
      const auto loss = [&](const Tensor& p) { return smooth_l1(p, gt, valid).value; };
      worst = std::max(worst, finite_diff_check(loss, pred, smooth_l1(pred, gt, valid).gradient, 1e-4f));
    }
    r.passed = worst < 1e-3;
    r.detail = "seeds=20 max_rel_err=" + num(worst);
  });
}

CheckResult check_gradient_binary_entropy() {
  return guarded("gradient_binary_entropy", 5, [](CheckResult& r) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(5200 + seed);
      const Tensor pred = seeded_uniform(rng, {4, 4}, 0.05f, 0.95f);
      Tensor gt(pred.shape());
      for (auto& v : gt.data()) v = rng.uniform() < 0.5 ? 1.0f : 0.0f;
      const auto loss = [&gt](const Tensor& p) { return binary_entropy_loss(p, gt).value; };
      worst = std::max(worst, finite_diff_check(loss, pred, binary_entropy_loss(pred, gt).gradient, 1e-4f));
    }
    r.passed = worst < 1e-3;
    r.detail = "seeds=20 max_rel_err=" + num(worst);
  });
}

CheckResult check_cep_schedule() {
  return guarded("cep_schedule", 6, [](CheckResult& r) {
    constexpr std::size_t kLayers = 6, kChannels = 4, kHeads = 2;
    Rng rng(6006);
    const Tensor bl = seeded_uniform(rng, {kChannels, 2, 8}, -1.0f, 1.0f);
    const Tensor br = seeded_uniform(rng, {kChannels, 2, 8}, -1.0f, 1.0f);
    const std::array<std::size_t, 3> want = {6, 1, 6};
    bool ok = true;
    std::string detail;
    for (const CepStrategy s : {CepStrategy::kM1, CepStrategy::kM2, CepStrategy::kM3}) {
      ContextState state = make_context_features(bl, br, 1, s);
      std::vector<std::size_t> emitted;
      for (std::size_t l = 0; l < kLayers; ++l) {
        const CepLayerWeights w{AttentionWeights::random(rng, kChannels, 8),
                                AttentionWeights::random(rng, kChannels, 8),
                                AttentionWeights::random(rng, kChannels, 8)};
        CepStepResult step = cep_step(state, l, kLayers, w, kHeads, MatchConvention::kLeftNotRight);
        if (step.payload) emitted.push_back(l);
        state = std::move(step.state);
      }
      // The assembled model must agree with the step-level schedule.
      RunConfig cfg;
      cfg.layers = static_cast<int>(kLayers);
      cfg.channels = static_cast<int>(kChannels);
      cfg.heads = static_cast<int>(kHeads);
      cfg.mmp_factor = 2;
      cfg.cep_width_factor = 1;
      cfg.rel_span = 8;
      cfg.cep_strategy = s;
      const ModelDescription model(cfg, init_weights(cfg, 6));
      Rng img(61);
      const ImagePair pair{seeded_uniform(img, {1, 4, 16}, 0.0f, 1.0f), seeded_uniform(img, {1, 4, 16}, 0.0f, 1.0f)};
      const std::vector<std::size_t> fused = forward(pair, model).fused_layers;

      const std::size_t expected = want[static_cast<std::size_t>(s)];
      const bool last_only = s != CepStrategy::kM2 || (emitted.size() == 1 && emitted[0] == kLayers - 1);
      ok = ok && emitted.size() == expected && last_only && fused == emitted;
      detail += std::string(detail.empty() ? "" : " ") + to_string(s) + "=" + std::to_string(emitted.size());
    }
    r.passed = ok;
    r.detail = detail;
  });
}

CheckResult check_metric_identities() {
  return guarded("metric_identities", 7, [](CheckResult& r) {
    Tensor gt({4, 4});
    for (std::size_t k = 0; k < gt.size(); ++k) gt[k] = 0.5f * static_cast<float>(k);
    const Tensor all(gt.shape(), 1.0f);
    Tensor shifted = gt;
    for (auto& v : shifted.data()) v += 4.0f;

    // Columns 0-1 occluded in ground truth; errors there are 10 px, elsewhere 2 px.
    Tensor gt_occ(gt.shape()), pred_occ(gt.shape()), half = gt;
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        gt_occ.at(y, x) = x < 2 ? 1.0f : 0.0f;
        pred_occ.at(y, x) = x < 3 ? 1.0f : 0.0f;
        half.at(y, x) += x < 2 ? 10.0f : 2.0f;
      }
    const EvalReport same = evaluate_maps(gt, gt);
    const EvalReport off = evaluate_maps(shifted, gt);
    const EvalReport masked = evaluate_maps(half, gt, &gt_occ, &pred_occ);
    const std::string text = format_eval_report(same);

    const bool identities = epe(gt, gt, all) == 0.0 && three_px_error(gt, gt, all) == 0.0 &&
                            epe(shifted, gt, all) == 4.0 && three_px_error(shifted, gt, all) == 100.0 &&
                            occ_iou(binarize(gt_occ), binarize(gt_occ)) == 1.0;
    const bool evals = same.epe == 0.0 && same.three_px == 0.0 && off.epe == 4.0 && off.three_px == 100.0 &&
                       masked.pixels == 8 && masked.epe == 2.0 && masked.three_px == 0.0 &&
                       masked.occ_iou && *masked.occ_iou == 8.0 / 12.0;
    const bool printed = text.rfind("epe=0.0000\nthree_px=0.0000\n", 0) == 0 &&
                         format_fixed(4.0) == "4.0000" && format_fixed(100.0) == "100.0000";
    r.passed = identities && evals && printed;
    r.detail = std::string("identities=") + (identities ? "ok" : "bad") + " eval=" + (evals ? "ok" : "bad") +
               " printed=" + (printed ? "ok" : "bad") + " half_occluded_epe=" + num(masked.epe);
  });
}

CheckResult check_forward_determinism(int threads) {
  return guarded("forward_determinism", 8, [threads](CheckResult& r) {
    const auto t0 = Clock::now();
    const RunConfig cfg;
    const ModelDescription model(cfg, init_weights(cfg, 0));
    Rng rng(8008);
    const ImagePair pair{seeded_uniform(rng, {1, 16, 32}, 0.0f, 1.0f), seeded_uniform(rng, {1, 16, 32}, 0.0f, 1.0f)};
    const ForwardResult a = forward(pair, model, nullptr, Exec{1});
    const ForwardResult b = forward(pair, model, nullptr, Exec{1});
    const ForwardResult c = forward(pair, model, nullptr, Exec{std::max(2, threads)});
    const auto same = [](const ForwardResult& x, const ForwardResult& y) {
      return bit_identical(x.disparity, y.disparity) && bit_identical(x.occlusion, y.occlusion) &&
             bit_identical(x.plans.plans, y.plans.plans);
    };
    bool in_range = a.disparity.all_finite() && a.occlusion.all_finite();
    for (float d : a.disparity.data()) in_range = in_range && d >= 0.0f && d < 32.0f;
    const double secs = seconds_since(t0);
    r.passed = same(a, b) && same(a, c) && in_range && secs < 10.0;
    r.detail = std::string("repeat=") + (same(a, b) ? "identical" : "differs") + " threads=" +
               (same(a, c) ? "identical" : "differs") + " in_range=" + (in_range ? "yes" : "no") +
               " seconds=" + num(secs);
  });
}

CheckResult check_format_round_trips() {
  return guarded("format_round_trips", 9, [](CheckResult& r) {
    Rng rng(9009);
    int pfm_bad = 0, pgm_bad = 0, weights_bad = 0, file_bad = 0;
    constexpr int kCases = 100;
    for (int c = 0; c < kCases; ++c) {
      const Tensor map = random_bits_tensor(rng, {pick(rng, 1, 24), pick(rng, 1, 24)});
      if (!bit_identical(decode_pfm(encode_pfm(map)), map)) ++pfm_bad;

      const unsigned maxval = c % 3 == 0 ? 255u : c % 3 == 1 ? 65535u : static_cast<unsigned>(pick(rng, 1, 65535));
      Tensor img({pick(rng, 1, 24), pick(rng, 1, 24)});
      for (auto& v : img.data()) {
        v = static_cast<float>(pick(rng, 0, maxval)) / static_cast<float>(maxval);
      }
      if (!bit_identical(decode_pgm(encode_pgm(img, maxval)), img)) ++pgm_bad;

      WeightStore store;
      for (std::size_t k = pick(rng, 0, 6); k > 0; --k) {
        Shape shape(pick(rng, 1, 3));
        for (auto& e : shape) e = pick(rng, 1, 5);
        std::string name = random_name(rng);
        if (!store.contains(name)) store.insert(std::move(name), random_bits_tensor(rng, shape));
      }
      const WeightStore back = decode_weights(encode_weights(store));
      bool same = back.size() == store.size();
      for (auto a = store.begin(), b = back.begin(); same && a != store.end(); ++a, ++b) {
        same = a->first == b->first && bit_identical(a->second, b->second);
      }
      if (!same) ++weights_bad;

      if (c % 20 == 0) {
        const auto dir = std::filesystem::temp_directory_path();
        const auto stem = "cstr_selftest_" + std::to_string(rng.next_u64());
        const auto pfm = dir / (stem + ".pfm"), pgm = dir / (stem + ".pgm"), wts = dir / (stem + ".cstrw");
        write_pfm(pfm, map);
        write_pgm(pgm, img, maxval);
        write_weights(wts, store);
        if (!bit_identical(read_pfm(pfm), map) || !bit_identical(read_pgm(pgm), img) || !(read_weights(wts) == store)) {
          ++file_bad;
        }
        std::error_code ec;
        for (const auto& p : {pfm, pgm, wts}) std::filesystem::remove(p, ec);
      }
    }
    r.passed = pfm_bad + pgm_bad + weights_bad + file_bad == 0;
    r.detail = "cases=" + std::to_string(kCases) + " pfm_mismatch=" + std::to_string(pfm_bad) +
               " pgm_mismatch=" + std::to_string(pgm_bad) + " weights_mismatch=" + std::to_string(weights_bad) +
               " file_mismatch=" + std::to_string(file_bad);
  });
}

CheckResult check_malformed_inputs() {
  return guarded("malformed_inputs", 9, [](CheckResult& r) {
    Rng rng(9109);
    int unsafe = 0, cases = 0;
    const std::array<std::string_view, 8> fixed = {"", "Pf", "Pf\n2 2\n0\n", "PF\n1 1\n-1\n0000",
                                                   "P5\n1 1\n0\n\x00", "P5\n1 1\n255\n", "CSTRW001",
                                                   "CSTRW001\xff\xff\xff\xff"};
    for (auto bytes : fixed) {
      unsafe += !decoder_is_safe(decode_pfm, bytes) + !decoder_is_safe(decode_pgm, bytes) +
                !decoder_is_safe(decode_weights, bytes);
      ++cases;
    }
    for (int c = 0; c < 150; ++c, ++cases) {
      const Tensor map = random_bits_tensor(rng, {pick(rng, 1, 6), pick(rng, 1, 6)});
      WeightStore store;
      store.insert(random_name(rng), map);
      unsafe += !decoder_is_safe(decode_pfm, mutate(rng, encode_pfm(map)));
      unsafe += !decoder_is_safe(decode_pgm, mutate(rng, encode_pgm(binarize(map), c % 2 ? 255u : 4095u)));
      unsafe += !decoder_is_safe(decode_weights, mutate(rng, encode_weights(store)));
      unsafe += !decoder_is_safe(decode_ppm, mutate(rng, "P6\n1 1\n255\nabc"));
    }
    r.passed = unsafe == 0;
    r.detail = "cases=" + std::to_string(cases) + " unstructured_failures=" + std::to_string(unsafe);
  });
}

CheckResult check_config_defaults() {
  return guarded("config_defaults", 10, [](CheckResult& r) {
    const RunConfig d;
    const RunConfig parsed = parse_config("");
    const bool ok = d.layers == 6 && d.channels == 128 && d.heads == 4 && d.mmp_factor == 4 &&
                    d.mmp_scale() == 0.25 && d.sinkhorn_iters == 10 && parsed == d &&
                    parse_config(to_config_text(d)) == d;
    r.passed = ok;
    r.detail = "layers=" + std::to_string(d.layers) + " channels=" + std::to_string(d.channels) +
               " heads=" + std::to_string(d.heads) + " mmp_scale=1/" + std::to_string(d.mmp_factor) +
               " sinkhorn_iters=" + std::to_string(d.sinkhorn_iters);
  });
}

CheckResult check_epipolar_mask() {
  return guarded("epipolar_mask", 11, [](CheckResult& r) {
    const EpipolarMask m = epipolar_mask(3, 3);
    const EpipolarMask f = epipolar_mask(3, 3, MatchConvention::kRightNotLeft);
    bool ok = m.allowed_count() == 6 && f.allowed_count() == 6;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        const auto d = static_cast<long>(i) - static_cast<long>(j);
        ok = ok && m.allowed(i, j) == (d <= 0);
        // Complement of the first set plus the diagonal.
        ok = ok && f.allowed(i, j) == (!m.allowed(i, j) || i == j);
      }
    r.passed = ok;
    r.detail = "allowed=" + std::to_string(m.allowed_count()) + " flipped_allowed=" + std::to_string(f.allowed_count());
  });
}

CheckResult check_loss_composition() {
  return guarded("loss_composition", 12, [](CheckResult& r) {
    Rng rng(1212);
    double worst = 0.0;
    for (int c = 0; c < 20; ++c) {
      LossBreakdown parts;
      parts.rr_raw = rng.uniform(0.0, 5.0);
      parts.d1_raw = rng.uniform(0.0, 5.0);
      parts.d1_final = rng.uniform(0.0, 5.0);
      parts.be_final = rng.uniform(0.0, 5.0);
      const LossWeights w{rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)};
      const double base = total_loss(parts, w).total;
      const std::array<double, 4> part = {parts.rr_raw, parts.d1_raw, parts.d1_final, parts.be_final};
      for (int k = 0; k < 4; ++k) {
        const double delta = rng.uniform(-1.0, 1.0);
        LossWeights p = w;
        (k == 0 ? p.w1 : k == 1 ? p.w2 : k == 2 ? p.w3 : p.w4) += delta;
        const double got = total_loss(parts, p).total - base;
        worst = std::max(worst, std::abs(got - delta * part[static_cast<std::size_t>(k)]));
      }
    }
    const LossBreakdown ex = total_loss({5.0, 5.0, 2.0, 5.0, 0.0}, {0.0, 0.0, 1.0, 0.0});
    r.passed = worst < 1e-12 && ex.total == 2.0;
    r.detail = "max_linearity_err=" + num(worst) + " select_d1_final=" + num(ex.total);
  });
}

std::vector<CheckResult> run_selftest(const SelftestOptions& options) {
  const SoftmaxFn softmax = options.corrupt_softmax ? SoftmaxFn(unnormalized_softmax)
                                                    : SoftmaxFn([](const Tensor& t, std::size_t a) {
                                                        return softmax_axis(t, a);
                                                      });
  return {check_softmax(softmax),
          check_attention_oracle(),
          check_position_structure(),
          check_sinkhorn_conservation(),
          check_regression_oracle(),
          check_gradient_relative_response(),
          check_gradient_smooth_l1(),
          check_gradient_binary_entropy(),
          check_cep_schedule(),
          check_metric_identities(),
          check_forward_determinism(options.threads),
          check_format_round_trips(),
          check_malformed_inputs(),
          check_config_defaults(),
          check_epipolar_mask(),
          check_loss_composition()};
}

std::string format_check(const CheckResult& result) {
  return std::string(result.passed ? "PASS " : "FAIL ") + result.name + " " + result.detail;
}

}  // namespace cstr
