// SPDX-License-Identifier: Apache-2.0
#include "cstr/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <ostream>
#include <string>

#include "cstr/config.hpp"
#include "cstr/io.hpp"
#include "cstr/model.hpp"
#include "cstr/pipeline.hpp"
#include "cstr/report.hpp"
#include "cstr/selftest.hpp"

namespace cstr {

namespace {

struct InitArgs {
  std::string config, out;
  std::optional<long long> seed;
};

struct InferArgs {
  std::string left, right, weights, config, out_disp, out_occ, out_occ_pfm;
  int threads = 1;
};

struct EvalArgs {
  std::string pred, gt, gt_occ, pred_occ;
};

struct SelftestArgs {
  int threads = 4;
  bool corrupt_softmax = false;
};

RunConfig config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_config(path);
}

int cmd_init_weights(const InitArgs& a, std::ostream& out) {
  RunConfig cfg = config_or_default(a.config);
  if (a.seed) cfg.seed = *a.seed;
  const WeightStore store = init_weights(cfg, static_cast<std::uint64_t>(cfg.seed));
  const std::string bytes = encode_weights(store);
  write_file_bytes(a.out, bytes);
  out << "tensors=" << store.size() << "\n"
      << "bytes=" << bytes.size() << "\n"
      << "seed=" << cfg.seed << "\n";
  return kExitOk;
}

int cmd_infer(const InferArgs& a, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig cfg = config_or_default(a.config);
  const ImagePair pair = make_image_pair(read_gray_image(a.left), read_gray_image(a.right));
  const ModelDescription model(cfg, read_weights(a.weights));
  const ForwardResult r = forward_any_size(pair, model, Exec{a.threads});

  write_pfm(a.out_disp, r.disparity);
  write_pgm(a.out_occ, r.occlusion);
  if (!a.out_occ_pfm.empty()) write_pfm(a.out_occ_pfm, r.occlusion);

  const auto d = r.disparity.data();
  double sum = 0.0, occ_sum = 0.0;
  for (float v : d) sum += v;
  for (float v : r.occlusion.data()) occ_sum += v;
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out << "height=" << r.disparity.dim(0) << "\n"
      << "width=" << r.disparity.dim(1) << "\n"
      << "disp_min=" << format_fixed(*lo) << "\n"
      << "disp_max=" << format_fixed(*hi) << "\n"
      << "disp_mean=" << format_fixed(sum / static_cast<double>(d.size())) << "\n"
      << "occ_mean=" << format_fixed(occ_sum / static_cast<double>(d.size())) << "\n"
      << "runtime_s=" << format_fixed(secs) << "\n";
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Tensor pred = read_pfm(a.pred);
  const Tensor gt = read_pfm(a.gt);
  std::optional<Tensor> gt_occ, pred_occ;
  if (!a.gt_occ.empty()) gt_occ = read_pgm(a.gt_occ);
  if (!a.pred_occ.empty()) pred_occ = read_pgm(a.pred_occ);
  const EvalReport report = evaluate_maps(pred, gt, gt_occ ? &*gt_occ : nullptr,
                                          pred_occ ? &*pred_occ : nullptr);
  out << format_eval_report(report);
  return kExitOk;
}

int cmd_selftest(const SelftestArgs& a, std::ostream& out) {
  const auto results = run_selftest({a.corrupt_softmax, a.threads});
  std::size_t failed = 0;
  for (const auto& r : results) {
    out << format_check(r) << "\n";
    failed += !r.passed;
  }
  out << "checks=" << results.size() << " failed=" << failed << "\n";
  return failed == 0 ? kExitOk : kExitSelftest;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Context-enhanced stereo transformer: inference, evaluation and self-checks", "cstr"};
  app.require_subcommand(1);

  InitArgs init;
  auto* init_cmd = app.add_subcommand("init-weights", "Write seeded random weights for a configuration");
  init_cmd->add_option("--config", init.config, "Configuration file")->check(CLI::ExistingFile);
  init_cmd->add_option("--seed", init.seed, "Seed (defaults to the configuration's seed)");
  init_cmd->add_option("--out", init.out, "Output weight file")->required();

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "Estimate disparity and occlusion for a rectified pair");
  infer_cmd->add_option("--left", infer.left, "Left image (PGM or PPM)")->required();
  infer_cmd->add_option("--right", infer.right, "Right image (PGM or PPM)")->required();
  infer_cmd->add_option("--weights", infer.weights, "Weight file")->required();
  infer_cmd->add_option("--config", infer.config, "Configuration file")->check(CLI::ExistingFile);
  infer_cmd->add_option("--out-disp", infer.out_disp, "Disparity output (PFM)")->required();
  infer_cmd->add_option("--out-occ", infer.out_occ, "Occlusion output (8-bit PGM)")->required();
  infer_cmd->add_option("--out-occ-pfm", infer.out_occ_pfm, "Full-precision occlusion output (PFM)");
  infer_cmd->add_option("--threads", infer.threads, "Worker threads")->check(CLI::Range(1, 256));

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score a disparity map against ground truth");
  eval_cmd->add_option("--pred", eval.pred, "Predicted disparity (PFM)")->required();
  eval_cmd->add_option("--gt", eval.gt, "Ground-truth disparity (PFM)")->required();
  auto* gt_occ = eval_cmd->add_option("--gt-occ", eval.gt_occ, "Ground-truth occlusion (PGM)");
  eval_cmd->add_option("--pred-occ", eval.pred_occ, "Predicted occlusion (PGM)")->needs(gt_occ);

  SelftestArgs self;
  auto* self_cmd = app.add_subcommand("selftest", "Run the invariant and oracle checks");
  self_cmd->add_option("--threads", self.threads, "Threads for the determinism check")->check(CLI::Range(2, 256));
  self_cmd->add_flag("--corrupt-softmax", self.corrupt_softmax)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*init_cmd) return cmd_init_weights(init, out);
    if (*infer_cmd) return cmd_infer(infer, out);
    if (*eval_cmd) return cmd_eval(eval, out);
    return cmd_selftest(self, out);
  } catch (const Error& e) {
    err << to_string(e.kind()) << ": " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace cstr
