// SPDX-License-Identifier: Apache-2.0
//
// Self-verification suite: each check exercises one invariant of the
// pipeline against an oracle or a hand-computed case and never throws.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cstr/tensor.hpp"

namespace cstr {

struct CheckResult {
  std::string name;
  int criterion = 0;  // acceptance criterion the check backs; 0 for support checks
  bool passed = false;
  std::string detail;
};

struct SelftestOptions {
  // Test hook: substitute a softmax that skips normalization so the softmax
  // check has something to catch.
  bool corrupt_softmax = false;
  int threads = 4;
};

using SoftmaxFn = std::function<Tensor(const Tensor&, std::size_t)>;

CheckResult check_softmax(const SoftmaxFn& softmax);
CheckResult check_attention_oracle();
CheckResult check_position_structure();
CheckResult check_sinkhorn_conservation();
CheckResult check_regression_oracle();
CheckResult check_gradient_relative_response();
CheckResult check_gradient_smooth_l1();
CheckResult check_gradient_binary_entropy();
CheckResult check_cep_schedule();
CheckResult check_metric_identities();
CheckResult check_forward_determinism(int threads);
CheckResult check_format_round_trips();
CheckResult check_malformed_inputs();
CheckResult check_config_defaults();
CheckResult check_epipolar_mask();
CheckResult check_loss_composition();

std::vector<CheckResult> run_selftest(const SelftestOptions& options = {});

// "PASS <name> <detail>" / "FAIL <name> <detail>"
std::string format_check(const CheckResult& result);

}  // namespace cstr
