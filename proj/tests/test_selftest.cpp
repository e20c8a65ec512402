// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <set>

#include "cstr/selftest.hpp"

TEST_CASE("selftest passes and covers every criterion") {
  const std::vector<cstr::CheckResult> results = cstr::run_selftest();
  CHECK(results.size() >= 12);
  std::set<int> criteria;
  std::set<std::string> names;
  for (const auto& r : results) {
    CHECK_MESSAGE(r.passed, cstr::format_check(r));
    criteria.insert(r.criterion);
    names.insert(r.name);
  }
  CHECK(names.size() == results.size());
  for (int c = 1; c <= 12; ++c) CHECK_MESSAGE(criteria.count(c) == 1, "criterion ", c);
}

TEST_CASE("corrupt softmax is caught") {
  const auto results = cstr::run_selftest({true, 2});
  bool caught = false;
  for (const auto& r : results) {
    if (r.name == "softmax_normalization") caught = !r.passed;
  }
  CHECK(caught);
  CHECK(cstr::check_softmax([](const cstr::Tensor& t, std::size_t) { return t; }).passed == false);
  CHECK(cstr::check_softmax(cstr::softmax_axis).passed);
}

TEST_CASE("format_check") {
  CHECK(cstr::format_check({"x", 1, true, "d=1"}) == "PASS x d=1");
  CHECK(cstr::format_check({"y", 2, false, "d=2"}) == "FAIL y d=2");
}
