// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Subcommands:
//   init-weights --out PATH [--config PATH] [--seed N]
//   infer --left IMG --right IMG --weights PATH --out-disp PFM --out-occ PGM
//         [--config PATH] [--out-occ-pfm PFM] [--threads N]
//   eval --pred PFM --gt PFM [--gt-occ PGM [--pred-occ PGM]]
//   selftest [--threads N]
// Exit codes: 0 success, 1 usage error, 2 I/O, format or data error,
// 3 self-test failure.
#pragma once

#include <iosfwd>

namespace cstr {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitSelftest = 3;

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cstr
