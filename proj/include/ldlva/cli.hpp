#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ldlva::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitAllCellsFailed = 5;

// Subcommands: gen, train, eval, bench, ablate, sweepk. stdout receives one
// JSON summary line; progress and diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ldlva::cli
