#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace pdnrl::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kUsageError = 2;

// Runs one command line (without the program name). Progress and summaries
// go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pdnrl::cli
