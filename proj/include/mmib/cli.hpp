#pragma once

// Command-line entry point shared by the executable and the tests.
// Exit codes: 0 ok, 2 usage/config, 3 data, 4 runtime.

#include <ostream>
#include <string>
#include <vector>

namespace mmib::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitRuntime = 4;

/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmib::cli
