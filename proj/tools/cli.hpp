#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace smcl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;  // bad flags or config, missing data, refused overwrite
inline constexpr int kExitNonFinite = 3;

// Runs one command line (args[0] is the subcommand) and returns the exit
// code. All output goes to `out`/`err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace smcl::cli
