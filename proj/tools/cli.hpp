#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tipcache::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Runs one `tipcache <subcommand> ...` invocation. Results go to `out`,
/// one-line diagnostics to `err`. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tipcache::cli
