#pragma once

#include <ostream>

namespace cdis::cli {

/// Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
enum ExitCode : int { kSuccess = 0, kUsage = 1, kData = 2, kInternal = 3 };

/// Parses argv and runs one subcommand. Tables and summaries go to `out`,
/// diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace cdis::cli
