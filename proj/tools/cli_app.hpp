#pragma once

#include <iosfwd>

namespace redct::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

// Runs the redct command line. Normal output goes to `out`, diagnostics to
// `err`. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace redct::cli
