#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pathsearch::cli {

/// Exit codes of the command-line tool.
enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kData = 2,
    kNumeric = 3,
};

/// Runs one invocation; args[0] is the program name. Output goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pathsearch::cli
