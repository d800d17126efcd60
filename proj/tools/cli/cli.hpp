#pragma once

#include <ostream>

namespace eot::cli {

/// Exit statuses of the command-line tool.
enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,    ///< grad-check above threshold, or an unexpected failure
  kInvalidInput = 2,   ///< bad flags, malformed files, violated preconditions
  kNotConverged = 3,   ///< Sinkhorn did not converge and --strict was given
};

/// Runs one subcommand. Output that goes to "-" is written to `out`;
/// diagnostics go to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace eot::cli
