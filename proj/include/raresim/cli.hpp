#pragma once

// Command-line front end: fit, run, crude, bench, check-monotone and replay.

#include <ostream>
#include <string>
#include <vector>

namespace raresim::cli {

enum ExitCode : int {
  kOk = 0,
  kInputError = 2,
  kFitFailure = 3,
  kMonotonicityViolation = 4,
  kSolverFailure = 5,
};

/// Runs one command. `args` excludes the program name. Every command that
/// writes files also writes manifest.json next to them; `replay` re-executes
/// the recorded argument list.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace raresim::cli
