#pragma once

#include <iosfwd>

namespace oodbound::cli {

/// Process exit codes, stable for scripting.
enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kDataError = 2,
  kNumericError = 3,
};

/// Entry point behind the `oodbound` binary; streams are injectable for tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace oodbound::cli
