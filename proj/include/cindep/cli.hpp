#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cindep {

enum ExitCode : int {
    kExitOk = 0,
    kExitInput = 2,       // unreadable or malformed input, dimension mismatch
    kExitArgument = 3,    // bad flag or flag combination
    kExitDivergence = 4,  // training produced a non-finite loss
};

/// Runs the `cindep` command line; args exclude the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Worker cap from CINDEP_THREADS, defaulting to the hardware thread count.
/// Throws ArgumentError on a malformed value.
unsigned thread_budget();

}  // namespace cindep
