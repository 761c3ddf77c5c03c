#ifndef SIAG_CLI_HPP
#define SIAG_CLI_HPP

#include <iosfwd>

namespace siag {

/// Process exit codes of the command-line front end.
enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,   ///< check found bound/lemma violations
  kExitConfig = 2,        ///< unreadable or invalid configuration / arguments
  kExitDivergence = 3,    ///< a trial diverged, or a schedule audit found a violation
  kExitIo = 4,
};

/// Entry point of the `siag` tool; never throws.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace siag

#endif  // SIAG_CLI_HPP
