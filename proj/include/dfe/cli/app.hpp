#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dfe::cli {

/// Process exit codes. Errors are reported as one line on stderr:
///   error: <kind>: <message>
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,       // bad or missing flags
  kConfig = 3,      // invalid config file, unknown key, bad DFE_THREADS
  kFile = 4,        // missing or unwritable file
  kFormat = 5,      // malformed, truncated or foreign input file
  kDimension = 6,   // feature width, token length or codebook mismatch
  kInvalid = 7,     // argument outside an operation's domain
  kNumeric = 8,     // NaN/Inf during training or evaluation
  kCheckFailed = 9, // gradcheck above tolerance
};

/// Runs the `dfe` command line. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Worker count from DFE_THREADS (default 1). Throws ConfigError when set to
/// anything but a positive integer.
std::size_t thread_count();

}  // namespace dfe::cli
