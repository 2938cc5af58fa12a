#pragma once

#include <string>
#include <vector>

namespace bandits::cli {

// Entry point for the command-line tool, callable in-process by tests.
// `args` excludes the program name.  Returns the process exit code:
//   0 success, 1 configuration error, 2 runtime failure, 3 verification FAIL.
int run_main(const std::vector<std::string>& args);
int run_main(int argc, const char* const* argv);

}  // namespace bandits::cli
