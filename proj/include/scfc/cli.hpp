#pragma once

namespace scfc::cli {

// Parses argv, dispatches one subcommand, and reports the process exit code:
// 0 success, 1 usage error, 2 data/config error, 3 numerical failure.
int run(int argc, const char* const* argv);

}  // namespace scfc::cli
