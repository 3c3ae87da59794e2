#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace edgelite {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitRuntime = 3 };

/// Full command line, program name first. Results go to `out`, diagnostics
/// to `err` and the log.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv);

}  // namespace edgelite
