#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace qlmf::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kConfig = 2, kSolver = 3, kIo = 4 };

// Runs the command line; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace qlmf::cli
