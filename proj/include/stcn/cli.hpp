#pragma once

#include <string>
#include <vector>

namespace stcn {

// Full command-line front end: synth | train | extract | eval | pipeline.
// Returns the process exit code; every error path prints one line with the
// prefix "error: " to stderr and returns nonzero.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, const char* const* argv);

} // namespace stcn
