#pragma once

#include <string>

namespace stcn::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

// Level comes from the STCN_LOG environment variable (error|info|debug),
// read once; defaults to info.
Level level();

void error(const std::string& msg);
void warn(const std::string& msg);
void info(const std::string& msg);
void debug(const std::string& msg);

} // namespace stcn::log
