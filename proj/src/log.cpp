#include "stcn/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace stcn::log {

Level level() {
    static const Level lvl = [] {
        const char* env = std::getenv("STCN_LOG");
        if (env == nullptr) return Level::info;
        if (std::strcmp(env, "error") == 0) return Level::error;
        if (std::strcmp(env, "warn") == 0) return Level::warn;
        if (std::strcmp(env, "debug") == 0) return Level::debug;
        return Level::info;
    }();
    return lvl;
}

namespace {

void emit(Level lvl, const char* tag, const std::string& msg) {
    if (static_cast<int>(lvl) > static_cast<int>(level())) return;
    std::fprintf(stderr, "%s: %s\n", tag, msg.c_str());
}

} // namespace

void error(const std::string& msg) { emit(Level::error, "error", msg); }
void warn(const std::string& msg) { emit(Level::warn, "warning", msg); }
void info(const std::string& msg) { emit(Level::info, "info", msg); }
void debug(const std::string& msg) { emit(Level::debug, "debug", msg); }

} // namespace stcn::log
