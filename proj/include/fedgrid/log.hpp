#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace fedgrid::log {

enum class Level { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

// Level comes from the FEDGRID_LOG environment variable
// (error|warn|info|debug); default info. Messages go to stderr so command
// output (CSV/JSON on stdout) stays machine-readable.
inline Level level() {
    static Level lvl = [] {
        const char* e = std::getenv("FEDGRID_LOG");
        if (!e) return Level::kInfo;
        if (std::strcmp(e, "error") == 0) return Level::kError;
        if (std::strcmp(e, "warn") == 0) return Level::kWarn;
        if (std::strcmp(e, "debug") == 0) return Level::kDebug;
        return Level::kInfo;
    }();
    return lvl;
}

inline void write(Level lvl, const char* tag, const std::string& msg) {
    if (lvl > level()) return;
    std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

inline void error(const std::string& msg) { write(Level::kError, "error", msg); }
inline void warn(const std::string& msg) { write(Level::kWarn, "warn", msg); }
inline void info(const std::string& msg) { write(Level::kInfo, "info", msg); }
inline void debug(const std::string& msg) { write(Level::kDebug, "debug", msg); }

}  // namespace fedgrid::log
