#pragma once

// Minimal stderr logger. Verbosity comes from NAPG_LOG_LEVEL
// (error | warn | info | debug); the default is info.

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace napg::log {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

inline Level parse_level(std::string_view s, Level fallback = Level::Info) {
  if (s == "error") return Level::Error;
  if (s == "warn") return Level::Warn;
  if (s == "info") return Level::Info;
  if (s == "debug") return Level::Debug;
  return fallback;
}

inline Level& threshold() {
  static Level level = [] {
    const char* env = std::getenv("NAPG_LOG_LEVEL");
    return env ? parse_level(env) : Level::Info;
  }();
  return level;
}

inline bool enabled(Level l) { return static_cast<int>(l) <= static_cast<int>(threshold()); }

inline void write(Level l, std::string_view msg) {
  if (!enabled(l)) return;
  static constexpr std::string_view names[] = {"error", "warn", "info", "debug"};
  std::cerr << "[" << names[static_cast<int>(l)] << "] " << msg << '\n';
}

inline void error(std::string_view m) { write(Level::Error, m); }
inline void warn(std::string_view m) { write(Level::Warn, m); }
inline void info(std::string_view m) { write(Level::Info, m); }
inline void debug(std::string_view m) { write(Level::Debug, m); }

}  // namespace napg::log
