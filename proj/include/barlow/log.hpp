#ifndef BARLOW_LOG_HPP_
#define BARLOW_LOG_HPP_

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace barlow::log {

enum class Level { kError = 0, kInfo = 1, kDebug = 2 };

/// Verbosity from BARLOW_LOG={error,info,debug}; info when unset or unrecognized.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("BARLOW_LOG");
    const std::string_view v = env ? env : "";
    if (v == "error") return Level::kError;
    if (v == "debug") return Level::kDebug;
    return Level::kInfo;
  }();
  return level;
}

inline void write(Level lvl, std::string_view msg) {
  if (static_cast<int>(lvl) > static_cast<int>(threshold())) return;
  static constexpr std::string_view tags[] = {"error", "info", "debug"};
  std::cerr << "[" << tags[static_cast<int>(lvl)] << "] " << msg << '\n';
}

inline void error(std::string_view msg) { write(Level::kError, msg); }
inline void info(std::string_view msg) { write(Level::kInfo, msg); }
inline void debug(std::string_view msg) { write(Level::kDebug, msg); }

}  // namespace barlow::log

#endif  // BARLOW_LOG_HPP_
