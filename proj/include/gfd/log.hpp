#pragma once

#include <sstream>
#include <string>

// Thin front end over spdlog. spdlog lives in its own translation unit: the
// fmt headers bundled with libtorch shadow the fmt release spdlog was built
// against.

namespace gfd::log {

enum class Level { kDebug, kInfo, kWarn, kError };

/// trace|debug|info|warn|error|critical|off; throws Error("bad_config") otherwise.
void init(const std::string& level);
void write(Level level, const std::string& message);

template <typename... Args>
std::string cat(const Args&... args) {
  std::ostringstream out;
  (out << ... << args);
  return out.str();
}

template <typename... Args>
void debug(const Args&... args) { write(Level::kDebug, cat(args...)); }
template <typename... Args>
void info(const Args&... args) { write(Level::kInfo, cat(args...)); }
template <typename... Args>
void warn(const Args&... args) { write(Level::kWarn, cat(args...)); }

}  // namespace gfd::log
