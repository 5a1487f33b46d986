#include "gfd/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "gfd/error.hpp"

namespace gfd::log {

namespace {

std::shared_ptr<spdlog::logger> logger() {
  static auto instance = [] {
    auto l = spdlog::get("gfd");
    return l ? l : spdlog::stderr_color_mt("gfd");
  }();
  return instance;
}

}  // namespace

void init(const std::string& level) {
  const auto parsed = spdlog::level::from_str(level);
  if (parsed == spdlog::level::off && level != "off") {
    throw Error("bad_config", "unknown log level '" + level + "'");
  }
  logger()->set_level(parsed);
}

void write(Level level, const std::string& message) {
  switch (level) {
    case Level::kDebug: logger()->debug(message); break;
    case Level::kInfo: logger()->info(message); break;
    case Level::kWarn: logger()->warn(message); break;
    case Level::kError: logger()->error(message); break;
  }
}

}  // namespace gfd::log
