#include "cfviz/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace cfviz {

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("CFVIZ_LOG");
    if (env == nullptr) return LogLevel::Info;
    if (std::strcmp(env, "quiet") == 0) return LogLevel::Quiet;
    if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
    return LogLevel::Info;
  }();
  return level;
}

void log_info(const std::string& message) {
  if (log_level() >= LogLevel::Info) std::fprintf(stderr, "[cfviz] %s\n", message.c_str());
}

void log_debug(const std::string& message) {
  if (log_level() >= LogLevel::Debug) std::fprintf(stderr, "[cfviz] %s\n", message.c_str());
}

}  // namespace cfviz
