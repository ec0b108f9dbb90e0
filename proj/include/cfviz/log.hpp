#pragma once

#include <string>

namespace cfviz {

// Level comes from the CFVIZ_LOG environment variable (quiet|info|debug),
// default info. Messages go to stderr so stdout stays clean for data.
enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

LogLevel log_level();
void log_info(const std::string& message);
void log_debug(const std::string& message);

}  // namespace cfviz
