#pragma once
#include <string>

namespace tmae {

enum class LogLevel { error = 0, info = 1, debug = 2 };

// Level comes from the TMAE_LOG environment variable (error|info|debug) the
// first time it is queried; set_log_level overrides it for the process.
LogLevel log_level();
void set_log_level(LogLevel lv);

// All diagnostics go to stderr so stdout stays machine-readable.
void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);
void log_warn(const std::string& msg);  // printed at error level and above

}  // namespace tmae
