#include "tmae/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace tmae {

namespace {
LogLevel g_level = LogLevel::error;
bool g_level_set = false;

void init_from_env() {
  if (g_level_set) return;
  g_level_set = true;
  const char* e = std::getenv("TMAE_LOG");
  if (!e) return;
  if (std::strcmp(e, "debug") == 0) g_level = LogLevel::debug;
  else if (std::strcmp(e, "info") == 0) g_level = LogLevel::info;
  else g_level = LogLevel::error;
}
}  // namespace

LogLevel log_level() {
  init_from_env();
  return g_level;
}

void set_log_level(LogLevel lv) {
  g_level_set = true;
  g_level = lv;
}

void log_error(const std::string& msg) {
  std::fprintf(stderr, "[error] %s\n", msg.c_str());
}

void log_warn(const std::string& msg) {
  std::fprintf(stderr, "[warn] %s\n", msg.c_str());
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::fprintf(stderr, "[info] %s\n", msg.c_str());
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug) std::fprintf(stderr, "[debug] %s\n", msg.c_str());
}

}  // namespace tmae
