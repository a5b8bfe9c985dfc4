#include "terralabel/common/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace terralabel::log {
namespace {

std::atomic<Level> g_level{Level::info};
std::mutex g_mutex;

void emit(Level lvl, const char* tag, std::string_view message) {
  if (lvl < g_level.load()) return;
  std::lock_guard lock(g_mutex);
  std::clog << "[terralabel " << tag << "] " << message << '\n';
}

}  // namespace

void set_level(Level lvl) { g_level = lvl; }
Level level() { return g_level.load(); }

void debug(std::string_view m) { emit(Level::debug, "debug", m); }
void info(std::string_view m) { emit(Level::info, "info", m); }
void warn(std::string_view m) { emit(Level::warn, "warn", m); }
void error(std::string_view m) { emit(Level::error, "error", m); }

}  // namespace terralabel::log
