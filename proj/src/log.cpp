#include "dpprompt/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace dpprompt::log {
namespace {

std::atomic<Level> g_level{Level::kWarn};
std::mutex g_mutex;

void emit(Level at, const char* tag, std::string_view message) {
  if (static_cast<int>(g_level.load()) < static_cast<int>(at)) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << "[" << tag << "] " << message << '\n';
}

}  // namespace

void set_level(Level level) { g_level.store(level); }
Level level() { return g_level.load(); }

void warn(std::string_view message) { emit(Level::kWarn, "warn", message); }
void info(std::string_view message) { emit(Level::kInfo, "info", message); }
void debug(std::string_view message) { emit(Level::kDebug, "debug", message); }

}  // namespace dpprompt::log
