// src/log.cpp

#include "aud/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace aud {

namespace {
std::atomic<int> g_level{static_cast<int>(LogLevel::kWarning)};
std::mutex g_mutex;
}  // namespace

void set_log_level(LogLevel level) { g_level = static_cast<int>(level); }

LogLevel log_level() { return static_cast<LogLevel>(g_level.load()); }

void log_message(LogLevel level, const std::string& message) {
  static constexpr const char* kNames[] = {"ERROR", "WARNING", "INFO", "DEBUG"};
  std::lock_guard lock(g_mutex);
  std::cerr << kNames[static_cast<int>(level)] << ": " << message << '\n';
}

}  // namespace aud
