#include "nbids/log.hpp"

#include <atomic>
#include <iostream>

namespace nbids {

namespace {
std::atomic<bool> g_quiet{false};
}

void set_log_quiet(bool quiet) { g_quiet = quiet; }

void log_info(std::string_view component, std::string_view message) {
  if (g_quiet) return;
  std::cerr << '[' << component << "] " << message << '\n';
}

} // namespace nbids
