#pragma once

#include <string_view>

namespace nbids {

/// Informational line on standard error, prefixed with the component.
void log_info(std::string_view component, std::string_view message);
void set_log_quiet(bool quiet);

} // namespace nbids
