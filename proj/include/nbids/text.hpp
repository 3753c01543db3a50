#pragma once

// Small string helpers shared by the config, CSV and report code.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nbids::text {

/// Shortest representation that parses back to the identical double.
std::string format_double(double v);
std::string format_fixed(double v, int decimals);

std::optional<double> parse_double(std::string_view s);
std::optional<long long> parse_int(std::string_view s);

std::string_view trim(std::string_view s);
std::vector<std::string_view> split(std::string_view s, char sep);
std::string to_lower(std::string_view s);

std::vector<std::size_t> parse_size_list(std::string_view s);
std::string join_sizes(const std::vector<std::size_t>& values);

} // namespace nbids::text
