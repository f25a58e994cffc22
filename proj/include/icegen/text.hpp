#pragma once

#include <charconv>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace icegen {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
std::optional<double> parse_double(std::string_view s);
std::string_view trim(std::string_view s);
std::vector<std::string_view> split(std::string_view s, char sep);

}  // namespace icegen
