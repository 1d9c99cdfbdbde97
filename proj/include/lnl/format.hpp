#pragma once

#include <string>
#include <string_view>

namespace lnl {

// Shortest decimal that parses back to the same double.
std::string format_double(double value);

// Strict parse of a whole token; throws std::invalid_argument on failure.
double parse_double(std::string_view text);
long long parse_int(std::string_view text);

std::string_view trim(std::string_view text);

}  // namespace lnl
