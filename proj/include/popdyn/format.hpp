#pragma once

#include <charconv>
#include <string>

namespace popdyn {

// Shortest round-trip decimal form; locale independent so outputs are byte-stable.
inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

// Fixed number of significant digits, for labels in plots.
inline std::string format_sig(double x, int digits) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::general, digits);
  return std::string(buf, res.ptr);
}

}  // namespace popdyn
