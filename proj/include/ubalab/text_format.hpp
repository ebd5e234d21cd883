#pragma once

#include <charconv>
#include <string>

namespace uba {

// Shortest round-trip decimal form of a double; stable across runs and
// locales, used for every number we write into CSV reports.
inline std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace uba
