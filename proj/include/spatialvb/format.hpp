#pragma once

#include <charconv>
#include <string>
#include <string_view>
#include <system_error>

#include "spatialvb/errors.hpp"

namespace spatialvb {

// Shortest decimal string that parses back to the same double.
inline std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_real(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw IoError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace spatialvb
