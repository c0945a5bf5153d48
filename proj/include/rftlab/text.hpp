#ifndef RFTLAB_TEXT_HPP
#define RFTLAB_TEXT_HPP

#include <charconv>
#include <string>
#include <string_view>
#include <system_error>

namespace rftlab {

/// Shortest representation that parses back to the identical double.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view s, double& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace rftlab

#endif  // RFTLAB_TEXT_HPP
