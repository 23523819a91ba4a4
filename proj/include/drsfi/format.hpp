#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <system_error>

#include "drsfi/errors.hpp"

namespace drsfi {

// Shortest decimal that round-trips; non-finite values as "inf", "-inf", "nan".
template <typename F>
std::string format_real(F value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

template <typename F>
F parse_real(std::string_view text) {
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  F value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
    throw ConfigError("not a number: '" + std::string(text) + "'");
  return value;
}

template <typename I>
I parse_integer(std::string_view text, int base = 10) {
  I value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value, base);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size() || text.empty())
    throw ConfigError("not an integer: '" + std::string(text) + "'");
  return value;
}

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace drsfi
