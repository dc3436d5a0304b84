#pragma once

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace prnet::detail {

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc() || ptr != end)
    throw std::invalid_argument("config key '" + key + "': '" + v +
                                "' is not a valid number");
  return out;
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  return parse_number<std::size_t>(key, v);
}

inline std::uint64_t parse_seed(const std::string& key, const std::string& v) {
  return parse_number<std::uint64_t>(key, v);
}

inline double parse_real(const std::string& key, const std::string& v) {
  return parse_number<double>(key, v);
}

}  // namespace prnet::detail
