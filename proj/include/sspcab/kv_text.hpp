#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace sspcab {

struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Parses `key=value` lines. Blank lines and lines starting with '#' are
/// skipped; whitespace around keys and values is trimmed.
std::vector<KeyValue> parse_key_values(std::string_view text, std::string_view source);

std::string_view trim(std::string_view s);

/// Shortest decimal text that reads back to the identical double.
std::string format_double(double v);
/// Fixed-point text with `decimals` digits after the point.
std::string format_fixed(double v, int decimals);

double parse_double(std::string_view s, std::string_view what);
std::uint64_t parse_uint(std::string_view s, std::string_view what);
std::vector<std::size_t> parse_size_list(std::string_view s, std::string_view what);
std::string format_size_list(const std::vector<std::size_t>& values);

}  // namespace sspcab
