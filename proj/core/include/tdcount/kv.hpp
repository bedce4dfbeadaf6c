#pragma once

// Flat UTF-8 `key = value` text, shared by config files, scene meta files and
// dataset manifests. Blank lines and lines starting with '#' are ignored.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tdc::kv {

using Pairs = std::vector<std::pair<std::string, std::string>>;

// Throws ParseError naming `source` and the line on malformed input or on a
// repeated key.
Pairs parse(std::string_view text, const std::string& source);
std::string render(const Pairs& pairs);

// Round-trip exact formatting of doubles (shortest form that parses back).
std::string format_double(double v);

double to_double(const std::string& key, const std::string& value);
std::int64_t to_int(const std::string& key, const std::string& value);
std::uint64_t to_u64(const std::string& key, const std::string& value);
bool to_bool(const std::string& key, const std::string& value);

std::string trim(std::string_view s);

}  // namespace tdc::kv
