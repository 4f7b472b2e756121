#pragma once

#include <cstdint>
#include <string>

namespace unfoldseg {

/// Shortest decimal form that parses back to the same double; locale
/// independent. "nan"/"inf"/"-inf" for non-finite values.
std::string fmt_double(double v);

/// Strict full-string parses; return false without touching `out` on any
/// trailing garbage or range error.
bool parse_double(const std::string& text, double& out);
bool parse_int(const std::string& text, long long& out);
bool parse_u64(const std::string& text, std::uint64_t& out);
bool parse_hex_u64(const std::string& text, std::uint64_t& out);

std::string to_hex(std::uint64_t v);  // 16 lowercase digits

std::string trim(const std::string& s);
}  // namespace unfoldseg
