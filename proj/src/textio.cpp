#include "unfoldseg/textio.hpp"

#include <charconv>
#include <cmath>
#include <system_error>

namespace unfoldseg {

std::string fmt_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

bool parse_double(const std::string& text, double& out) {
    if (text.empty()) return false;
    if (text == "nan") { out = std::nan(""); return true; }
    if (text == "inf") { out = HUGE_VAL; return true; }
    if (text == "-inf") { out = -HUGE_VAL; return true; }
    double v = 0.0;
    const char* begin = text.data();
    const char* end = begin + text.size();
    const auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc() || res.ptr != end) return false;
    out = v;
    return true;
}

bool parse_int(const std::string& text, long long& out) {
    if (text.empty()) return false;
    long long v = 0;
    const char* begin = text.data();
    const char* end = begin + text.size();
    const auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc() || res.ptr != end) return false;
    out = v;
    return true;
}

bool parse_u64(const std::string& text, std::uint64_t& out) {
    if (text.empty()) return false;
    std::uint64_t v = 0;
    const char* begin = text.data();
    const char* end = begin + text.size();
    const auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc() || res.ptr != end) return false;
    out = v;
    return true;
}

bool parse_hex_u64(const std::string& text, std::uint64_t& out) {
    if (text.empty()) return false;
    std::uint64_t v = 0;
    const char* begin = text.data();
    const char* end = begin + text.size();
    const auto res = std::from_chars(begin, end, v, 16);
    if (res.ec != std::errc() || res.ptr != end) return false;
    out = v;
    return true;
}

std::string to_hex(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return s;
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n'))
        --e;
    return s.substr(b, e - b);
}

}  // namespace unfoldseg
