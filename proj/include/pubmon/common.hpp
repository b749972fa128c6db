#pragma once

#include <array>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pubmon {

// Raw byte strings travel as std::string; nothing at this layer assumes text.
using Bytes = std::string;

using Timestamp = std::chrono::sys_seconds;
using Seconds = std::chrono::seconds;
using Minutes = std::chrono::minutes;
using Hours = std::chrono::hours;

using Digest20 = std::array<std::uint8_t, 20>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class MissingField : public ParseError {
public:
    explicit MissingField(const std::string& field) : ParseError("missing field: " + field), field_(field) {}
    [[nodiscard]] const std::string& field() const { return field_; }

private:
    std::string field_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class TransportError : public Error {
public:
    using Error::Error;
};

class TrackerError : public Error {
public:
    using Error::Error;
};

class NotFound : public Error {
public:
    using Error::Error;
};

inline std::string to_hex(std::string_view bytes) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (unsigned char c : bytes) {
        out.push_back(digits[c >> 4]);
        out.push_back(digits[c & 0x0f]);
    }
    return out;
}

inline std::string to_hex(const Digest20& d) {
    return to_hex(std::string_view(reinterpret_cast<const char*>(d.data()), d.size()));
}

inline Digest20 digest_from_hex(std::string_view hex) {
    if (hex.size() != 40) throw ParseError("digest hex must be 40 characters");
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw ParseError("bad hex digit");
    };
    Digest20 d{};
    for (std::size_t i = 0; i < 20; ++i)
        d[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
    return d;
}

inline std::string_view as_bytes(const Digest20& d) {
    return {reinterpret_cast<const char*>(d.data()), d.size()};
}

/// IPv4 address held in host order.
struct Ipv4 {
    std::uint32_t value = 0;

    friend auto operator<=>(const Ipv4&, const Ipv4&) = default;

    static std::optional<Ipv4> parse(std::string_view text) {
        std::uint32_t v = 0;
        const char* p = text.data();
        const char* end = text.data() + text.size();
        for (int octet = 0; octet < 4; ++octet) {
            unsigned part = 0;
            auto [next, ec] = std::from_chars(p, end, part);
            if (ec != std::errc{} || next == p || part > 255 || next - p > 3) return std::nullopt;
            v = (v << 8) | part;
            p = next;
            if (octet < 3) {
                if (p == end || *p != '.') return std::nullopt;
                ++p;
            }
        }
        if (p != end) return std::nullopt;
        return Ipv4{v};
    }

    [[nodiscard]] std::string to_string() const {
        return std::to_string(value >> 24) + '.' + std::to_string((value >> 16) & 0xff) + '.' +
               std::to_string((value >> 8) & 0xff) + '.' + std::to_string(value & 0xff);
    }
};

struct Endpoint {
    Ipv4 ip;
    std::uint16_t port = 0;

    friend auto operator<=>(const Endpoint&, const Endpoint&) = default;

    [[nodiscard]] std::string to_string() const { return ip.to_string() + ':' + std::to_string(port); }

    static std::optional<Endpoint> parse(std::string_view text) {
        auto colon = text.rfind(':');
        if (colon == std::string_view::npos) return std::nullopt;
        auto ip = Ipv4::parse(text.substr(0, colon));
        unsigned port = 0;
        auto tail = text.substr(colon + 1);
        auto [next, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), port);
        if (!ip || ec != std::errc{} || next != tail.data() + tail.size() || port == 0 || port > 65535)
            return std::nullopt;
        return Endpoint{*ip, static_cast<std::uint16_t>(port)};
    }
};

/// Parses "90", "90s", "18m", "4h", "2d" into seconds.
inline Seconds parse_duration(std::string_view text) {
    if (text.empty()) throw ConfigError("empty duration");
    std::int64_t scale = 1;
    switch (text.back()) {
        case 's': scale = 1; text.remove_suffix(1); break;
        case 'm': scale = 60; text.remove_suffix(1); break;
        case 'h': scale = 3600; text.remove_suffix(1); break;
        case 'd': scale = 86400; text.remove_suffix(1); break;
        default: break;
    }
    std::int64_t n = 0;
    auto [next, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
    if (ec != std::errc{} || next != text.data() + text.size() || n < 0)
        throw ConfigError("bad duration: " + std::string(text));
    return Seconds{n * scale};
}

inline std::string format_duration(Seconds d) {
    auto s = d.count();
    if (s != 0 && s % 3600 == 0) return std::to_string(s / 3600) + "h";
    if (s != 0 && s % 60 == 0) return std::to_string(s / 60) + "m";
    return std::to_string(s) + "s";
}

/// ISO-8601 UTC, "2010-04-06T00:00:00Z".
inline std::string format_iso8601(Timestamp t) {
    std::time_t tt = t.time_since_epoch().count();
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline Timestamp parse_iso8601(std::string_view text) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    std::string copy(text);
    if (std::sscanf(copy.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d", &y, &mo, &d, &h, &mi, &s) != 6)
        throw ParseError("bad timestamp: " + copy);
    using namespace std::chrono;
    auto date = sys_days{year{y} / month{static_cast<unsigned>(mo)} / day{static_cast<unsigned>(d)}};
    return Timestamp{date} + hours{h} + minutes{mi} + seconds{s};
}

// splitmix64; used to derive independent, stable seeds for sub-streams.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return mix_seed(mix_seed(a) ^ (b * 0xff51afd7ed558ccdULL)); }

}  // namespace pubmon

template <>
struct std::hash<pubmon::Ipv4> {
    std::size_t operator()(const pubmon::Ipv4& ip) const noexcept { return std::hash<std::uint32_t>{}(ip.value); }
};
