#pragma once

#include <map>
#include <string>
#include <string_view>

#include "pubmon/common.hpp"

namespace pubmon::url {

inline bool is_unreserved(unsigned char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' || c == '.' ||
           c == '_' || c == '~';
}

inline std::string percent_encode(std::string_view bytes) {
    static constexpr char digits[] = "0123456789ABCDEF";
    std::string out;
    out.reserve(bytes.size() * 3);
    for (unsigned char c : bytes) {
        if (is_unreserved(c)) {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back('%');
            out.push_back(digits[c >> 4]);
            out.push_back(digits[c & 0x0f]);
        }
    }
    return out;
}

inline std::string percent_decode(std::string_view text) {
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] == '%') {
            if (i + 2 >= text.size()) throw ParseError("truncated percent escape");
            int hi = nibble(text[i + 1]);
            int lo = nibble(text[i + 2]);
            if (hi < 0 || lo < 0) throw ParseError("bad percent escape");
            out.push_back(static_cast<char>(hi << 4 | lo));
            i += 2;
        } else if (text[i] == '+') {
            out.push_back(' ');
        } else {
            out.push_back(text[i]);
        }
    }
    return out;
}

struct Parts {
    std::string base;  // everything before '?'
    std::map<std::string, std::string> query;
};

/// Splits a URL into its base and decoded query parameters (last value wins).
inline Parts split(std::string_view full) {
    Parts p;
    auto q = full.find('?');
    p.base = std::string(full.substr(0, q));
    if (q == std::string_view::npos) return p;
    std::string_view rest = full.substr(q + 1);
    while (!rest.empty()) {
        auto amp = rest.find('&');
        std::string_view pair = rest.substr(0, amp);
        auto eq = pair.find('=');
        std::string key = percent_decode(pair.substr(0, eq));
        std::string value = eq == std::string_view::npos ? std::string{} : percent_decode(pair.substr(eq + 1));
        p.query[std::move(key)] = std::move(value);
        if (amp == std::string_view::npos) break;
        rest = rest.substr(amp + 1);
    }
    return p;
}

}  // namespace pubmon::url
