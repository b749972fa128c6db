#pragma once

#include <openssl/sha.h>

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "pubmon/common.hpp"

namespace pubmon::bencode {

class Value;
using Integer = std::int64_t;
using String = std::string;
using List = std::vector<Value>;
// std::string compares through char_traits<char>, which orders as unsigned char,
// so map order is raw-byte order.
using Dict = std::map<std::string, Value>;

class Value {
public:
    using Storage = std::variant<Integer, String, List, Dict>;

    Value() : data_(Integer{0}) {}
    Value(Integer i) : data_(i) {}                  // NOLINT(google-explicit-constructor)
    Value(int i) : data_(Integer{i}) {}             // NOLINT(google-explicit-constructor)
    Value(String s) : data_(std::move(s)) {}        // NOLINT(google-explicit-constructor)
    Value(const char* s) : data_(String(s)) {}      // NOLINT(google-explicit-constructor)
    Value(List l) : data_(std::move(l)) {}          // NOLINT(google-explicit-constructor)
    Value(Dict d) : data_(std::move(d)) {}          // NOLINT(google-explicit-constructor)

    [[nodiscard]] bool is_int() const { return std::holds_alternative<Integer>(data_); }
    [[nodiscard]] bool is_string() const { return std::holds_alternative<String>(data_); }
    [[nodiscard]] bool is_list() const { return std::holds_alternative<List>(data_); }
    [[nodiscard]] bool is_dict() const { return std::holds_alternative<Dict>(data_); }

    [[nodiscard]] Integer as_int() const { return get<Integer>("integer"); }
    [[nodiscard]] const String& as_string() const { return get<String>("byte-string"); }
    [[nodiscard]] const List& as_list() const { return get<List>("list"); }
    [[nodiscard]] const Dict& as_dict() const { return get<Dict>("dictionary"); }
    [[nodiscard]] List& as_list() { return std::get<List>(data_); }
    [[nodiscard]] Dict& as_dict() { return std::get<Dict>(data_); }

    /// Dictionary lookup; nullptr when absent or when this is not a dictionary.
    [[nodiscard]] const Value* find(std::string_view key) const {
        const auto* d = std::get_if<Dict>(&data_);
        if (d == nullptr) return nullptr;
        auto it = d->find(std::string(key));
        return it == d->end() ? nullptr : &it->second;
    }

    [[nodiscard]] const Storage& storage() const { return data_; }

    friend bool operator==(const Value&, const Value&) = default;

private:
    template <typename T>
    const T& get(const char* what) const {
        const T* p = std::get_if<T>(&data_);
        if (p == nullptr) throw ParseError(std::string("bencode value is not a ") + what);
        return *p;
    }

    Storage data_;
};

enum class Mode {
    strict,   // canonical form only
    lenient,  // tolerate unsorted/duplicate keys and non-canonical integers
};

/// Byte range of one top-level dictionary entry's value inside the source document.
struct EntrySpan {
    std::string key;
    std::size_t offset = 0;
    std::size_t length = 0;
};

struct Decoded {
    Value value;
    std::vector<EntrySpan> top_level_spans;
    std::vector<std::string> warnings;
};

namespace detail {

inline constexpr int max_depth = 256;

class Decoder {
public:
    Decoder(std::string_view in, Mode mode, Decoded& out) : in_(in), mode_(mode), out_(out) {}

    Value document() {
        Value v = value(0);
        if (pos_ != in_.size()) fail("trailing bytes after document");
        return v;
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError("bencode: " + what + " at offset " + std::to_string(pos_));
    }

    char peek() const {
        if (pos_ >= in_.size()) fail("unexpected end of input");
        return in_[pos_];
    }

    void non_canonical(const std::string& what) {
        if (mode_ == Mode::strict) fail(what);
        out_.warnings.push_back(what + " at offset " + std::to_string(pos_));
    }

    Value value(int depth) {
        if (depth > max_depth) fail("nesting too deep");
        char c = peek();
        if (c == 'i') return integer();
        if (c == 'l') return list(depth);
        if (c == 'd') return dict(depth);
        if (c >= '0' && c <= '9') return string();
        fail(std::string("unexpected byte '") + c + "'");
    }

    // Digits up to `terminator`; returns magnitude with overflow and format checks.
    Integer digits(char terminator, bool allow_negative) {
        bool negative = false;
        if (allow_negative && peek() == '-') {
            negative = true;
            ++pos_;
        }
        std::size_t start = pos_;
        std::uint64_t magnitude = 0;
        while (peek() != terminator) {
            char c = peek();
            if (c < '0' || c > '9') fail("invalid digit in integer");
            std::uint64_t next = magnitude * 10 + static_cast<std::uint64_t>(c - '0');
            if (magnitude > (std::numeric_limits<std::uint64_t>::max() - 9) / 10) fail("integer out of 64-bit range");
            magnitude = next;
            ++pos_;
        }
        std::size_t len = pos_ - start;
        if (len == 0) fail("empty integer");
        if (len > 1 && in_[start] == '0') non_canonical("leading zero in integer");
        if (negative && magnitude == 0) non_canonical("negative zero");
        ++pos_;  // terminator
        constexpr auto max_pos = static_cast<std::uint64_t>(std::numeric_limits<Integer>::max());
        if (negative) {
            if (magnitude > max_pos + 1) fail("integer out of 64-bit range");
            return magnitude == max_pos + 1 ? std::numeric_limits<Integer>::min() : -static_cast<Integer>(magnitude);
        }
        if (magnitude > max_pos) fail("integer out of 64-bit range");
        return static_cast<Integer>(magnitude);
    }

    Value integer() {
        ++pos_;
        return Value(digits('e', true));
    }

    String raw_string() {
        Integer len = digits(':', false);
        if (static_cast<std::uint64_t>(len) > in_.size() - pos_) fail("byte-string length exceeds input");
        String s(in_.substr(pos_, static_cast<std::size_t>(len)));
        pos_ += static_cast<std::size_t>(len);
        return s;
    }

    Value string() { return Value(raw_string()); }

    Value list(int depth) {
        ++pos_;
        List items;
        while (peek() != 'e') items.push_back(value(depth + 1));
        ++pos_;
        return Value(std::move(items));
    }

    Value dict(int depth) {
        ++pos_;
        Dict entries;
        std::optional<std::string> previous;
        while (peek() != 'e') {
            char c = peek();
            if (c < '0' || c > '9') fail("dictionary key is not a byte-string");
            std::string key = raw_string();
            if (previous) {
                if (key == *previous)
                    non_canonical("duplicate dictionary key");
                else if (key < *previous)
                    non_canonical("dictionary keys not sorted");
            }
            std::size_t value_start = pos_;
            Value v = value(depth + 1);
            if (depth == 0) out_.top_level_spans.push_back({key, value_start, pos_ - value_start});
            // First occurrence wins for duplicates in lenient mode.
            entries.emplace(key, std::move(v));
            previous = std::move(key);
        }
        ++pos_;
        return Value(std::move(entries));
    }

    std::string_view in_;
    Mode mode_;
    Decoded& out_;
    std::size_t pos_ = 0;
};

inline void encode_into(const Value& v, std::string& out) {
    std::visit(
        [&out](const auto& x) {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Integer>) {
                out += 'i';
                out += std::to_string(x);
                out += 'e';
            } else if constexpr (std::is_same_v<T, String>) {
                out += std::to_string(x.size());
                out += ':';
                out += x;
            } else if constexpr (std::is_same_v<T, List>) {
                out += 'l';
                for (const auto& item : x) encode_into(item, out);
                out += 'e';
            } else {
                out += 'd';
                for (const auto& [k, item] : x) {
                    out += std::to_string(k.size());
                    out += ':';
                    out += k;
                    encode_into(item, out);
                }
                out += 'e';
            }
        },
        v.storage());
}

}  // namespace detail

/// Decodes a complete document, also reporting where each top-level entry's value sits.
inline Decoded decode_document(std::string_view bytes, Mode mode = Mode::strict) {
    Decoded out;
    detail::Decoder dec(bytes, mode, out);
    out.value = dec.document();
    return out;
}

inline Value decode(std::string_view bytes, Mode mode = Mode::strict) { return decode_document(bytes, mode).value; }

inline std::string encode(const Value& v) {
    std::string out;
    detail::encode_into(v, out);
    return out;
}

/// SHA-1 of the exact bencoded info dictionary bytes.
inline Digest20 infohash(std::string_view info_span) {
    Digest20 d{};
    SHA1(reinterpret_cast<const unsigned char*>(info_span.data()), info_span.size(), d.data());
    return d;
}

}  // namespace pubmon::bencode

namespace pubmon {

struct TorrentMeta {
    Digest20 infohash{};
    std::string name;
    std::int64_t piece_count = 0;
    std::int64_t piece_length = 0;
    std::int64_t total_size = 0;
    std::string announce_url;
    std::vector<std::string> announce_list;
    // Paths of the files inside the torrent, '/'-joined. Single-file torrents list `name`.
    std::vector<std::string> file_names;
};

/// Parses .torrent bytes. Third-party files are decoded leniently; the infohash is always
/// taken over the original `info` bytes.
inline TorrentMeta parse_metainfo(std::string_view bytes) {
    using namespace bencode;
    Decoded doc = decode_document(bytes, Mode::lenient);
    if (!doc.value.is_dict()) throw ParseError("metainfo is not a dictionary");
    const Value& root = doc.value;

    const Value* announce = root.find("announce");
    if (announce == nullptr || !announce->is_string()) throw MissingField("announce");
    const Value* info = root.find("info");
    if (info == nullptr || !info->is_dict()) throw MissingField("info");

    TorrentMeta meta;
    meta.announce_url = announce->as_string();
    if (const Value* tiers = root.find("announce-list"); tiers != nullptr && tiers->is_list()) {
        for (const Value& tier : tiers->as_list()) {
            if (!tier.is_list()) continue;
            for (const Value& url : tier.as_list())
                if (url.is_string()) meta.announce_list.push_back(url.as_string());
        }
    }

    auto require = [&](const char* key) -> const Value& {
        const Value* v = info->find(key);
        if (v == nullptr) throw MissingField(std::string("info.") + key);
        return *v;
    };
    auto positive = [](const Value& v, const char* key) {
        if (!v.is_int() || v.as_int() <= 0) throw ParseError(std::string("info.") + key + " must be a positive integer");
        return v.as_int();
    };

    const Value& name = require("name");
    if (!name.is_string()) throw ParseError("info.name must be a byte-string");
    meta.name = name.as_string();
    meta.piece_length = positive(require("piece length"), "piece length");

    if (const Value* length = info->find("length")) {
        meta.total_size = positive(*length, "length");
        meta.file_names.push_back(meta.name);
    } else if (const Value* files = info->find("files"); files != nullptr && files->is_list()) {
        for (const Value& f : files->as_list()) {
            const Value* flen = f.find("length");
            const Value* path = f.find("path");
            if (flen == nullptr || !flen->is_int() || flen->as_int() < 0) throw ParseError("info.files entry without length");
            if (path == nullptr || !path->is_list()) throw MissingField("info.files.path");
            meta.total_size += flen->as_int();
            std::string joined;
            for (const Value& part : path->as_list()) {
                if (!joined.empty()) joined += '/';
                joined += part.as_string();
            }
            meta.file_names.push_back(std::move(joined));
        }
        if (meta.total_size <= 0) throw ParseError("multi-file torrent has zero total size");
    } else {
        throw MissingField("info.length");
    }

    meta.piece_count = (meta.total_size + meta.piece_length - 1) / meta.piece_length;
    const Value& pieces = require("pieces");
    if (!pieces.is_string() || pieces.as_string().size() % 20 != 0 ||
        static_cast<std::int64_t>(pieces.as_string().size() / 20) != meta.piece_count)
        throw ParseError("inconsistent piece math: pieces digest count does not match ceil(size / piece length)");

    for (const auto& span : doc.top_level_spans) {
        if (span.key == "info") {
            meta.infohash = infohash(bytes.substr(span.offset, span.length));
            break;
        }
    }
    return meta;
}

}  // namespace pubmon
