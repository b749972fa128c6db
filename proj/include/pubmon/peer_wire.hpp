#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "pubmon/common.hpp"
#include "pubmon/transport.hpp"

namespace pubmon {

namespace wire {

inline constexpr std::string_view protocol = "BitTorrent protocol";
inline constexpr std::size_t handshake_size = 68;
inline constexpr std::uint8_t msg_bitfield = 5;
// Refuse to buffer anything larger than this from a peer we are only probing.
inline constexpr std::uint32_t max_message = 1 << 20;

inline Bytes encode_handshake(const Digest20& infohash, std::string_view peer_id) {
    if (peer_id.size() != 20) throw ConfigError("peer_id must be 20 bytes");
    Bytes out;
    out.reserve(handshake_size);
    out.push_back(static_cast<char>(protocol.size()));
    out += protocol;
    out.append(8, '\0');
    out += as_bytes(infohash);
    out += peer_id;
    return out;
}

struct Handshake {
    Digest20 infohash{};
    Bytes peer_id;
};

inline std::optional<Handshake> parse_handshake(std::string_view raw) {
    if (raw.size() != handshake_size || static_cast<unsigned char>(raw[0]) != protocol.size() ||
        raw.substr(1, protocol.size()) != protocol)
        return std::nullopt;
    Handshake h;
    for (std::size_t i = 0; i < 20; ++i) h.infohash[i] = static_cast<std::uint8_t>(raw[28 + i]);
    h.peer_id = Bytes(raw.substr(48, 20));
    return h;
}

inline Bytes encode_message(std::uint8_t id, std::string_view payload) {
    auto len = static_cast<std::uint32_t>(payload.size() + 1);
    Bytes out;
    out.push_back(static_cast<char>(len >> 24));
    out.push_back(static_cast<char>(len >> 16));
    out.push_back(static_cast<char>(len >> 8));
    out.push_back(static_cast<char>(len));
    out.push_back(static_cast<char>(id));
    out += payload;
    return out;
}

inline Bytes keep_alive() { return Bytes(4, '\0'); }

inline std::uint32_t read_length(std::string_view four) {
    auto b = [&](int i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(four[i])); };
    return b(0) << 24 | b(1) << 16 | b(2) << 8 | b(3);
}

inline std::size_t bitfield_bytes(std::int64_t piece_count) { return static_cast<std::size_t>((piece_count + 7) / 8); }

/// Bitfield with the first `have` pieces set.
inline Bytes make_bitfield(std::int64_t piece_count, std::int64_t have) {
    Bytes bits(bitfield_bytes(piece_count), '\0');
    for (std::int64_t i = 0; i < have && i < piece_count; ++i)
        bits[static_cast<std::size_t>(i / 8)] |= static_cast<char>(0x80 >> (i % 8));
    return bits;
}

}  // namespace wire

/// Number of set bits among the first piece_count bits; trailing padding is ignored.
inline std::int64_t count_pieces(std::string_view bitfield, std::int64_t piece_count) {
    if (piece_count <= 0 || bitfield.size() != wire::bitfield_bytes(piece_count))
        throw ParseError("bitfield length does not match piece count");
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < piece_count; ++i)
        if (static_cast<unsigned char>(bitfield[static_cast<std::size_t>(i / 8)]) & (0x80 >> (i % 8))) ++n;
    return n;
}

inline bool is_seed(std::string_view bitfield, std::int64_t piece_count) {
    return count_pieces(bitfield, piece_count) == piece_count;
}

enum class ProbeOutcome { seed, non_seed, no_bitfield, refused, timeout };

inline const char* to_string(ProbeOutcome o) {
    switch (o) {
        case ProbeOutcome::seed: return "seed";
        case ProbeOutcome::non_seed: return "non_seed";
        case ProbeOutcome::no_bitfield: return "no_bitfield";
        case ProbeOutcome::refused: return "refused";
        case ProbeOutcome::timeout: return "timeout";
    }
    return "?";
}

inline ProbeOutcome probe_outcome_from_string(std::string_view s) {
    for (auto o : {ProbeOutcome::seed, ProbeOutcome::non_seed, ProbeOutcome::no_bitfield, ProbeOutcome::refused,
                   ProbeOutcome::timeout})
        if (s == to_string(o)) return o;
    throw ParseError("unknown probe outcome: " + std::string(s));
}

struct ProbeResult {
    Endpoint endpoint;
    ProbeOutcome outcome = ProbeOutcome::timeout;
    std::optional<std::int64_t> pieces_have;
    Timestamp probed_at{};
};

inline constexpr std::chrono::milliseconds default_probe_timeout{5000};

/// Handshakes with a peer and classifies it from its first message. Writes nothing but
/// the handshake; the connection is dropped as soon as the first message is read.
inline ProbeResult probe(PeerDialer& dialer, const Endpoint& endpoint, const Digest20& infohash,
                         std::string_view own_peer_id, std::int64_t piece_count, Timestamp now,
                         std::chrono::milliseconds timeout = default_probe_timeout) {
    if (timeout.count() <= 0) throw ConfigError("probe timeout must be positive");
    ProbeResult r{endpoint, ProbeOutcome::timeout, std::nullopt, now};

    DialResult dial = dialer.dial(endpoint, timeout);
    if (dial.status == DialStatus::refused) {
        r.outcome = ProbeOutcome::refused;
        return r;
    }
    if (dial.status == DialStatus::timeout || !dial.connection) return r;
    PeerConnection& conn = *dial.connection;

    try {
        conn.send(wire::encode_handshake(infohash, own_peer_id));
        auto hs = conn.receive(wire::handshake_size, timeout);
        if (!hs) return r;
        auto parsed = wire::parse_handshake(*hs);
        if (!parsed || parsed->infohash != infohash) {
            r.outcome = ProbeOutcome::no_bitfield;
            return r;
        }
        for (;;) {
            auto len_bytes = conn.receive(4, timeout);
            if (!len_bytes) return r;
            std::uint32_t len = wire::read_length(*len_bytes);
            if (len == 0) continue;  // keep-alive
            if (len > wire::max_message) {
                r.outcome = ProbeOutcome::no_bitfield;
                return r;
            }
            auto body = conn.receive(len, timeout);
            if (!body) return r;
            if (static_cast<std::uint8_t>((*body)[0]) != wire::msg_bitfield) {
                r.outcome = ProbeOutcome::no_bitfield;
                return r;
            }
            std::string_view bits = std::string_view(*body).substr(1);
            if (bits.size() != wire::bitfield_bytes(piece_count)) {
                r.outcome = ProbeOutcome::no_bitfield;
                return r;
            }
            r.pieces_have = count_pieces(bits, piece_count);
            r.outcome = *r.pieces_have == piece_count ? ProbeOutcome::seed : ProbeOutcome::non_seed;
            return r;
        }
    } catch (const TransportError&) {
        // Peer hung up before sending a bitfield.
        r.outcome = ProbeOutcome::no_bitfield;
        return r;
    }
}

}  // namespace pubmon
