#include <gtest/gtest.h>

#include <deque>

#include "pubmon/peer_wire.hpp"

using namespace pubmon;

namespace {

Digest20 hash_of(char c) {
    Digest20 d{};
    d.fill(static_cast<std::uint8_t>(c));
    return d;
}

const Bytes kPeerId = "-PM0100-abcdefghijkl";

// Replays canned bytes; optionally hangs up once they are consumed.
class ScriptedConnection final : public PeerConnection {
public:
    explicit ScriptedConnection(Bytes data, bool close_at_end, Bytes* sent)
        : data_(std::move(data)), close_(close_at_end), sent_(sent) {}
    void send(std::string_view b) override { sent_->append(b); }
    std::optional<Bytes> receive(std::size_t n, std::chrono::milliseconds) override {
        if (data_.size() < n) {
            if (close_) throw TransportError("closed");
            return std::nullopt;
        }
        Bytes out = data_.substr(0, n);
        data_.erase(0, n);
        return out;
    }

private:
    Bytes data_;
    bool close_;
    Bytes* sent_;
};

class ScriptedDialer final : public PeerDialer {
public:
    DialStatus status = DialStatus::connected;
    Bytes reply;
    bool close_at_end = false;
    Bytes sent;
    DialResult dial(const Endpoint&, std::chrono::milliseconds) override {
        if (status != DialStatus::connected) return {status, nullptr};
        return {status, std::make_unique<ScriptedConnection>(reply, close_at_end, &sent)};
    }
};

Endpoint ep() { return *Endpoint::parse("10.0.0.1:6881"); }
Timestamp t0() { return parse_iso8601("2010-04-06T00:00:00Z"); }

}  // namespace

TEST(Wire, HandshakeLayout) {
    Bytes hs = wire::encode_handshake(hash_of('x'), kPeerId);
    ASSERT_EQ(hs.size(), wire::handshake_size);
    EXPECT_EQ(hs[0], 19);
    EXPECT_EQ(hs.substr(1, 19), "BitTorrent protocol");
    EXPECT_EQ(hs.substr(28, 20), Bytes(20, 'x'));
    EXPECT_EQ(hs.substr(48), kPeerId);
    auto parsed = wire::parse_handshake(hs);
    ASSERT_TRUE(parsed);
    EXPECT_EQ(parsed->infohash, hash_of('x'));
    EXPECT_FALSE(wire::parse_handshake(hs.substr(1)));
}

TEST(Wire, MessageFraming) {
    Bytes m = wire::encode_message(wire::msg_bitfield, "\xff");
    EXPECT_EQ(m, Bytes("\0\0\0\x02\x05\xff", 6));
    EXPECT_EQ(wire::read_length(m.substr(0, 4)), 2u);
    EXPECT_EQ(wire::keep_alive(), Bytes(4, '\0'));
}

TEST(Bitfield, SeedDetection) {
    EXPECT_TRUE(is_seed("\xff", 8));
    EXPECT_FALSE(is_seed("\xfe", 8));
    EXPECT_TRUE(is_seed("\xf0", 4));
    EXPECT_EQ(count_pieces("\xf0", 4), 4);
    EXPECT_EQ(count_pieces("\xe0", 8), 3);
    // Padding bits beyond piece_count are ignored.
    EXPECT_EQ(count_pieces("\xff", 4), 4);
}

TEST(Bitfield, MakeCountsBack) {
    for (std::int64_t n : {1, 7, 8, 9, 941, 1024})
        for (std::int64_t have : {std::int64_t{0}, n / 2, n - 1, n}) {
            Bytes bf = wire::make_bitfield(n, have);
            ASSERT_EQ(bf.size(), wire::bitfield_bytes(n));
            ASSERT_EQ(count_pieces(bf, n), have);
            ASSERT_EQ(is_seed(bf, n), have == n);
        }
}

TEST(Probe, SeedAndLeecher) {
    ScriptedDialer d;
    d.reply = wire::encode_handshake(hash_of('h'), "-XX0000-000000000000") +
              wire::encode_message(wire::msg_bitfield, wire::make_bitfield(8, 8));
    auto r = probe(d, ep(), hash_of('h'), kPeerId, 8, t0());
    EXPECT_EQ(r.outcome, ProbeOutcome::seed);
    EXPECT_EQ(r.pieces_have, 8);
    EXPECT_EQ(r.probed_at, t0());
    // Only our handshake went out: nothing that looks like a download.
    EXPECT_EQ(d.sent, wire::encode_handshake(hash_of('h'), kPeerId));

    d.reply = wire::encode_handshake(hash_of('h'), "-XX0000-000000000000") + wire::keep_alive() +
              wire::encode_message(wire::msg_bitfield, wire::make_bitfield(8, 3));
    r = probe(d, ep(), hash_of('h'), kPeerId, 8, t0());
    EXPECT_EQ(r.outcome, ProbeOutcome::non_seed);
    EXPECT_EQ(r.pieces_have, 3);
}

TEST(Probe, FailureMappings) {
    ScriptedDialer d;
    d.status = DialStatus::refused;
    EXPECT_EQ(probe(d, ep(), hash_of('h'), kPeerId, 8, t0()).outcome, ProbeOutcome::refused);
    d.status = DialStatus::timeout;
    EXPECT_EQ(probe(d, ep(), hash_of('h'), kPeerId, 8, t0()).outcome, ProbeOutcome::timeout);

    d.status = DialStatus::connected;
    d.reply = wire::encode_handshake(hash_of('h'), "-XX0000-000000000000");
    EXPECT_EQ(probe(d, ep(), hash_of('h'), kPeerId, 8, t0()).outcome, ProbeOutcome::timeout);
    d.close_at_end = true;
    EXPECT_EQ(probe(d, ep(), hash_of('h'), kPeerId, 8, t0()).outcome, ProbeOutcome::no_bitfield);

    // Wrong swarm, a "have" message first, and a bitfield of the wrong size.
    d.reply = wire::encode_handshake(hash_of('z'), "-XX0000-000000000000");
    EXPECT_EQ(probe(d, ep(), hash_of('h'), kPeerId, 8, t0()).outcome, ProbeOutcome::no_bitfield);
    d.reply = wire::encode_handshake(hash_of('h'), "-XX0000-000000000000") + wire::encode_message(4, Bytes(4, '\0'));
    EXPECT_EQ(probe(d, ep(), hash_of('h'), kPeerId, 8, t0()).outcome, ProbeOutcome::no_bitfield);
    d.reply = wire::encode_handshake(hash_of('h'), "-XX0000-000000000000") +
              wire::encode_message(wire::msg_bitfield, Bytes(3, '\xff'));
    EXPECT_EQ(probe(d, ep(), hash_of('h'), kPeerId, 8, t0()).outcome, ProbeOutcome::no_bitfield);
}

TEST(Probe, OutcomeNames) {
    for (auto o : {ProbeOutcome::seed, ProbeOutcome::non_seed, ProbeOutcome::no_bitfield, ProbeOutcome::refused,
                   ProbeOutcome::timeout})
        EXPECT_EQ(probe_outcome_from_string(to_string(o)), o);
    EXPECT_THROW(probe_outcome_from_string("maybe"), ParseError);
}
