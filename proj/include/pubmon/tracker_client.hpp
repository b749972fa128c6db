#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "pubmon/bencode.hpp"
#include "pubmon/common.hpp"
#include "pubmon/transport.hpp"
#include "pubmon/url.hpp"

namespace pubmon {

inline constexpr int default_numwant = 200;

/// One crawler identity. Each vantage has its own peer_id and its own rate-limit budget.
struct VantageIdentity {
    std::string id;
    Bytes peer_id;  // 20 bytes
    std::uint16_t port = 6881;

    /// Azureus-style peer id "-PM0100-" followed by 12 characters derived from the id.
    static VantageIdentity make(std::string id, std::uint16_t port = 6881) {
        static constexpr char alphabet[] = "0123456789abcdefghijklmnopqrstuvwxyz";
        std::uint64_t h = fnv1a64(id);
        Bytes peer_id = "-PM0100-";
        for (int i = 0; i < 12; ++i) {
            h = mix_seed(h);
            peer_id.push_back(alphabet[h % 36]);
        }
        return {std::move(id), std::move(peer_id), port};
    }
};

enum class AnnounceEvent { none, started, stopped };

struct AnnounceRequest {
    Digest20 infohash{};
    Bytes peer_id;
    std::uint16_t port = 6881;
    int numwant = default_numwant;
    AnnounceEvent event = AnnounceEvent::none;
    std::string tracker_url;
};

struct AnnounceResult {
    std::int64_t seeders = 0;   // "complete"
    std::int64_t leechers = 0;  // "incomplete"
    std::int64_t interval_s = 0;
    std::vector<Endpoint> peers;
    Timestamp received_at{};
    std::string vantage_id;
};

inline const char* to_string(AnnounceEvent e) {
    switch (e) {
        case AnnounceEvent::started: return "started";
        case AnnounceEvent::stopped: return "stopped";
        case AnnounceEvent::none: break;
    }
    return "";
}

/// Request descriptor: the full GET URL. The monitor announces with left=0 and no event
/// so it never presents itself as a downloader.
inline std::string announce_url(const AnnounceRequest& req) {
    std::string out = req.tracker_url;
    out += req.tracker_url.find('?') == std::string::npos ? '?' : '&';
    out += "info_hash=" + url::percent_encode(as_bytes(req.infohash));
    out += "&peer_id=" + url::percent_encode(req.peer_id);
    out += "&port=" + std::to_string(req.port);
    out += "&uploaded=0&downloaded=0&left=0&compact=1";
    out += "&numwant=" + std::to_string(req.numwant);
    if (req.event != AnnounceEvent::none) out += std::string("&event=") + to_string(req.event);
    return out;
}

struct BuiltAnnounce {
    AnnounceRequest request;
    std::string descriptor;
};

inline BuiltAnnounce build_announce(const TorrentMeta& meta, const VantageIdentity& identity,
                                    std::optional<int> numwant = std::nullopt,
                                    AnnounceEvent event = AnnounceEvent::none) {
    AnnounceRequest req;
    req.infohash = meta.infohash;
    req.peer_id = identity.peer_id;
    req.port = identity.port;
    req.numwant = numwant.value_or(default_numwant);
    if (req.numwant < 1) throw ConfigError("numwant must be >= 1");
    req.event = event;
    req.tracker_url = meta.announce_url;
    BuiltAnnounce built{req, announce_url(req)};
    return built;
}

namespace detail {

inline std::vector<Endpoint> decode_compact_peers(std::string_view raw) {
    if (raw.size() % 6 != 0) throw ParseError("compact peer string length is not a multiple of 6");
    std::vector<Endpoint> peers;
    peers.reserve(raw.size() / 6);
    for (std::size_t i = 0; i < raw.size(); i += 6) {
        auto b = [&](std::size_t k) { return static_cast<std::uint32_t>(static_cast<unsigned char>(raw[i + k])); };
        Endpoint ep{Ipv4{b(0) << 24 | b(1) << 16 | b(2) << 8 | b(3)}, static_cast<std::uint16_t>(b(4) << 8 | b(5))};
        if (ep.port != 0) peers.push_back(ep);
    }
    return peers;
}

inline std::vector<Endpoint> decode_dict_peers(const bencode::List& list) {
    std::vector<Endpoint> peers;
    for (const auto& entry : list) {
        const auto* ip = entry.find("ip");
        const auto* port = entry.find("port");
        if (ip == nullptr || port == nullptr || !ip->is_string() || !port->is_int()) continue;
        auto addr = Ipv4::parse(ip->as_string());
        if (!addr || port->as_int() < 1 || port->as_int() > 65535) continue;
        peers.push_back({*addr, static_cast<std::uint16_t>(port->as_int())});
    }
    return peers;
}

}  // namespace detail

inline AnnounceResult parse_announce_response(std::string_view bytes, std::string vantage_id = {},
                                              Timestamp received_at = {}) {
    bencode::Value root = bencode::decode(bytes, bencode::Mode::lenient);
    if (!root.is_dict()) throw ParseError("tracker response is not a dictionary");
    if (const auto* failure = root.find("failure reason")) throw TrackerError(failure->as_string());

    AnnounceResult r;
    r.vantage_id = std::move(vantage_id);
    r.received_at = received_at;
    auto count = [&](const char* key) -> std::int64_t {
        const auto* v = root.find(key);
        if (v == nullptr) return 0;
        if (!v->is_int() || v->as_int() < 0) throw ParseError(std::string("bad ") + key);
        return v->as_int();
    };
    r.seeders = count("complete");
    r.leechers = count("incomplete");
    const auto* interval = root.find("interval");
    if (interval == nullptr || !interval->is_int() || interval->as_int() <= 0) throw MissingField("interval");
    r.interval_s = interval->as_int();

    const auto* peers = root.find("peers");
    if (peers == nullptr) throw MissingField("peers");
    if (peers->is_string())
        r.peers = detail::decode_compact_peers(peers->as_string());
    else if (peers->is_list())
        r.peers = detail::decode_dict_peers(peers->as_list());
    else
        throw ParseError("peers field has unexpected type");
    return r;
}

inline Bytes encode_compact_peers(const std::vector<Endpoint>& peers) {
    Bytes out;
    out.reserve(peers.size() * 6);
    for (const auto& p : peers) {
        std::uint32_t v = p.ip.value;
        out.push_back(static_cast<char>(v >> 24));
        out.push_back(static_cast<char>(v >> 16));
        out.push_back(static_cast<char>(v >> 8));
        out.push_back(static_cast<char>(v));
        out.push_back(static_cast<char>(p.port >> 8));
        out.push_back(static_cast<char>(p.port & 0xff));
    }
    return out;
}

/// Tracker-side serialization (compact form); what the simulated tracker answers with.
inline Bytes serialize_announce_response(const AnnounceResult& r) {
    bencode::Dict d;
    d["complete"] = bencode::Integer{r.seeders};
    d["incomplete"] = bencode::Integer{r.leechers};
    d["interval"] = bencode::Integer{r.interval_s};
    d["peers"] = encode_compact_peers(r.peers);
    return bencode::encode(bencode::Value(std::move(d)));
}

inline Bytes serialize_tracker_failure(const std::string& reason) {
    bencode::Dict d;
    d["failure reason"] = reason;
    return bencode::encode(bencode::Value(std::move(d)));
}

// ---------------------------------------------------------------------------
// Rate limiting

struct RateDecision {
    bool proceed = false;
    Timestamp wait_until{};
};

/// Key under which queries are spaced. The monitor scopes it by vantage, tracker and
/// swarm; acquire(url, now) uses the bare tracker URL.
struct RateKey {
    std::string vantage;
    std::string tracker_url;
    std::string swarm;  // hex infohash, empty for tracker-wide limits

    [[nodiscard]] std::string str() const { return vantage + '|' + tracker_url + '|' + swarm; }
};

class RateLimiter {
public:
    explicit RateLimiter(Seconds min_interval = Minutes{10}) : default_interval_(min_interval) {}

    void set_min_interval(const std::string& tracker_url, Seconds interval) {
        std::lock_guard lock(mu_);
        per_tracker_[tracker_url] = interval;
    }

    [[nodiscard]] Seconds min_interval(const std::string& tracker_url) const {
        std::lock_guard lock(mu_);
        return interval_locked(tracker_url);
    }

    RateDecision acquire(const RateKey& key, Timestamp now) { return acquire_impl(key.str(), key.tracker_url, now); }

    RateDecision acquire(const std::string& tracker_url, Timestamp now) {
        return acquire_impl(RateKey{{}, tracker_url, {}}.str(), tracker_url, now);
    }

private:
    Seconds interval_locked(const std::string& tracker_url) const {
        auto it = per_tracker_.find(tracker_url);
        return it == per_tracker_.end() ? default_interval_ : it->second;
    }

    RateDecision acquire_impl(const std::string& key, const std::string& tracker_url, Timestamp now) {
        std::lock_guard lock(mu_);
        auto it = last_.find(key);
        Seconds interval = interval_locked(tracker_url);
        if (it != last_.end() && now - it->second < interval) return {false, it->second + interval};
        last_[key] = now;
        return {true, now};
    }

    mutable std::mutex mu_;
    Seconds default_interval_;
    std::map<std::string, Seconds> per_tracker_;
    std::map<std::string, Timestamp> last_;
};

/// Sends one announce through the transport and parses the reply.
inline AnnounceResult announce(Transport& transport, const BuiltAnnounce& built, const std::string& vantage_id,
                               Timestamp now, std::chrono::milliseconds timeout = std::chrono::seconds{30}) {
    HttpResponse resp = transport.get(built.descriptor, timeout);
    if (resp.status != 200) throw TransportError("tracker HTTP status " + std::to_string(resp.status));
    return parse_announce_response(resp.body, vantage_id, now);
}

}  // namespace pubmon
