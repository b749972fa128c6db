#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "pubmon/bencode.hpp"
#include "pubmon/common.hpp"
#include "pubmon/peer_wire.hpp"
#include "pubmon/portal_ingest.hpp"

// Everything the monitor persists. Each struct is one event kind of the JSON-lines log.

namespace pubmon {

struct SwarmSnapshot {
    std::string infohash;  // hex
    Timestamp observed_at{};
    std::string vantage_id;
    std::int64_t seeders = 0;
    std::int64_t leechers = 0;
    std::vector<Endpoint> peers;
    bool empty = true;

    friend bool operator==(const SwarmSnapshot&, const SwarmSnapshot&) = default;
};

enum class IdMethod { single_seed_bitfield, none };

enum class NoIpReason { multi_seed, too_many_peers, nat, no_seed_reported, pre_published };

inline const char* to_string(IdMethod m) { return m == IdMethod::single_seed_bitfield ? "single_seed_bitfield" : "none"; }

inline const char* to_string(NoIpReason r) {
    switch (r) {
        case NoIpReason::multi_seed: return "multi_seed";
        case NoIpReason::too_many_peers: return "too_many_peers";
        case NoIpReason::nat: return "nat";
        case NoIpReason::no_seed_reported: return "no_seed_reported";
        case NoIpReason::pre_published: return "pre_published";
    }
    return "?";
}

inline NoIpReason no_ip_reason_from_string(std::string_view s) {
    for (auto r : {NoIpReason::multi_seed, NoIpReason::too_many_peers, NoIpReason::nat, NoIpReason::no_seed_reported,
                   NoIpReason::pre_published})
        if (s == to_string(r)) return r;
    throw ParseError("unknown no-ip reason: " + std::string(s));
}

struct PublisherIdentification {
    std::string infohash;  // hex
    std::string username;
    std::optional<Ipv4> ip;
    IdMethod method = IdMethod::none;
    std::optional<NoIpReason> reason_no_ip;

    friend bool operator==(const PublisherIdentification&, const PublisherIdentification&) = default;
};

/// Identification event: links a feed item to its swarm and carries the metainfo summary.
struct IdentificationRecord {
    std::string portal_id;
    std::string torrent_url;
    PublisherIdentification id;
    std::string name;
    std::int64_t piece_count = 0;
    std::int64_t piece_length = 0;
    std::int64_t total_size = 0;
    std::string announce_url;
    std::vector<std::string> file_names;
    std::int64_t first_seeders = 0;
    std::int64_t first_leechers = 0;
    std::int64_t first_peer_count = 0;

    friend bool operator==(const IdentificationRecord&, const IdentificationRecord&) = default;
};

struct ProbeRecord {
    std::string infohash;
    ProbeResult result;
};

inline bool operator==(const ProbeRecord& a, const ProbeRecord& b) {
    return a.infohash == b.infohash && a.result.endpoint == b.result.endpoint && a.result.outcome == b.result.outcome &&
           a.result.pieces_have == b.result.pieces_have && a.result.probed_at == b.result.probed_at;
}

struct PortalRemoval {
    std::string portal_id;
    std::string username;
    Timestamp removed_at{};

    friend bool operator==(const PortalRemoval&, const PortalRemoval&) = default;
};

enum class TerminalKind { terminated, aborted, fetch_failed, parse_failed };

inline const char* to_string(TerminalKind k) {
    switch (k) {
        case TerminalKind::terminated: return "terminated";
        case TerminalKind::aborted: return "aborted";
        case TerminalKind::fetch_failed: return "fetch_failed";
        case TerminalKind::parse_failed: return "parse_failed";
    }
    return "?";
}

inline TerminalKind terminal_kind_from_string(std::string_view s) {
    for (auto k : {TerminalKind::terminated, TerminalKind::aborted, TerminalKind::fetch_failed,
                   TerminalKind::parse_failed})
        if (s == to_string(k)) return k;
    throw ParseError("unknown terminal status: " + std::string(s));
}

struct TerminalStatus {
    std::string subject;  // infohash hex, or the torrent URL when no swarm was reached
    TerminalKind status = TerminalKind::terminated;
    std::int64_t snapshot_count = 0;
    Timestamp started_at{};
    Timestamp ended_at{};
    std::string reason;

    friend bool operator==(const TerminalStatus&, const TerminalStatus&) = default;
};

/// Operator-supplied label of what a publisher's promoted site is.
enum class BusinessClass { bt_portal, other_web, altruistic };

inline const char* to_string(BusinessClass c) {
    switch (c) {
        case BusinessClass::bt_portal: return "bt_portal";
        case BusinessClass::other_web: return "other_web";
        case BusinessClass::altruistic: return "altruistic";
    }
    return "?";
}

inline BusinessClass business_class_from_string(std::string_view s) {
    for (auto c : {BusinessClass::bt_portal, BusinessClass::other_web, BusinessClass::altruistic})
        if (s == to_string(c)) return c;
    throw ParseError("unknown business class: " + std::string(s));
}

// --- JSON ------------------------------------------------------------------

inline nlohmann::json endpoints_to_json(const std::vector<Endpoint>& peers) {
    auto arr = nlohmann::json::array();
    for (const auto& p : peers) arr.push_back(p.to_string());
    return arr;
}

inline std::vector<Endpoint> endpoints_from_json(const nlohmann::json& j) {
    std::vector<Endpoint> out;
    out.reserve(j.size());
    for (const auto& s : j) {
        auto ep = Endpoint::parse(s.get<std::string>());
        if (!ep) throw ParseError("bad endpoint " + s.get<std::string>());
        out.push_back(*ep);
    }
    return out;
}

inline void to_json(nlohmann::json& j, const SwarmSnapshot& s) {
    j = {{"infohash", s.infohash},         {"observed_at", format_iso8601(s.observed_at)},
         {"vantage_id", s.vantage_id},     {"seeders", s.seeders},
         {"leechers", s.leechers},         {"peers", endpoints_to_json(s.peers)},
         {"empty", s.empty}};
}

inline void from_json(const nlohmann::json& j, SwarmSnapshot& s) {
    s.infohash = j.at("infohash").get<std::string>();
    s.observed_at = parse_iso8601(j.at("observed_at").get<std::string>());
    s.vantage_id = j.at("vantage_id").get<std::string>();
    s.seeders = j.at("seeders").get<std::int64_t>();
    s.leechers = j.at("leechers").get<std::int64_t>();
    s.peers = endpoints_from_json(j.at("peers"));
    s.empty = j.at("empty").get<bool>();
    if (s.empty != s.peers.empty()) throw ParseError("snapshot empty flag disagrees with peer list");
}

inline void to_json(nlohmann::json& j, const IdentificationRecord& r) {
    j = {{"portal_id", r.portal_id},
         {"torrent_url", r.torrent_url},
         {"infohash", r.id.infohash},
         {"username", r.id.username},
         {"ip", r.id.ip ? nlohmann::json(r.id.ip->to_string()) : nlohmann::json(nullptr)},
         {"method", to_string(r.id.method)},
         {"reason_no_ip", r.id.reason_no_ip ? nlohmann::json(to_string(*r.id.reason_no_ip)) : nlohmann::json(nullptr)},
         {"name", r.name},
         {"piece_count", r.piece_count},
         {"piece_length", r.piece_length},
         {"total_size", r.total_size},
         {"announce_url", r.announce_url},
         {"file_names", r.file_names},
         {"first_seeders", r.first_seeders},
         {"first_leechers", r.first_leechers},
         {"first_peer_count", r.first_peer_count}};
}

inline void from_json(const nlohmann::json& j, IdentificationRecord& r) {
    r.portal_id = j.at("portal_id").get<std::string>();
    r.torrent_url = j.at("torrent_url").get<std::string>();
    r.id.infohash = j.at("infohash").get<std::string>();
    r.id.username = j.at("username").get<std::string>();
    if (r.id.username.empty()) throw ParseError("identification without username");
    const auto& ip = j.at("ip");
    if (!ip.is_null()) {
        auto parsed = Ipv4::parse(ip.get<std::string>());
        if (!parsed) throw ParseError("bad identification ip");
        r.id.ip = *parsed;
    }
    auto method = j.at("method").get<std::string>();
    if (method == "single_seed_bitfield")
        r.id.method = IdMethod::single_seed_bitfield;
    else if (method == "none")
        r.id.method = IdMethod::none;
    else
        throw ParseError("unknown identification method " + method);
    const auto& reason = j.at("reason_no_ip");
    if (!reason.is_null()) r.id.reason_no_ip = no_ip_reason_from_string(reason.get<std::string>());
    if (r.id.ip.has_value() != (r.id.method == IdMethod::single_seed_bitfield))
        throw ParseError("identification ip must be present exactly when method is single_seed_bitfield");
    r.name = j.at("name").get<std::string>();
    r.piece_count = j.at("piece_count").get<std::int64_t>();
    r.piece_length = j.at("piece_length").get<std::int64_t>();
    r.total_size = j.at("total_size").get<std::int64_t>();
    r.announce_url = j.at("announce_url").get<std::string>();
    r.file_names = j.at("file_names").get<std::vector<std::string>>();
    r.first_seeders = j.at("first_seeders").get<std::int64_t>();
    r.first_leechers = j.at("first_leechers").get<std::int64_t>();
    r.first_peer_count = j.at("first_peer_count").get<std::int64_t>();
}

inline void to_json(nlohmann::json& j, const ProbeRecord& p) {
    j = {{"infohash", p.infohash},
         {"endpoint", p.result.endpoint.to_string()},
         {"outcome", to_string(p.result.outcome)},
         {"pieces_have", p.result.pieces_have ? nlohmann::json(*p.result.pieces_have) : nlohmann::json(nullptr)},
         {"probed_at", format_iso8601(p.result.probed_at)}};
}

inline void from_json(const nlohmann::json& j, ProbeRecord& p) {
    p.infohash = j.at("infohash").get<std::string>();
    auto ep = Endpoint::parse(j.at("endpoint").get<std::string>());
    if (!ep) throw ParseError("bad probe endpoint");
    p.result.endpoint = *ep;
    p.result.outcome = probe_outcome_from_string(j.at("outcome").get<std::string>());
    if (!j.at("pieces_have").is_null()) p.result.pieces_have = j.at("pieces_have").get<std::int64_t>();
    p.result.probed_at = parse_iso8601(j.at("probed_at").get<std::string>());
}

inline void to_json(nlohmann::json& j, const PortalRemoval& r) {
    j = {{"portal_id", r.portal_id}, {"username", r.username}, {"removed_at", format_iso8601(r.removed_at)}};
}

inline void from_json(const nlohmann::json& j, PortalRemoval& r) {
    r.portal_id = j.at("portal_id").get<std::string>();
    r.username = j.at("username").get<std::string>();
    r.removed_at = parse_iso8601(j.at("removed_at").get<std::string>());
}

inline void to_json(nlohmann::json& j, const TerminalStatus& t) {
    j = {{"subject", t.subject},
         {"status", to_string(t.status)},
         {"snapshot_count", t.snapshot_count},
         {"started_at", format_iso8601(t.started_at)},
         {"ended_at", format_iso8601(t.ended_at)},
         {"reason", t.reason}};
}

inline void from_json(const nlohmann::json& j, TerminalStatus& t) {
    t.subject = j.at("subject").get<std::string>();
    t.status = terminal_kind_from_string(j.at("status").get<std::string>());
    t.snapshot_count = j.at("snapshot_count").get<std::int64_t>();
    t.started_at = parse_iso8601(j.at("started_at").get<std::string>());
    t.ended_at = parse_iso8601(j.at("ended_at").get<std::string>());
    t.reason = j.value("reason", "");
}

}  // namespace pubmon
