#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pubmon/bencode.hpp"
#include "pubmon/common.hpp"
#include "pubmon/transport.hpp"

namespace pubmon {

/// Where each field lives inside an RSS <item>. Paths use '.' between nested elements;
/// attributes are addressed as `element.<xmlattr>.name`.
struct PortalProfile {
    std::string portal_id = "portal";
    std::string feed_url;
    std::string title_path = "title";
    std::string category_path = "category";
    std::string subcategory_path = "subcategory";
    std::string username_path = "author";
    std::string size_path = "size";
    std::string torrent_url_path = "enclosure.<xmlattr>.url";
    std::string published_path = "pubDate";
    std::string description_path = "description";
};

/// Knobs of the monitoring pipeline. Defaults follow the measurement methodology:
/// 10 min between queries per identity, 200 peers requested, stop after 10 empty replies.
struct MonitorConfig {
    Seconds poll_interval = Seconds{60};
    Seconds first_query_delay = Seconds{0};
    Seconds min_interval = Minutes{10};
    int vantages = 3;
    int numwant = 200;
    std::chrono::milliseconds probe_timeout{5000};
    int fetch_retries = 3;
    Seconds dead_time = Hours{24};
    Seconds id_retry_window = Seconds{0};
    int empty_replies_to_stop = 10;
    int max_probe_peers = 20;  // probe only when fewer than this many peers are returned
    std::chrono::milliseconds http_timeout{30000};
};

struct PortalConfig {
    PortalProfile profile;
    MonitorConfig monitor;
};

/// Reads an INI-style key-value profile: a [portal] section naming the feed and its
/// element mapping and an optional [monitor] section.
inline PortalConfig load_portal_config(std::istream& in) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("portal profile: ") + e.what());
    }
    PortalConfig cfg;
    auto& p = cfg.profile;
    auto str = [&](const char* key, std::string& field) { field = tree.get<std::string>(key, field); };
    str("portal.id", p.portal_id);
    str("portal.feed_url", p.feed_url);
    str("portal.title", p.title_path);
    str("portal.category", p.category_path);
    str("portal.subcategory", p.subcategory_path);
    str("portal.username", p.username_path);
    str("portal.size", p.size_path);
    str("portal.torrent_url", p.torrent_url_path);
    str("portal.published", p.published_path);
    str("portal.description", p.description_path);
    if (p.feed_url.empty()) throw ConfigError("portal profile lacks portal.feed_url");

    auto& m = cfg.monitor;
    auto dur = [&](const char* key, Seconds& field) {
        if (auto v = tree.get_optional<std::string>(key)) field = parse_duration(*v);
    };
    auto num = [&](const char* key, int& field) {
        try {
            field = tree.get<int>(key, field);
        } catch (const pt::ptree_bad_data&) {
            throw ConfigError(std::string("bad integer for ") + key);
        }
    };
    dur("monitor.poll_interval", m.poll_interval);
    dur("monitor.first_query_delay", m.first_query_delay);
    dur("monitor.min_interval", m.min_interval);
    dur("monitor.dead_time", m.dead_time);
    dur("monitor.id_retry_window", m.id_retry_window);
    num("monitor.vantages", m.vantages);
    num("monitor.numwant", m.numwant);
    num("monitor.fetch_retries", m.fetch_retries);
    num("monitor.empty_replies_to_stop", m.empty_replies_to_stop);
    if (auto v = tree.get_optional<std::string>("monitor.probe_timeout"))
        m.probe_timeout = std::chrono::duration_cast<std::chrono::milliseconds>(parse_duration(*v));
    if (m.vantages < 1 || m.numwant < 1 || m.fetch_retries < 1 || m.min_interval.count() <= 0 ||
        m.poll_interval.count() <= 0 || m.empty_replies_to_stop < 1)
        throw ConfigError("monitor settings out of range");
    return cfg;
}

inline PortalConfig load_portal_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open portal profile: " + path);
    return load_portal_config(in);
}

struct FeedItem {
    std::string title;
    std::string category;
    std::string subcategory;
    std::string username;
    std::int64_t content_size = 0;
    std::string torrent_url;
    Timestamp published_at{};
    std::string portal_id;
    std::string description;

    [[nodiscard]] std::string identity() const { return portal_id + '|' + torrent_url; }
    friend bool operator==(const FeedItem&, const FeedItem&) = default;
};

inline void to_json(nlohmann::json& j, const FeedItem& f) {
    j = {{"title", f.title},
         {"category", f.category},
         {"subcategory", f.subcategory},
         {"username", f.username},
         {"content_size", f.content_size},
         {"torrent_url", f.torrent_url},
         {"published_at", format_iso8601(f.published_at)},
         {"portal_id", f.portal_id},
         {"description", f.description}};
}

inline void from_json(const nlohmann::json& j, FeedItem& f) {
    f.title = j.at("title").get<std::string>();
    f.category = j.value("category", "");
    f.subcategory = j.value("subcategory", "");
    f.username = j.at("username").get<std::string>();
    f.content_size = j.value("content_size", std::int64_t{0});
    f.torrent_url = j.at("torrent_url").get<std::string>();
    f.published_at = parse_iso8601(j.at("published_at").get<std::string>());
    f.portal_id = j.at("portal_id").get<std::string>();
    f.description = j.value("description", "");
}

/// "Tue, 06 Apr 2010 00:01:00 +0000" (GMT/UT/Z and numeric offsets).
inline std::optional<Timestamp> parse_rfc822(const std::string& text) {
    std::tm tm{};
    std::string s = text;
    auto comma = s.find(',');
    if (comma != std::string::npos) s = s.substr(comma + 1);
    std::istringstream body(s);
    body >> std::get_time(&tm, "%d %b %Y %H:%M:%S");
    if (body.fail()) return std::nullopt;
    std::string zone;
    body >> zone;
    long offset = 0;
    if (!zone.empty() && (zone[0] == '+' || zone[0] == '-') && zone.size() == 5) {
        int hh = std::stoi(zone.substr(1, 2));
        int mm = std::stoi(zone.substr(3, 2));
        offset = (hh * 3600L + mm * 60L) * (zone[0] == '-' ? -1 : 1);
    }
    std::time_t t = timegm(&tm) - offset;
    return Timestamp{Seconds{t}};
}

inline std::string format_rfc822(Timestamp t) {
    std::time_t tt = t.time_since_epoch().count();
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[64];
    std::strftime(buf, sizeof buf, "%a, %d %b %Y %H:%M:%S +0000", &tm);
    return buf;
}

inline std::string trim(std::string s) {
    auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
    s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
    s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
    return s;
}

/// One FeedItem per <item>. Items lacking a title, username or torrent URL are skipped
/// and described in `warnings`.
inline std::vector<FeedItem> parse_feed(std::string_view xml, const PortalProfile& profile,
                                        std::vector<std::string>* warnings = nullptr) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in{std::string(xml)};
        pt::read_xml(in, tree);
    } catch (const pt::xml_parser_error& e) {
        throw ParseError(std::string("malformed feed xml: ") + e.what());
    }
    auto channel = tree.get_child_optional("rss.channel");
    if (!channel) throw ParseError("feed has no rss/channel element");

    std::vector<FeedItem> items;
    int index = 0;
    for (const auto& [name, node] : *channel) {
        if (name != "item") continue;
        ++index;
        auto field = [&node](const std::string& path) -> std::string {
            auto v = node.get_optional<std::string>(pt::ptree::path_type(path, '.'));
            return v ? trim(*v) : std::string{};
        };
        FeedItem item;
        item.portal_id = profile.portal_id;
        item.title = field(profile.title_path);
        item.username = field(profile.username_path);
        item.torrent_url = field(profile.torrent_url_path);
        item.category = field(profile.category_path);
        item.subcategory = field(profile.subcategory_path);
        item.description = field(profile.description_path);
        std::string missing;
        if (item.title.empty()) missing = "title";
        else if (item.username.empty()) missing = "username";
        else if (item.torrent_url.empty()) missing = "torrent url";
        if (!missing.empty()) {
            if (warnings) warnings->push_back("item " + std::to_string(index) + " skipped: missing " + missing);
            continue;
        }
        if (auto size = field(profile.size_path); !size.empty()) {
            try {
                item.content_size = std::stoll(size);
            } catch (const std::logic_error&) {
                if (warnings) warnings->push_back("item " + std::to_string(index) + ": bad size '" + size + "'");
            }
        }
        if (auto date = field(profile.published_path); !date.empty()) {
            if (auto ts = parse_rfc822(date))
                item.published_at = *ts;
            else if (warnings)
                warnings->push_back("item " + std::to_string(index) + ": bad date '" + date + "'");
        }
        items.push_back(std::move(item));
    }
    return items;
}

/// Dedup memory of the poller. `seen` only grows and is persisted between runs.
struct IngestState {
    std::set<std::string> seen;
    Timestamp last_poll_at{};

    void save(const std::filesystem::path& path) const {
        nlohmann::json j = {{"seen", seen}, {"last_poll_at", format_iso8601(last_poll_at)}};
        auto tmp = path;
        tmp += ".tmp";
        {
            std::ofstream out(tmp, std::ios::trunc);
            out << j.dump() << '\n';
            if (!out) throw Error("cannot write ingest state " + tmp.string());
        }
        std::filesystem::rename(tmp, path);
    }

    static IngestState load(const std::filesystem::path& path) {
        IngestState s;
        std::ifstream in(path);
        if (!in) return s;
        try {
            auto j = nlohmann::json::parse(in);
            s.seen = j.at("seen").get<std::set<std::string>>();
            s.last_poll_at = parse_iso8601(j.at("last_poll_at").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("corrupt ingest state " + path.string() + ": " + e.what());
        }
        return s;
    }
};

struct PollResult {
    std::vector<FeedItem> items;  // new items only, feed order
    std::vector<std::string> warnings;
    std::optional<std::string> error;
};

/// Fetches the feed once and returns items not seen before. On any failure the state is
/// left untouched and the error is reported in the result.
inline PollResult poll(Transport& transport, const PortalProfile& profile, IngestState& state, Timestamp now,
                       std::chrono::milliseconds timeout = std::chrono::seconds{30}) {
    PollResult result;
    std::vector<FeedItem> parsed;
    try {
        HttpResponse resp = transport.get(profile.feed_url, timeout);
        if (resp.status != 200) throw TransportError("feed HTTP status " + std::to_string(resp.status));
        parsed = parse_feed(resp.body, profile, &result.warnings);
    } catch (const Error& e) {
        result.error = e.what();
        return result;
    }
    for (auto& item : parsed) {
        if (state.seen.insert(item.identity()).second) result.items.push_back(std::move(item));
    }
    state.last_poll_at = now;
    return result;
}

/// Delay before the next feed poll after `consecutive_failures` failed attempts.
inline Seconds poll_backoff(Seconds base, int consecutive_failures) {
    Seconds d = base;
    for (int i = 0; i < consecutive_failures && d < Minutes{30}; ++i) d *= 2;
    return std::min<Seconds>(d, std::max<Seconds>(base, Minutes{30}));
}

enum class FetchStatus { ok, transport_failed, parse_failed };

inline const char* to_string(FetchStatus s) {
    switch (s) {
        case FetchStatus::ok: return "ok";
        case FetchStatus::transport_failed: return "fetch_failed";
        case FetchStatus::parse_failed: return "parse_failed";
    }
    return "?";
}

struct FetchOutcome {
    FetchStatus status = FetchStatus::transport_failed;
    std::optional<TorrentMeta> meta;
    std::string reason;
    int attempts = 0;
};

/// Downloads and parses the item's .torrent. Transport problems are retried up to
/// `max_attempts` times; a file that does not parse fails at once.
inline FetchOutcome fetch_torrent(Transport& transport, const FeedItem& item, int max_attempts = 3,
                                  std::chrono::milliseconds timeout = std::chrono::seconds{30}) {
    FetchOutcome out;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        out.attempts = attempt;
        HttpResponse resp;
        try {
            resp = transport.get(item.torrent_url, timeout);
        } catch (const TransportError& e) {
            out.reason = e.what();
            continue;
        }
        if (resp.status != 200) {
            out.reason = "HTTP status " + std::to_string(resp.status);
            continue;
        }
        try {
            out.meta = parse_metainfo(resp.body);
            out.status = FetchStatus::ok;
            out.reason.clear();
        } catch (const ParseError& e) {
            out.status = FetchStatus::parse_failed;
            out.reason = e.what();
        }
        return out;
    }
    out.status = FetchStatus::transport_failed;
    return out;
}

}  // namespace pubmon
