#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "pubmon/bencode.hpp"
#include "pubmon/geoip.hpp"
#include "pubmon/peer_wire.hpp"
#include "pubmon/portal_ingest.hpp"
#include "pubmon/records.hpp"
#include "pubmon/swarm_monitor.hpp"
#include "pubmon/tracker_client.hpp"
#include "pubmon/transport.hpp"
#include "pubmon/url.hpp"

// Deterministic simulated world: a portal feed, a tracker and the peers behind it, all
// computed from a seed. Every schedule is drawn up front, so the swarm state at any
// instant is a pure function of time.

namespace pubmon::sim {

enum class PublisherKind { regular, top_hosting, top_commercial, fake };

inline const char* to_string(PublisherKind k) {
    switch (k) {
        case PublisherKind::regular: return "regular";
        case PublisherKind::top_hosting: return "top_hosting";
        case PublisherKind::top_commercial: return "top_commercial";
        case PublisherKind::fake: return "fake";
    }
    return "?";
}

inline PublisherKind publisher_kind_from_string(std::string_view s) {
    for (auto k : {PublisherKind::regular, PublisherKind::top_hosting, PublisherKind::top_commercial,
                   PublisherKind::fake})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown publisher kind: " + std::string(s));
}

/// One population of publishers sharing a behaviour profile.
struct ClassSpec {
    PublisherKind kind = PublisherKind::regular;
    int count = 0;  // publishers; for fake, entities (each one IP, several usernames)

    // Torrents per username: explicit list, Zipf (max(1, round(scale / rank^exponent))),
    // or uniform in [min, max].
    std::vector<int> counts;
    std::optional<double> zipf_exponent;
    double zipf_scale = 1;
    int torrents_min = 1;
    int torrents_max = 1;

    int usernames_per_ip = 1;  // fake entities only
    int ips_min = 1;
    int ips_max = 1;
    int isps_max = 1;  // commercial publishers spread their IPs over up to this many ISPs

    double window_start = 0.0;  // publishing window as fractions of the timeline
    double window_end = 1.0;
    int burst = 1;  // torrents released together
    Seconds burst_spacing = Minutes{2};

    Seconds session_mean = Hours{4};
    Seconds session_min = Minutes{30};
    int sessions_max = 1;
    Seconds gap_min = Hours{8};
    Seconds gap_mean = Hours{4};

    double arrivals_per_hour = 2.0;  // downloader arrival rate at birth, decaying
    Seconds arrival_decay = Hours{6};
    Seconds peer_session_mean = Hours{1};
    Seconds download_mean = Minutes{40};
    bool downloads_complete = true;
};

struct WorldConfig {
    std::uint64_t rng_seed = 1;
    Timestamp start = parse_iso8601("2010-04-06T00:00:00Z");
    Seconds timeline = Hours{24 * 7};
    int population_cap = 165;
    int sample_size = 50;
    double nat_fraction = 0.05;
    double pre_published_fraction = 0.0;
    double late_seed_fraction = 0.0;
    double multi_seed_fraction = 0.0;
    double removal_fraction = 0.0;  // fake usernames whose portal page gets removed
    Seconds removal_delay = Hours{12};
    std::vector<std::pair<std::string, double>> category_mix{{"Video/Movies", 1.0}};
    std::vector<std::pair<BusinessClass, double>> business_class_mix;  // over top publishers
    int hosting_isps = 4;
    int commercial_isps = 12;
    int downloader_pool = 20000;
    int feed_window = 30;
    std::string portal_id = "simportal";
    std::string feed_url = "http://portal.sim/rss";
    std::string tracker_url = "http://tracker.sim/announce";
    std::vector<ClassSpec> classes;
    MonitorConfig monitor;  // pipeline settings used by `simulate`

    void validate() const {
        auto prob = [](double p, const char* what) {
            if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(what) + " must be in [0,1]");
        };
        prob(nat_fraction, "nat_fraction");
        prob(pre_published_fraction, "pre_published_fraction");
        prob(late_seed_fraction, "late_seed_fraction");
        prob(multi_seed_fraction, "multi_seed_fraction");
        prob(removal_fraction, "removal_fraction");
        if (pre_published_fraction + late_seed_fraction + multi_seed_fraction > 1.0)
            throw ConfigError("birth anomaly fractions sum above 1");
        if (timeline.count() <= 0) throw ConfigError("timeline must be positive");
        if (population_cap < 2 || sample_size < 1) throw ConfigError("bad swarm population cap / sample size");
        if (hosting_isps < 1 || hosting_isps > 200 || commercial_isps < 1 || commercial_isps > 60)
            throw ConfigError("isp counts out of range");
        if (downloader_pool < 1 || downloader_pool > 60000 * commercial_isps)
            throw ConfigError("downloader_pool out of range");
        if (category_mix.empty()) throw ConfigError("category_mix is empty");
        for (const auto& [c, w] : category_mix)
            if (w < 0 || c.empty()) throw ConfigError("bad category_mix entry");
        for (const auto& [c, w] : business_class_mix)
            if (w < 0) throw ConfigError("bad business_class_mix entry");
        if (classes.empty()) throw ConfigError("world has no publisher classes");
        for (const auto& c : classes) {
            if (c.count < 0) throw ConfigError("class count must be >= 0");
            if (!c.counts.empty() && static_cast<int>(c.counts.size()) != c.count)
                throw ConfigError("explicit counts must list one entry per publisher");
            for (int n : c.counts)
                if (n < 1) throw ConfigError("explicit torrent counts must be >= 1");
            if (c.torrents_min < 1 || c.torrents_max < c.torrents_min) throw ConfigError("bad torrents range");
            if (c.zipf_exponent && (*c.zipf_exponent <= 0 || c.zipf_scale < 1)) throw ConfigError("bad zipf");
            if (c.usernames_per_ip < 1 || c.ips_min < 1 || c.ips_max < c.ips_min || c.isps_max < 1)
                throw ConfigError("bad address layout");
            if (!(c.window_start >= 0 && c.window_end <= 1 && c.window_start < c.window_end))
                throw ConfigError("bad publishing window");
            if (c.burst < 1 || c.sessions_max < 1) throw ConfigError("burst and sessions_max must be >= 1");
            if (c.session_mean.count() <= 0 || c.peer_session_mean.count() <= 0 || c.download_mean.count() <= 0 ||
                c.arrival_decay.count() <= 0)
                throw ConfigError("durations must be positive");
            if (c.arrivals_per_hour < 0) throw ConfigError("arrival rate must be >= 0");
        }
        if (monitor.vantages < 1 || monitor.min_interval.count() <= 0 || monitor.poll_interval.count() <= 0)
            throw ConfigError("bad monitor settings");
    }
};

// --- config JSON --------------------------------------------------------------

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> keys, const char* where) {
    for (const auto& [k, _] : j.items())
        if (std::find(keys.begin(), keys.end(), k) == keys.end())
            throw ConfigError(std::string("unknown key '") + k + "' in " + where);
}

inline Seconds dur(const nlohmann::json& j, const char* key, Seconds fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return parse_duration(j.at(key).get<std::string>());
    } catch (const std::exception& e) {
        throw ConfigError(std::string("bad duration for ") + key);
    }
}

}  // namespace detail

inline ClassSpec class_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j,
                           {"kind", "count", "counts", "zipf_exponent", "zipf_scale", "torrents_min", "torrents_max",
                            "usernames_per_ip", "ips_min", "ips_max", "isps_max", "window_start", "window_end",
                            "burst", "burst_spacing", "session_mean", "session_min", "sessions_max", "gap_min",
                            "gap_mean", "arrivals_per_hour", "arrival_decay", "peer_session_mean", "download_mean",
                            "downloads_complete"},
                           "publisher class");
    ClassSpec c;
    c.kind = publisher_kind_from_string(j.at("kind").get<std::string>());
    c.count = j.at("count").get<int>();
    c.counts = j.value("counts", std::vector<int>{});
    if (j.contains("zipf_exponent")) c.zipf_exponent = j.at("zipf_exponent").get<double>();
    c.zipf_scale = j.value("zipf_scale", c.zipf_scale);
    c.torrents_min = j.value("torrents_min", c.torrents_min);
    c.torrents_max = j.value("torrents_max", std::max(c.torrents_min, c.torrents_max));
    c.usernames_per_ip = j.value("usernames_per_ip", c.usernames_per_ip);
    c.ips_min = j.value("ips_min", c.ips_min);
    c.ips_max = j.value("ips_max", std::max(c.ips_min, c.ips_max));
    c.isps_max = j.value("isps_max", c.isps_max);
    c.window_start = j.value("window_start", c.window_start);
    c.window_end = j.value("window_end", c.window_end);
    c.burst = j.value("burst", c.burst);
    c.burst_spacing = detail::dur(j, "burst_spacing", c.burst_spacing);
    c.session_mean = detail::dur(j, "session_mean", c.session_mean);
    c.session_min = detail::dur(j, "session_min", c.session_min);
    c.sessions_max = j.value("sessions_max", c.sessions_max);
    c.gap_min = detail::dur(j, "gap_min", c.gap_min);
    c.gap_mean = detail::dur(j, "gap_mean", c.gap_mean);
    c.arrivals_per_hour = j.value("arrivals_per_hour", c.arrivals_per_hour);
    c.arrival_decay = detail::dur(j, "arrival_decay", c.arrival_decay);
    c.peer_session_mean = detail::dur(j, "peer_session_mean", c.peer_session_mean);
    c.download_mean = detail::dur(j, "download_mean", c.download_mean);
    c.downloads_complete = j.value("downloads_complete", c.kind != PublisherKind::fake);
    return c;
}

inline MonitorConfig monitor_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j,
                           {"poll_interval", "first_query_delay", "min_interval", "vantages", "numwant",
                            "probe_timeout_ms", "fetch_retries", "dead_time", "id_retry_window",
                            "empty_replies_to_stop", "max_probe_peers"},
                           "monitor");
    MonitorConfig m;
    m.poll_interval = detail::dur(j, "poll_interval", m.poll_interval);
    m.first_query_delay = detail::dur(j, "first_query_delay", m.first_query_delay);
    m.min_interval = detail::dur(j, "min_interval", m.min_interval);
    m.vantages = j.value("vantages", m.vantages);
    m.numwant = j.value("numwant", m.numwant);
    m.probe_timeout = std::chrono::milliseconds{j.value("probe_timeout_ms", m.probe_timeout.count())};
    m.fetch_retries = j.value("fetch_retries", m.fetch_retries);
    m.dead_time = detail::dur(j, "dead_time", m.dead_time);
    m.id_retry_window = detail::dur(j, "id_retry_window", m.id_retry_window);
    m.empty_replies_to_stop = j.value("empty_replies_to_stop", m.empty_replies_to_stop);
    m.max_probe_peers = j.value("max_probe_peers", m.max_probe_peers);
    return m;
}

inline WorldConfig world_config_from_json(const nlohmann::json& j) {
    try {
        detail::reject_unknown(
            j,
            {"rng_seed", "start", "timeline", "population_cap", "sample_size", "nat_fraction",
             "pre_published_fraction", "late_seed_fraction", "multi_seed_fraction", "removal_fraction",
             "removal_delay", "category_mix", "business_class_mix", "hosting_isps", "commercial_isps",
             "downloader_pool", "feed_window", "portal_id", "feed_url", "tracker_url", "classes", "monitor",
             "comment"},
            "world config");
        WorldConfig w;
        w.rng_seed = j.value("rng_seed", w.rng_seed);
        if (j.contains("start")) w.start = parse_iso8601(j.at("start").get<std::string>());
        w.timeline = detail::dur(j, "timeline", w.timeline);
        w.population_cap = j.value("population_cap", w.population_cap);
        w.sample_size = j.value("sample_size", w.sample_size);
        w.nat_fraction = j.value("nat_fraction", w.nat_fraction);
        w.pre_published_fraction = j.value("pre_published_fraction", w.pre_published_fraction);
        w.late_seed_fraction = j.value("late_seed_fraction", w.late_seed_fraction);
        w.multi_seed_fraction = j.value("multi_seed_fraction", w.multi_seed_fraction);
        w.removal_fraction = j.value("removal_fraction", w.removal_fraction);
        w.removal_delay = detail::dur(j, "removal_delay", w.removal_delay);
        if (j.contains("category_mix")) {
            w.category_mix.clear();
            for (const auto& [k, v] : j.at("category_mix").items()) w.category_mix.emplace_back(k, v.get<double>());
        }
        if (j.contains("business_class_mix"))
            for (const auto& [k, v] : j.at("business_class_mix").items())
                w.business_class_mix.emplace_back(business_class_from_string(k), v.get<double>());
        w.hosting_isps = j.value("hosting_isps", w.hosting_isps);
        w.commercial_isps = j.value("commercial_isps", w.commercial_isps);
        w.downloader_pool = j.value("downloader_pool", w.downloader_pool);
        w.feed_window = j.value("feed_window", w.feed_window);
        w.portal_id = j.value("portal_id", w.portal_id);
        w.feed_url = j.value("feed_url", w.feed_url);
        w.tracker_url = j.value("tracker_url", w.tracker_url);
        for (const auto& c : j.at("classes")) w.classes.push_back(class_from_json(c));
        if (j.contains("monitor")) w.monitor = monitor_from_json(j.at("monitor"));
        w.validate();
        return w;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad world config: ") + e.what());
    } catch (const ParseError& e) {
        throw ConfigError(std::string("bad world config: ") + e.what());
    }
}

inline WorldConfig load_world_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open world config " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("world config is not JSON: " + std::string(e.what()));
    }
    return world_config_from_json(j);
}

// --- world --------------------------------------------------------------------

struct Interval {
    Timestamp start{};
    Timestamp end{};  // exclusive

    [[nodiscard]] bool contains(Timestamp t) const { return start <= t && t < end; }
};

struct SimPeer {
    Endpoint endpoint;
    Timestamp arrive{};
    Timestamp depart{};                   // exclusive
    std::optional<Timestamp> complete_at;  // becomes a seed from here on
    bool nat = false;

    [[nodiscard]] bool present(Timestamp t) const { return arrive <= t && t < depart; }
    [[nodiscard]] bool seed_at(Timestamp t) const { return complete_at && *complete_at <= t; }
};

struct TruthPublisher {
    std::string username;
    int entity = 0;
    PublisherKind kind = PublisherKind::regular;
    std::optional<BusinessClass> business_class;
    std::vector<Ipv4> ips;
    bool nat = false;
    std::optional<Timestamp> removed_at;
    std::string promoted_url;
    std::vector<std::size_t> torrents;
};

struct TruthTorrent {
    std::size_t id = 0;
    std::string infohash;  // hex
    std::size_t publisher = 0;
    Endpoint publisher_endpoint;
    Timestamp birth{};
    std::string title;
    std::string name;
    std::string category;
    std::string subcategory;
    std::string description;
    std::vector<std::string> files;
    std::vector<std::int64_t> file_sizes;
    std::int64_t total_size = 0;
    std::int64_t piece_length = 0;
    std::int64_t piece_count = 0;
    std::vector<Interval> sessions;
    bool pre_published = false;
    bool late_seed = false;
    bool multi_seed = false;
    bool downloads_complete = true;
    std::vector<SimPeer> peers;  // downloaders plus any foreign seeds present at birth

    [[nodiscard]] bool publisher_present(Timestamp t) const {
        return std::any_of(sessions.begin(), sessions.end(), [t](const Interval& i) { return i.contains(t); });
    }
    [[nodiscard]] Timestamp last_activity() const {
        Timestamp last = birth;
        for (const auto& s : sessions) last = std::max(last, s.end);
        for (const auto& p : peers) last = std::max(last, p.depart);
        return last;
    }
    /// Distinct downloader IPs; foreign seeds present at birth are not downloaders of this
    /// publication.
    [[nodiscard]] std::set<Ipv4> downloader_ips() const {
        std::set<Ipv4> out;
        for (const auto& p : peers)
            if (p.arrive >= birth) out.insert(p.endpoint.ip);
        return out;
    }
};

struct IspBlock {
    IspInfo info;
    std::uint32_t next = 1;

    Ipv4 allocate() {
        if (next >= (1u << (32 - info.prefix.prefix_len)) - 1) throw ConfigError("ISP block exhausted");
        return Ipv4{info.prefix.network.value + next++};
    }
};

class World {
public:
    WorldConfig config;
    std::vector<TruthPublisher> publishers;
    std::vector<TruthTorrent> torrents;  // ordered by birth
    std::vector<IspBlock> hosting;
    std::vector<IspBlock> commercial;

    [[nodiscard]] Timestamp end() const { return config.start + config.timeline; }

    [[nodiscard]] const TruthTorrent* find(const std::string& infohash_hex) const {
        auto it = by_hash_.find(infohash_hex);
        return it == by_hash_.end() ? nullptr : &torrents[it->second];
    }

    [[nodiscard]] std::string torrent_url(std::size_t id) const {
        return "http://" + config.portal_id + ".sim/torrent/" + std::to_string(id) + ".torrent";
    }

    [[nodiscard]] GeoDatabase geo() const {
        GeoDatabase db;
        for (const auto& b : hosting) db.insert(b.info);
        for (const auto& b : commercial) db.insert(b.info);
        return db;
    }

    /// The .torrent file for a torrent. Rebuilt on demand; identical on every call.
    [[nodiscard]] Bytes metainfo(const TruthTorrent& t) const {
        bencode::Dict top{{"announce", config.tracker_url}, {"info", info_dict(t)}};
        return bencode::encode(top);
    }

    [[nodiscard]] bencode::Dict info_dict(const TruthTorrent& t) const {
        bencode::Dict info;
        info["name"] = t.name;
        info["piece length"] = t.piece_length;
        std::string pieces;
        pieces.reserve(static_cast<std::size_t>(t.piece_count) * 20);
        std::uint64_t h = mix_seed(config.rng_seed, 0x9e3779b97f4a7c15ULL + t.id);
        while (pieces.size() < static_cast<std::size_t>(t.piece_count) * 20) {
            h = mix_seed(h);
            for (int i = 0; i < 8; ++i) pieces.push_back(static_cast<char>((h >> (8 * i)) & 0xff));
        }
        pieces.resize(static_cast<std::size_t>(t.piece_count) * 20);
        info["pieces"] = pieces;
        if (t.files.size() == 1) {
            info["length"] = t.total_size;
        } else {
            bencode::List files;
            for (std::size_t i = 0; i < t.files.size(); ++i)
                files.push_back(bencode::Dict{{"length", t.file_sizes[i]}, {"path", bencode::List{t.files[i]}}});
            info["files"] = files;
        }
        return info;
    }

    void index() {
        by_hash_.clear();
        for (const auto& t : torrents) by_hash_.emplace(t.infohash, t.id);
    }

private:
    std::unordered_map<std::string, std::size_t> by_hash_;
};

namespace detail {

using Rng = std::mt19937_64;

inline Seconds exp_duration(Rng& rng, Seconds mean) {
    std::exponential_distribution<double> d(1.0 / static_cast<double>(mean.count()));
    return Seconds{static_cast<std::int64_t>(std::llround(d(rng)))};
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

template <typename T>
const T& weighted_pick(Rng& rng, const std::vector<std::pair<T, double>>& mix) {
    double total = 0;
    for (const auto& [_, w] : mix) total += w;
    double x = uniform01(rng) * total;
    for (const auto& entry : mix) {
        if (x < entry.second) return entry.first;
        x -= entry.second;
    }
    return mix.back().first;
}

inline const std::vector<std::string>& title_words() {
    static const std::vector<std::string> words{
        "Red",   "Night",  "River", "Storm",  "Silent", "City",   "Lost",  "Empire", "Shadow", "Golden",
        "Winter", "Dream", "Fire",  "Ocean",  "Broken", "Secret", "Wild",  "Iron",   "Last",   "Blue",
        "Garden", "Road",  "Stone", "Echo",   "Signal", "North",  "Glass", "Hollow", "Crown",  "Harbor"};
    return words;
}

inline std::string make_title(Rng& rng, std::size_t id) {
    const auto& w = title_words();
    auto pick = [&] { return w[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(w.size()) - 1))]; };
    return pick() + "." + pick() + "." + std::to_string(2000 + id % 11) + "." + std::to_string(id);
}

inline std::int64_t pick_piece_length(std::int64_t size) {
    std::int64_t len = 256 * 1024;
    while ((size + len - 1) / len > 1024) len *= 2;
    return len;
}

inline std::string rss_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::vector<int> class_counts(const ClassSpec& c, Rng& rng) {
    std::vector<int> out;
    int usernames = c.kind == PublisherKind::fake ? c.count * c.usernames_per_ip : c.count;
    for (int i = 0; i < usernames; ++i) {
        if (!c.counts.empty() && c.kind != PublisherKind::fake)
            out.push_back(c.counts[static_cast<std::size_t>(i)]);
        else if (c.zipf_exponent)
            out.push_back(std::max(1, static_cast<int>(std::lround(c.zipf_scale / std::pow(i + 1, *c.zipf_exponent)))));
        else
            out.push_back(uniform_int(rng, c.torrents_min, c.torrents_max));
    }
    return out;
}

}  // namespace detail

/// Zipf torrent counts as drawn by the generator: max(1, round(scale / rank^s)).
inline std::vector<int> zipf_counts(int n, double exponent, double scale) {
    ClassSpec c;
    c.count = n;
    c.zipf_exponent = exponent;
    c.zipf_scale = scale;
    detail::Rng unused(0);
    return detail::class_counts(c, unused);
}

/// Builds the whole world. Pure function of the config: same input, same world.
inline World generate_world(const WorldConfig& config) {
    config.validate();
    using detail::exp_duration;
    using detail::uniform01;
    using detail::uniform_int;
    World w;
    w.config = config;
    detail::Rng rng(mix_seed(config.rng_seed));

    static const std::vector<std::pair<std::string, std::string>> places{
        {"FR", "Roubaix"}, {"DE", "Frankfurt"}, {"NL", "Amsterdam"}, {"US", "Dallas"},   {"ES", "Madrid"},
        {"IT", "Milan"},   {"SE", "Stockholm"}, {"GB", "London"},    {"CA", "Montreal"}, {"PL", "Warsaw"}};
    for (int i = 0; i < config.hosting_isps; ++i) {
        const auto& [cc, city] = places[static_cast<std::size_t>(i) % places.size()];
        w.hosting.push_back({IspInfo{Cidr{Ipv4{(10u << 24) | (static_cast<std::uint32_t>(1 + i) << 16)}, 16},
                                     "SimHost-" + std::to_string(i), IspType::hosting, cc, city}});
    }
    for (int i = 0; i < config.commercial_isps; ++i) {
        const auto& [cc, city] = places[static_cast<std::size_t>(i + 3) % places.size()];
        w.commercial.push_back({IspInfo{Cidr{Ipv4{(static_cast<std::uint32_t>(20 + i) << 24)}, 8},
                                        "SimTel-" + std::to_string(i), IspType::commercial, cc, city}});
    }
    auto commercial_ip = [&](int isp) { return w.commercial[static_cast<std::size_t>(isp)].allocate(); };

    // Downloader address pool, shared by every swarm.
    std::vector<Ipv4> pool;
    pool.reserve(static_cast<std::size_t>(config.downloader_pool));
    for (int i = 0; i < config.downloader_pool; ++i) pool.push_back(commercial_ip(i % config.commercial_isps));

    // Publishers.
    struct Pending {
        std::size_t publisher;
        const ClassSpec* spec;
        int count;
    };
    std::vector<Pending> pending;
    int entity = 0;
    std::size_t top_index = 0;
    for (std::size_t ci = 0; ci < config.classes.size(); ++ci) {
        const ClassSpec& c = config.classes[ci];
        std::vector<int> counts = detail::class_counts(c, rng);
        std::size_t next_count = 0;
        for (int p = 0; p < c.count; ++p, ++entity) {
            int n_ips = uniform_int(rng, c.ips_min, c.ips_max);
            std::vector<Ipv4> ips;
            bool nat = false;
            switch (c.kind) {
                case PublisherKind::fake:
                case PublisherKind::top_hosting: {
                    int isp = uniform_int(rng, 0, config.hosting_isps - 1);
                    for (int k = 0; k < n_ips; ++k) ips.push_back(w.hosting[static_cast<std::size_t>(isp)].allocate());
                    break;
                }
                case PublisherKind::top_commercial:
                case PublisherKind::regular: {
                    int spread = uniform_int(rng, 1, std::min(c.isps_max, n_ips));
                    int first = uniform_int(rng, 0, config.commercial_isps - 1);
                    for (int k = 0; k < n_ips; ++k) ips.push_back(commercial_ip((first + k % spread) % config.commercial_isps));
                    nat = uniform01(rng) < config.nat_fraction;
                    break;
                }
            }
            int usernames = c.kind == PublisherKind::fake ? c.usernames_per_ip : 1;
            std::optional<BusinessClass> bclass;
            std::string promoted;
            bool top = c.kind == PublisherKind::top_hosting || c.kind == PublisherKind::top_commercial;
            if (top && !config.business_class_mix.empty()) {
                bclass = detail::weighted_pick(rng, config.business_class_mix);
                if (*bclass != BusinessClass::altruistic)
                    promoted = (*bclass == BusinessClass::bt_portal ? "torrents" : "media") + std::to_string(top_index) +
                               (top_index % 2 ? ".net" : ".com");
                ++top_index;
            }
            for (int u = 0; u < usernames; ++u) {
                TruthPublisher pub;
                pub.username = std::string(to_string(c.kind)) + "_" + std::to_string(entity) +
                               (usernames > 1 ? "_" + std::to_string(u) : "");
                pub.entity = entity;
                pub.kind = c.kind;
                pub.business_class = bclass;
                pub.ips = ips;
                pub.nat = nat;
                pub.promoted_url = promoted;
                pending.push_back({w.publishers.size(), &c, counts[next_count++]});
                w.publishers.push_back(std::move(pub));
            }
        }
    }

    // Publications.
    struct Birth {
        Timestamp at;
        std::size_t publisher;
        const ClassSpec* spec;
        std::size_t seq;
    };
    std::vector<Birth> births;
    for (const auto& p : pending) {
        const ClassSpec& c = *p.spec;
        auto span = static_cast<double>(config.timeline.count());
        int left = p.count;
        while (left > 0) {
            double frac = c.window_start + uniform01(rng) * (c.window_end - c.window_start);
            Timestamp at = config.start + Seconds{static_cast<std::int64_t>(frac * span)};
            for (int b = 0; b < c.burst && left > 0; ++b, --left)
                births.push_back({at + c.burst_spacing * b, p.publisher, &c, births.size()});
        }
    }
    std::sort(births.begin(), births.end(),
              [](const Birth& a, const Birth& b) { return a.at != b.at ? a.at < b.at : a.seq < b.seq; });

    for (const auto& b : births) {
        const ClassSpec& c = *b.spec;
        TruthPublisher& pub = w.publishers[b.publisher];
        TruthTorrent t;
        t.id = w.torrents.size();
        t.publisher = b.publisher;
        t.birth = b.at;
        t.downloads_complete = c.downloads_complete;
        const std::string& cat = detail::weighted_pick(rng, config.category_mix);
        auto slash = cat.find('/');
        t.category = cat.substr(0, slash);
        t.subcategory = slash == std::string::npos ? "" : cat.substr(slash + 1);
        t.title = detail::make_title(rng, t.id);
        t.total_size = static_cast<std::int64_t>(uniform_int(rng, 50, 1400)) * 1024 * 1024 + uniform_int(rng, 0, 1 << 20);
        t.piece_length = detail::pick_piece_length(t.total_size);
        t.piece_count = (t.total_size + t.piece_length - 1) / t.piece_length;
        // Promotion: each channel at random, at least one for promoting publishers.
        bool in_name = false;
        bool in_text = false;
        bool in_file = false;
        if (!pub.promoted_url.empty()) {
            int mask = uniform_int(rng, 1, 7);
            in_name = mask & 1;
            in_text = mask & 2;
            in_file = mask & 4;
        }
        t.name = in_name ? t.title + "-" + pub.promoted_url : t.title;
        t.description = in_text ? "Visit www." + pub.promoted_url + " for more" : "Uploaded by " + pub.username;
        if (in_file) {
            t.files = {t.name + ".avi", "visit www." + pub.promoted_url + ".txt"};
            t.file_sizes = {t.total_size - 64, 64};
        } else {
            t.name += ".avi";
            t.files = {t.name};
            t.file_sizes = {t.total_size};
        }

        Ipv4 ip = pub.ips[t.id % pub.ips.size()];
        t.publisher_endpoint = Endpoint{ip, static_cast<std::uint16_t>(uniform_int(rng, 10000, 60000))};

        // Anomalies at birth (never for fake content: its publisher is the only seed).
        double anomaly = uniform01(rng);
        if (c.kind != PublisherKind::fake) {
            double a = config.pre_published_fraction;
            double l = a + config.late_seed_fraction;
            double m = l + config.multi_seed_fraction;
            t.pre_published = anomaly < a;
            t.late_seed = anomaly >= a && anomaly < l;
            t.multi_seed = anomaly >= l && anomaly < m;
        }

        // Publisher sessions.
        Timestamp s = t.birth;
        if (t.late_seed) s += Minutes{uniform_int(rng, 30, 120)};
        int n_sessions = uniform_int(rng, 1, c.sessions_max);
        for (int k = 0; k < n_sessions; ++k) {
            Seconds len = std::max(c.session_min, exp_duration(rng, c.session_mean));
            t.sessions.push_back({s, s + len});
            s += len + c.gap_min + exp_duration(rng, c.gap_mean);
        }

        auto draw_peer = [&](Timestamp arrive, bool completes, Seconds mean_stay) {
            SimPeer p;
            p.endpoint = Endpoint{pool[static_cast<std::size_t>(uniform_int(rng, 0, config.downloader_pool - 1))],
                                  static_cast<std::uint16_t>(uniform_int(rng, 1024, 65535))};
            p.arrive = arrive;
            p.depart = arrive + std::max<Seconds>(Minutes{5}, exp_duration(rng, mean_stay));
            p.nat = uniform01(rng) < config.nat_fraction;
            if (completes) {
                Timestamp done = arrive + std::max<Seconds>(Minutes{20}, exp_duration(rng, c.download_mean));
                if (done < p.depart) p.complete_at = done;
            }
            return p;
        };

        // Pre-published swarms already hold a crowd, several of them seeds.
        if (t.pre_published) {
            int crowd = uniform_int(rng, 25, 45);
            for (int k = 0; k < crowd; ++k) {
                Timestamp arrive = t.birth - Minutes{uniform_int(rng, 30, 600)};
                SimPeer p = draw_peer(arrive, true, c.peer_session_mean);
                p.depart = std::max(p.depart, t.birth + Hours{2} + Minutes{uniform_int(rng, 0, 120)});
                if (k < 4) p.complete_at = arrive;
                t.peers.push_back(p);
            }
        }
        if (t.multi_seed) {
            // A second copy seeded from elsewhere at the same time.
            SimPeer p = draw_peer(t.birth, false, c.session_mean);
            p.complete_at = p.arrive;
            p.nat = false;
            t.peers.push_back(p);
        }

        // Downloaders: Poisson arrivals with exponentially decaying rate, thinned by the
        // population cap.
        {
            double rate0 = c.arrivals_per_hour / 3600.0;
            double decay = static_cast<double>(c.arrival_decay.count());
            double horizon = 4.0 * decay;
            double tsec = 0;
            std::priority_queue<Timestamp, std::vector<Timestamp>, std::greater<>> departures;
            for (const auto& p : t.peers) departures.push(p.depart);
            while (rate0 > 0) {
                tsec += std::exponential_distribution<double>(rate0)(rng);
                if (tsec > horizon) break;
                if (uniform01(rng) > std::exp(-tsec / decay)) continue;
                Timestamp arrive = t.birth + Seconds{static_cast<std::int64_t>(tsec)};
                while (!departures.empty() && departures.top() <= arrive) departures.pop();
                if (static_cast<int>(departures.size()) + 1 >= config.population_cap) continue;
                SimPeer p = draw_peer(arrive, c.downloads_complete, c.peer_session_mean);
                departures.push(p.depart);
                t.peers.push_back(p);
            }
        }

        pub.torrents.push_back(t.id);
        t.infohash = to_hex(bencode::infohash(bencode::encode(w.info_dict(t))));
        w.torrents.push_back(std::move(t));
    }

    // Portal removals of fake accounts.
    for (auto& pub : w.publishers) {
        if (pub.kind != PublisherKind::fake || pub.torrents.empty()) continue;
        if (uniform01(rng) < config.removal_fraction)
            pub.removed_at = w.torrents[pub.torrents.front()].birth + config.removal_delay;
    }
    w.index();
    return w;
}

// --- tracker side -------------------------------------------------------------

struct SwarmState {
    std::vector<Endpoint> present;  // publisher first when present
    std::int64_t seeders = 0;
    std::int64_t leechers = 0;
};

inline SwarmState swarm_state(const TruthTorrent& t, Timestamp now) {
    SwarmState s;
    if (t.publisher_present(now)) {
        s.present.push_back(t.publisher_endpoint);
        ++s.seeders;
    }
    for (const auto& p : t.peers) {
        if (!p.present(now)) continue;
        s.present.push_back(p.endpoint);
        if (p.seed_at(now))
            ++s.seeders;
        else
            ++s.leechers;
    }
    return s;
}

/// Uniform sample without replacement of min(W, population) peers.
inline std::vector<Endpoint> sample_peers(const std::vector<Endpoint>& present, int sample_size, std::mt19937_64& rng) {
    std::vector<Endpoint> out;
    std::sample(present.begin(), present.end(), std::back_inserter(out),
                static_cast<std::size_t>(std::max(0, sample_size)), rng);
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

/// One tracker reply for the swarm at `now`.
inline AnnounceResult sim_announce(const World& world, const std::string& infohash_hex, Timestamp now, int sample_size,
                                   std::mt19937_64& rng) {
    const TruthTorrent* t = world.find(infohash_hex);
    if (!t || now < t->birth) throw TrackerError("torrent not found");
    SwarmState s = swarm_state(*t, now);
    AnnounceResult r;
    r.seeders = s.seeders;
    r.leechers = s.leechers;
    r.interval_s = std::chrono::duration_cast<Seconds>(world.config.monitor.min_interval).count();
    r.peers = sample_peers(s.present, sample_size, rng);
    r.received_at = now;
    return r;
}

/// Moves the world clock forward. The world itself is a function of time, so this is
/// all there is to advancing it.
inline void advance(VirtualTime& clock, Seconds dt) {
    if (dt.count() <= 0) throw std::domain_error("advance: dt must be positive");
    clock.sleep_until(clock.now() + dt);
}

struct QueryLogEntry {
    std::string peer_id;
    std::string infohash;
    Timestamp at{};
};

/// HTTP side of the world: portal feed, .torrent downloads and the tracker.
class SimTransport final : public Transport {
public:
    SimTransport(const World& world, const TimeSource& clock) : world_(world), clock_(clock) {}

    bool fail_tracker = false;   // every announce fails at transport level
    bool fail_feed = false;
    std::set<std::size_t> missing_torrents;  // answer 404
    std::set<std::size_t> corrupt_torrents;  // serve garbage

    HttpResponse get(const std::string& full_url, std::chrono::milliseconds) override {
        Timestamp now = clock_.now();
        if (full_url == world_.config.feed_url) {
            if (fail_feed) throw TransportError("feed unreachable");
            return {200, feed(now)};
        }
        if (full_url.rfind(world_.config.tracker_url, 0) == 0) return tracker(full_url, now);
        const std::string prefix = world_.torrent_url(0).substr(0, world_.torrent_url(0).rfind('/') + 1);
        if (full_url.rfind(prefix, 0) == 0) {
            std::size_t id = 0;
            try {
                id = std::stoul(full_url.substr(prefix.size()));
            } catch (const std::logic_error&) {
                return {404, "not found"};
            }
            if (id >= world_.torrents.size() || world_.torrents[id].birth > now || missing_torrents.contains(id))
                return {404, "not found"};
            if (corrupt_torrents.contains(id)) return {200, "d8:announce3:abc"};
            return {200, world_.metainfo(world_.torrents[id])};
        }
        throw TransportError("no route to " + full_url);
    }

    [[nodiscard]] std::vector<QueryLogEntry> query_log() const {
        std::lock_guard lock(mu_);
        return log_;
    }

    /// Feed page at `now`: the newest items first, at most feed_window of them.
    [[nodiscard]] std::string feed(Timestamp now) const {
        auto published = static_cast<std::size_t>(
            std::upper_bound(world_.torrents.begin(), world_.torrents.end(), now,
                             [](Timestamp t, const TruthTorrent& x) { return t < x.birth; }) -
            world_.torrents.begin());
        std::lock_guard lock(mu_);
        if (published == cached_count_ && !cached_feed_.empty()) return cached_feed_;
        std::string xml = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<rss version=\"2.0\"><channel><title>" +
                          world_.config.portal_id + "</title>\n";
        std::size_t lo = published > static_cast<std::size_t>(world_.config.feed_window)
                             ? published - static_cast<std::size_t>(world_.config.feed_window)
                             : 0;
        for (std::size_t i = published; i-- > lo;) {
            const auto& t = world_.torrents[i];
            const auto& pub = world_.publishers[t.publisher];
            xml += "<item><title>" + detail::rss_escape(t.title) + "</title><category>" + detail::rss_escape(t.category) +
                   "</category><subcategory>" + detail::rss_escape(t.subcategory) + "</subcategory><author>" +
                   detail::rss_escape(pub.username) + "</author><size>" + std::to_string(t.total_size) +
                   "</size><enclosure url=\"" + detail::rss_escape(world_.torrent_url(t.id)) +
                   "\" type=\"application/x-bittorrent\"/><pubDate>" + format_rfc822(t.birth) +
                   "</pubDate><description>" + detail::rss_escape(t.description) + "</description></item>\n";
        }
        xml += "</channel></rss>\n";
        cached_count_ = published;
        cached_feed_ = xml;
        return xml;
    }

private:
    HttpResponse tracker(const std::string& full_url, Timestamp now) {
        if (fail_tracker) throw TransportError("tracker unreachable");
        url::Parts parts = url::split(full_url);
        auto ih = parts.query.find("info_hash");
        auto pid = parts.query.find("peer_id");
        if (ih == parts.query.end() || pid == parts.query.end() || ih->second.size() != 20)
            return {200, serialize_tracker_failure("invalid request")};
        std::string hex = to_hex(ih->second);
        int numwant = default_numwant;
        if (auto nw = parts.query.find("numwant"); nw != parts.query.end()) numwant = std::stoi(nw->second);
        std::uint64_t n;
        {
            std::lock_guard lock(mu_);
            log_.push_back({pid->second, hex, now});
            n = counters_[hex]++;
        }
        const TruthTorrent* t = world_.find(hex);
        if (!t || now < t->birth) return {200, serialize_tracker_failure("torrent not found")};
        std::mt19937_64 rng(mix_seed(world_.config.rng_seed, mix_seed(t->id, n)));
        AnnounceResult r =
            sim_announce(world_, hex, now, std::min(numwant, world_.config.sample_size), rng);
        return {200, serialize_announce_response(r)};
    }

    const World& world_;
    const TimeSource& clock_;
    mutable std::mutex mu_;
    std::vector<QueryLogEntry> log_;
    std::unordered_map<std::string, std::uint64_t> counters_;
    mutable std::size_t cached_count_ = 0;
    mutable std::string cached_feed_;
};

/// Peer side: answers handshakes as the simulated peer would. NATed or absent peers
/// refuse connections. Everything the prober writes is recorded.
class SimPeerDialer final : public PeerDialer {
public:
    SimPeerDialer(const World& world, const TimeSource& clock) : world_(world), clock_(clock) {
        for (const auto& t : world.torrents) {
            by_endpoint_[key(t.publisher_endpoint)].push_back({t.id, -1});
            for (std::size_t i = 0; i < t.peers.size(); ++i)
                by_endpoint_[key(t.peers[i].endpoint)].push_back({t.id, static_cast<std::int64_t>(i)});
        }
    }

    struct Written {
        Endpoint endpoint;
        Bytes bytes;
    };

    DialResult dial(const Endpoint& ep, std::chrono::milliseconds) override {
        Timestamp now = clock_.now();
        auto it = by_endpoint_.find(key(ep));
        if (it == by_endpoint_.end()) return {DialStatus::refused, nullptr};
        std::vector<Slot> live;
        for (const auto& slot : it->second) {
            const auto& t = world_.torrents[slot.torrent];
            if (slot.peer < 0) {
                if (t.publisher_present(now) && !world_.publishers[t.publisher].nat) live.push_back(slot);
            } else {
                const auto& p = t.peers[static_cast<std::size_t>(slot.peer)];
                if (p.present(now) && !p.nat) live.push_back(slot);
            }
        }
        if (live.empty()) return {DialStatus::refused, nullptr};
        return {DialStatus::connected, std::make_unique<Connection>(*this, ep, std::move(live), now)};
    }

    [[nodiscard]] std::vector<Written> written() const {
        std::lock_guard lock(mu_);
        return written_;
    }

private:
    struct Slot {
        std::size_t torrent;
        std::int64_t peer;  // -1: the publisher
    };

    static std::uint64_t key(const Endpoint& e) { return (static_cast<std::uint64_t>(e.ip.value) << 16) | e.port; }

    class Connection final : public PeerConnection {
    public:
        Connection(SimPeerDialer& owner, Endpoint ep, std::vector<Slot> slots, Timestamp now)
            : owner_(owner), ep_(ep), slots_(std::move(slots)), now_(now) {}

        ~Connection() override {
            std::lock_guard lock(owner_.mu_);
            owner_.written_.push_back({ep_, sent_});
        }

        void send(std::string_view bytes) override {
            sent_.append(bytes);
            if (outbox_.empty() && sent_.size() >= wire::handshake_size) respond();
        }

        std::optional<Bytes> receive(std::size_t n, std::chrono::milliseconds) override {
            if (pos_ + n > outbox_.size()) {
                if (closed_) throw TransportError("peer closed connection");
                return std::nullopt;
            }
            Bytes out = outbox_.substr(pos_, n);
            pos_ += n;
            return out;
        }

    private:
        void respond() {
            auto hs = wire::parse_handshake(std::string_view(sent_).substr(0, wire::handshake_size));
            closed_ = true;
            if (!hs) return;
            std::string hex = to_hex(hs->infohash);
            for (const auto& slot : slots_) {
                const auto& t = owner_.world_.torrents[slot.torrent];
                if (t.infohash != hex) continue;
                std::int64_t have = t.piece_count;
                if (slot.peer >= 0) {
                    const auto& p = t.peers[static_cast<std::size_t>(slot.peer)];
                    if (!p.seed_at(now_)) {
                        Timestamp goal = p.complete_at.value_or(p.depart);
                        double frac = static_cast<double>((now_ - p.arrive).count()) /
                                      static_cast<double>(std::max<std::int64_t>(1, (goal - p.arrive).count()));
                        if (!p.complete_at) frac *= 0.95;
                        have = std::min(t.piece_count - 1,
                                        static_cast<std::int64_t>(std::floor(frac * static_cast<double>(t.piece_count))));
                        have = std::max<std::int64_t>(0, have);
                    }
                }
                Bytes peer_id = "-SM0001-" + std::string(12, 'x');
                outbox_ = wire::encode_handshake(hs->infohash, peer_id) +
                          wire::encode_message(wire::msg_bitfield, wire::make_bitfield(t.piece_count, have));
                return;
            }
        }

        SimPeerDialer& owner_;
        Endpoint ep_;
        std::vector<Slot> slots_;
        Timestamp now_;
        Bytes sent_;
        Bytes outbox_;
        std::size_t pos_ = 0;
        bool closed_ = false;
    };

    const World& world_;
    const TimeSource& clock_;
    std::unordered_map<std::uint64_t, std::vector<Slot>> by_endpoint_;
    mutable std::mutex mu_;
    std::vector<Written> written_;
};

/// Portal removals taken from ground truth.
class SimRemovalSource final : public RemovalSource {
public:
    explicit SimRemovalSource(const World& world) {
        for (const auto& p : world.publishers)
            if (p.removed_at) pending_.push_back({world.config.portal_id, p.username, *p.removed_at});
        std::sort(pending_.begin(), pending_.end(), [](const PortalRemoval& a, const PortalRemoval& b) {
            return a.removed_at != b.removed_at ? a.removed_at < b.removed_at : a.username < b.username;
        });
    }

    std::vector<PortalRemoval> poll(Timestamp now) override {
        std::vector<PortalRemoval> out;
        while (next_ < pending_.size() && pending_[next_].removed_at <= now) out.push_back(pending_[next_++]);
        return out;
    }

private:
    std::vector<PortalRemoval> pending_;
    std::size_t next_ = 0;
};

// --- ground truth export ------------------------------------------------------

inline PortalProfile portal_profile(const World& world) {
    PortalProfile p;
    p.portal_id = world.config.portal_id;
    p.feed_url = world.config.feed_url;
    return p;
}

/// Ground truth as JSON lines: one "publisher" line per username, then one "torrent"
/// line per publication. Keys are sorted, so equal worlds give equal bytes.
inline void write_ground_truth(const World& w, std::ostream& out) {
    for (const auto& p : w.publishers) {
        nlohmann::json ips = nlohmann::json::array();
        for (const auto& ip : p.ips) ips.push_back(ip.to_string());
        nlohmann::json j = {{"type", "publisher"},
                            {"username", p.username},
                            {"entity", p.entity},
                            {"kind", to_string(p.kind)},
                            {"business_class", p.business_class ? nlohmann::json(to_string(*p.business_class))
                                                                : nlohmann::json(nullptr)},
                            {"ips", ips},
                            {"nat", p.nat},
                            {"fake", p.kind == PublisherKind::fake},
                            {"removed_at", p.removed_at ? nlohmann::json(format_iso8601(*p.removed_at))
                                                        : nlohmann::json(nullptr)},
                            {"promoted_url", p.promoted_url},
                            {"torrent_count", p.torrents.size()}};
        out << j.dump() << '\n';
    }
    for (const auto& t : w.torrents) {
        nlohmann::json sessions = nlohmann::json::array();
        for (const auto& s : t.sessions) sessions.push_back({format_iso8601(s.start), format_iso8601(s.end)});
        nlohmann::json downloaders = nlohmann::json::array();
        for (const auto& ip : t.downloader_ips()) downloaders.push_back(ip.to_string());
        nlohmann::json j = {{"type", "torrent"},
                            {"id", t.id},
                            {"infohash", t.infohash},
                            {"username", w.publishers[t.publisher].username},
                            {"publisher_ip", t.publisher_endpoint.ip.to_string()},
                            {"publisher_endpoint", t.publisher_endpoint.to_string()},
                            {"nat", w.publishers[t.publisher].nat},
                            {"birth", format_iso8601(t.birth)},
                            {"torrent_url", w.torrent_url(t.id)},
                            {"name", t.name},
                            {"category", t.category},
                            {"subcategory", t.subcategory},
                            {"total_size", t.total_size},
                            {"piece_count", t.piece_count},
                            {"sessions", sessions},
                            {"pre_published", t.pre_published},
                            {"late_seed", t.late_seed},
                            {"multi_seed", t.multi_seed},
                            {"peer_arrivals", t.peers.size()},
                            {"downloaders", downloaders}};
        out << j.dump() << '\n';
    }
}

/// username -> business class, for the analytics annotation input.
inline nlohmann::json annotations(const World& w) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& p : w.publishers)
        if (p.business_class) j[p.username] = to_string(*p.business_class);
    return j;
}

// --- running the monitor against the world -----------------------------------

struct SimulationResult {
    MonitorStats stats;
    std::vector<QueryLogEntry> query_log;
    std::vector<std::string> vantage_peer_ids;
    std::vector<SimPeerDialer::Written> probe_writes;
};

/// Runs the full monitor pipeline over the world in virtual time, writing events to `sink`.
inline SimulationResult run_simulation(const World& world, EventSink& sink,
                                       std::optional<MonitorConfig> monitor = std::nullopt) {
    MonitorConfig cfg = monitor.value_or(world.config.monitor);
    VirtualTime clock(world.config.start);
    SimTransport transport(world, clock);
    SimPeerDialer dialer(world, clock);
    SimRemovalSource removals(world);
    IngestState state;
    Monitor m(portal_profile(world), cfg, transport, dialer, clock, sink, state, &removals);
    SimulationResult r;
    Timestamp stop_polling = world.end() + cfg.poll_interval;
    for (const auto& p : world.publishers)
        if (p.removed_at) stop_polling = std::max(stop_polling, *p.removed_at);
    r.stats = m.run(stop_polling, world.end() + Hours{24 * 60});
    r.query_log = transport.query_log();
    for (const auto& v : m.vantages()) r.vantage_peer_ids.push_back(v.peer_id);
    r.probe_writes = dialer.written();
    return r;
}

}  // namespace pubmon::sim
