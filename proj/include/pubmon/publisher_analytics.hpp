#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "pubmon/geoip.hpp"
#include "pubmon/records.hpp"
#include "pubmon/session_model.hpp"
#include "pubmon/store.hpp"

namespace pubmon {

// ---------------------------------------------------------------------------
// Promoted URLs

enum class UrlChannel { filename, textbox, bundled_file };

inline const char* to_string(UrlChannel c) {
    switch (c) {
        case UrlChannel::filename: return "filename";
        case UrlChannel::textbox: return "textbox";
        case UrlChannel::bundled_file: return "bundled_file";
    }
    return "?";
}

struct UrlHit {
    std::string domain;
    UrlChannel channel;
    auto operator<=>(const UrlHit&) const = default;
};

namespace detail {

// Suffixes accepted as the end of a domain. Short country codes that double as common
// words in release names ("in", "it", "to", "me", "is", ...) are deliberately absent.
inline const std::set<std::string>& tlds() {
    static const std::set<std::string> s{"com", "net", "org", "info", "biz", "tv",  "ws",  "cc", "eu", "es",
                                         "fr",  "de",  "ru",  "se",   "nl",  "pl",  "cz",  "pt", "ro", "hu",
                                         "gr",  "ch",  "dk",  "fi",   "uk",  "br",  "ar",  "mx", "au", "ca"};
    return s;
}

inline const std::set<std::string>& second_level() {
    static const std::set<std::string> s{"co.uk", "org.uk", "com.br", "com.ar", "com.mx", "com.au"};
    return s;
}

inline bool label_ok(std::string_view l) {
    if (l.empty() || l.size() > 63 || l.front() == '-' || l.back() == '-') return false;
    bool alpha = false;
    for (char c : l) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-')) return false;
        if (std::isalpha(static_cast<unsigned char>(c))) alpha = true;
    }
    return alpha;
}

/// Registrable domain inside one dot-separated token, or empty.
inline std::string domain_in_token(std::string token) {
    std::transform(token.begin(), token.end(), token.begin(), [](unsigned char c) { return std::tolower(c); });
    std::vector<std::string> labels;
    std::size_t start = 0;
    while (start <= token.size()) {
        auto dot = token.find('.', start);
        if (dot == std::string::npos) dot = token.size();
        labels.push_back(token.substr(start, dot - start));
        start = dot + 1;
    }
    // Rightmost label that is a known suffix with a usable label before it. Anything
    // after it (".avi", ".txt") is a file extension.
    for (std::size_t i = labels.size(); i-- > 1;) {
        if (!tlds().contains(labels[i])) continue;
        std::size_t first = i - 1;
        if (i >= 2 && second_level().contains(labels[i - 1] + "." + labels[i])) first = i - 2;
        if (!label_ok(labels[first]) || labels[first] == "www" || labels[first].size() < 2) continue;
        std::string out = labels[first];
        for (std::size_t k = first + 1; k <= i; ++k) out += "." + labels[k];
        return out;
    }
    return {};
}

inline std::vector<std::string> tokens(std::string_view text, std::string_view separators) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (separators.find(c) != std::string_view::npos || std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

}  // namespace detail

/// Domain-shaped tokens in a file name: '-' and '_' separate words there, so
/// "movie-divxatope.com.avi" yields divxatope.com.
inline std::set<std::string> extract_domains(std::string_view text, UrlChannel channel) {
    // In free text hyphens belong to host names; in file names they are word breaks.
    std::string_view seps = channel == UrlChannel::textbox ? "/:,;()[]{}<>\"'!?|@=&" : "-_/:,;()[]{}<>\"'!?|@=&+";
    std::set<std::string> out;
    for (auto& tok : detail::tokens(text, seps)) {
        while (!tok.empty() && tok.back() == '.') tok.pop_back();
        auto d = detail::domain_in_token(tok);
        if (!d.empty()) out.insert(d);
    }
    return out;
}

inline std::set<UrlHit> extract_urls(std::string_view name, std::string_view description,
                                     const std::vector<std::string>& bundled_filenames) {
    std::set<UrlHit> hits;
    for (auto& d : extract_domains(name, UrlChannel::filename)) hits.insert({d, UrlChannel::filename});
    for (auto& d : extract_domains(description, UrlChannel::textbox)) hits.insert({d, UrlChannel::textbox});
    for (const auto& f : bundled_filenames) {
        // Only the file's own name; directories are part of the torrent name.
        std::string_view base = f;
        if (auto slash = base.rfind('/'); slash != std::string_view::npos) base = base.substr(slash + 1);
        for (auto& d : extract_domains(base, UrlChannel::bundled_file)) hits.insert({d, UrlChannel::bundled_file});
    }
    return hits;
}

// ---------------------------------------------------------------------------
// Records

enum class MultiIpCase { single_ip, few_hosting, single_commercial_isp, multi_commercial_isp };

inline const char* to_string(MultiIpCase c) {
    switch (c) {
        case MultiIpCase::single_ip: return "single_ip";
        case MultiIpCase::few_hosting: return "few_hosting";
        case MultiIpCase::single_commercial_isp: return "single_commercial_isp";
        case MultiIpCase::multi_commercial_isp: return "multi_commercial_isp";
    }
    return "?";
}

/// One publication as reconstructed from the log.
struct TorrentRecord {
    FeedItem item;
    Timestamp detected_at{};
    std::optional<std::string> infohash;
    std::string name;
    std::vector<std::string> file_names;
    std::optional<Ipv4> identified_ip;
    std::optional<NoIpReason> reason_no_ip;
    std::optional<TerminalKind> terminal;
    std::set<Ipv4> downloaders;
    std::vector<Timestamp> publisher_seen;  // snapshot times with a publisher IP in the peer list
    std::int64_t snapshot_count = 0;
    std::vector<SessionRecord> sessions;
};

struct PublisherRecord {
    std::string username;
    std::set<Ipv4> ip_set;
    std::vector<std::size_t> torrents;  // indices into Dataset::torrents, publication order
    std::int64_t downloads_attracted = 0;
    bool fake = false;
    bool top = false;
    bool removed_by_portal = false;
    std::optional<Timestamp> removed_at;
    std::map<Ipv4, IspInfo> isp;  // per identified IP
    IspType isp_class = IspType::unknown;
    std::optional<MultiIpCase> multi_ip_case;
    std::optional<BusinessClass> business_class;
    std::set<UrlHit> promoted_urls;
    std::vector<SessionRecord> sessions;  // all torrents

    // Seeding signature; nullopt when no session was observed.
    std::optional<double> avg_seeding_time_s;
    std::optional<double> parallel_torrents;
    std::optional<double> aggregated_session_s;
    std::optional<double> popularity;  // mean downloaders per monitored torrent

    [[nodiscard]] std::size_t torrent_count() const { return torrents.size(); }
};

struct AnalyticsOptions {
    DiscoveryModel model;
    int fake_threshold = 5;
    int top_k = 100;
    Seconds tick = Minutes{1};
    std::set<Ipv4> exclude_ips;  // the crawler's own addresses, if the tracker echoes them
    std::map<std::string, BusinessClass> annotations;
    int seeding_sample = 0;  // >0: seeding metrics for this many random publishers only
    std::uint64_t sample_seed = 1;
};

struct Dataset {
    std::vector<TorrentRecord> torrents;
    std::vector<PublisherRecord> publishers;  // sorted by username
    std::map<std::string, std::size_t> by_username;
    std::vector<PortalRemoval> removals;
    Seconds threshold{};

    [[nodiscard]] const PublisherRecord* find(const std::string& username) const {
        auto it = by_username.find(username);
        return it == by_username.end() ? nullptr : &publishers[it->second];
    }
};

inline std::optional<MultiIpCase> classify_multi_ip(const PublisherRecord& r, const GeoDatabase& geo) {
    if (r.ip_set.empty()) return std::nullopt;
    if (r.ip_set.size() == 1) return MultiIpCase::single_ip;
    int hosting = 0;
    int commercial = 0;
    std::set<std::string> commercial_isps;
    for (const auto& ip : r.ip_set) {
        IspInfo info = geo.lookup(ip);
        if (info.isp_type == IspType::hosting) ++hosting;
        if (info.isp_type == IspType::commercial) {
            ++commercial;
            commercial_isps.insert(info.isp_name);
        }
    }
    if (hosting + commercial == 0) return std::nullopt;
    if (commercial == 0) return MultiIpCase::few_hosting;
    if (hosting == 0)
        return commercial_isps.size() == 1 ? MultiIpCase::single_commercial_isp : MultiIpCase::multi_commercial_isp;
    return hosting > commercial ? MultiIpCase::few_hosting : MultiIpCase::multi_commercial_isp;
}

/// Majority ISP type of the identified IPs; unknown IPs do not vote, ties go to commercial.
inline IspType majority_isp_class(const PublisherRecord& r) {
    int hosting = 0;
    int commercial = 0;
    for (const auto& [_, info] : r.isp) {
        if (info.isp_type == IspType::hosting) ++hosting;
        if (info.isp_type == IspType::commercial) ++commercial;
    }
    if (hosting + commercial == 0) return IspType::unknown;
    return hosting > commercial ? IspType::hosting : IspType::commercial;
}

/// Marks as fake every username sharing an IP with at least `threshold - 1` other
/// usernames, and every account the portal removed. Clears previous flags first.
inline void flag_fake(std::vector<PublisherRecord>& records, int username_threshold = 5) {
    if (username_threshold < 2) throw std::domain_error("flag_fake: threshold must be >= 2");
    std::map<Ipv4, std::set<std::string>> users_by_ip;
    for (const auto& r : records)
        for (const auto& ip : r.ip_set) users_by_ip[ip].insert(r.username);
    std::set<std::string> fake;
    for (const auto& [ip, users] : users_by_ip)
        if (static_cast<int>(users.size()) >= username_threshold) fake.insert(users.begin(), users.end());
    for (auto& r : records) {
        r.fake = r.removed_by_portal || fake.contains(r.username);
        if (r.fake) r.top = false;
    }
}

/// The k usernames with most torrents (ties: more downloads, then name), minus the fakes
/// among them. Sets the `top` flag and returns the members in rank order.
inline std::vector<std::string> rank_top(std::vector<PublisherRecord>& records, int k = 100) {
    if (k < 1) throw std::domain_error("rank_top: k must be >= 1");
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&records](std::size_t a, std::size_t b) {
        const auto& x = records[a];
        const auto& y = records[b];
        if (x.torrent_count() != y.torrent_count()) return x.torrent_count() > y.torrent_count();
        if (x.downloads_attracted != y.downloads_attracted) return x.downloads_attracted > y.downloads_attracted;
        return x.username < y.username;
    });
    for (auto& r : records) r.top = false;
    std::vector<std::string> top;
    for (std::size_t i = 0; i < order.size() && i < static_cast<std::size_t>(k); ++i) {
        auto& r = records[order[i]];
        if (r.fake) continue;
        r.top = true;
        top.push_back(r.username);
    }
    return top;
}

/// Share of content held by the top x% of publishers, x = 1..100. The top x% are the
/// ceil(x * n / 100) largest contributors.
inline std::vector<std::pair<int, double>> contribution_curve(std::vector<std::int64_t> counts) {
    if (counts.empty()) throw std::domain_error("contribution_curve: no publishers");
    std::sort(counts.begin(), counts.end(), std::greater<>());
    std::vector<std::int64_t> prefix(counts.size() + 1, 0);
    for (std::size_t i = 0; i < counts.size(); ++i) prefix[i + 1] = prefix[i] + counts[i];
    const auto n = static_cast<std::int64_t>(counts.size());
    const auto total = static_cast<double>(prefix.back());
    std::vector<std::pair<int, double>> curve;
    for (int x = 1; x <= 100; ++x) {
        std::int64_t k = (x * n + 99) / 100;
        curve.emplace_back(x, total > 0 ? static_cast<double>(prefix[static_cast<std::size_t>(k)]) / total : 0.0);
    }
    return curve;
}

inline std::vector<std::pair<int, double>> contribution_curve(const std::vector<PublisherRecord>& records) {
    std::vector<std::int64_t> counts;
    for (const auto& r : records) counts.push_back(static_cast<std::int64_t>(r.torrent_count()));
    return contribution_curve(std::move(counts));
}

/// Nearest-rank percentile: the value at rank ceil(p/100 * n) of the sorted sample.
inline double percentile_nearest_rank(std::vector<double> v, double p) {
    if (v.empty()) throw std::domain_error("percentile of empty sample");
    std::sort(v.begin(), v.end());
    auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size())));
    rank = std::clamp<std::size_t>(rank, 1, v.size());
    return v[rank - 1];
}

struct Quartiles {
    double p25 = 0;
    double p50 = 0;
    double p75 = 0;
};

inline Quartiles quartiles(const std::vector<double>& v) {
    return {percentile_nearest_rank(v, 25), percentile_nearest_rank(v, 50), percentile_nearest_rank(v, 75)};
}

/// Quartiles over publishers of the mean number of downloaders per torrent.
inline Quartiles popularity_stats(const std::vector<const PublisherRecord*>& group) {
    std::vector<double> v;
    for (const auto* r : group)
        if (r->popularity) v.push_back(*r->popularity);
    if (v.empty()) throw std::domain_error("popularity_stats: empty group");
    return quartiles(v);
}

struct Longitudinal {
    std::int64_t lifetime_days = 1;
    double publish_rate = 0;  // torrents per day
};

inline Longitudinal longitudinal(std::span<const Timestamp> published) {
    if (published.empty()) throw std::domain_error("longitudinal: no publications");
    auto [lo, hi] = std::minmax_element(published.begin(), published.end());
    std::int64_t days = (*hi - *lo).count() / 86400;
    Longitudinal l;
    l.lifetime_days = std::max<std::int64_t>(1, days);
    l.publish_rate = static_cast<double>(published.size()) / static_cast<double>(l.lifetime_days);
    return l;
}

inline Longitudinal longitudinal(const PublisherRecord& r, const Dataset& d) {
    std::vector<Timestamp> ts;
    for (auto i : r.torrents) ts.push_back(d.torrents[i].item.published_at);
    return longitudinal(ts);
}

// ---------------------------------------------------------------------------
// Building the dataset from the log

namespace detail {

inline void compute_seeding(PublisherRecord& r, Dataset& d, const AnalyticsOptions& opt) {
    r.sessions.clear();
    Seconds per_torrent_total{0};
    int seeded = 0;
    for (auto i : r.torrents) {
        auto& t = d.torrents[i];
        t.sessions.clear();
        if (!t.infohash || t.publisher_seen.empty()) continue;
        std::sort(t.publisher_seen.begin(), t.publisher_seen.end());
        t.publisher_seen.erase(std::unique(t.publisher_seen.begin(), t.publisher_seen.end()), t.publisher_seen.end());
        t.sessions = reconstruct_sessions(t.publisher_seen, d.threshold, r.username, *t.infohash);
        per_torrent_total += seeding_time(t.sessions);
        ++seeded;
        r.sessions.insert(r.sessions.end(), t.sessions.begin(), t.sessions.end());
    }
    if (seeded == 0) {
        r.avg_seeding_time_s.reset();
        r.parallel_torrents.reset();
        r.aggregated_session_s.reset();
        return;
    }
    r.avg_seeding_time_s = static_cast<double>(per_torrent_total.count()) / seeded;
    r.parallel_torrents = parallel_torrents(r.sessions, opt.tick);
    r.aggregated_session_s = static_cast<double>(aggregated_session_time(r.sessions).count());
}

}  // namespace detail

/// One record per username, built purely from the event log.
inline Dataset resolve_identities(const std::vector<EventRecord>& events, const GeoDatabase& geo,
                                  const AnalyticsOptions& opt = {}) {
    opt.model.validate();
    Dataset d;
    d.threshold = opt.model.offline_threshold();
    std::unordered_map<std::string, std::size_t> by_item;  // portal|url
    std::unordered_map<std::string, std::size_t> by_hash;
    std::map<std::string, Timestamp> removed;

    for (const auto& e : events) {
        if (const auto* f = std::get_if<FeedItem>(&e.payload)) {
            if (by_item.contains(f->identity())) continue;
            by_item.emplace(f->identity(), d.torrents.size());
            TorrentRecord t;
            t.item = *f;
            t.detected_at = e.ts;
            d.torrents.push_back(std::move(t));
        } else if (const auto* r = std::get_if<PortalRemoval>(&e.payload)) {
            d.removals.push_back(*r);
            removed.try_emplace(r->username, r->removed_at);
        }
    }
    for (const auto& e : events) {
        if (const auto* id = std::get_if<IdentificationRecord>(&e.payload)) {
            auto it = by_item.find(id->portal_id + '|' + id->torrent_url);
            if (it == by_item.end()) continue;
            auto& t = d.torrents[it->second];
            t.infohash = id->id.infohash;
            t.name = id->name;
            t.file_names = id->file_names;
            t.identified_ip = id->id.ip;
            t.reason_no_ip = id->id.reason_no_ip;
            by_hash.emplace(id->id.infohash, it->second);
        }
    }
    for (const auto& e : events) {
        if (const auto* ts = std::get_if<TerminalStatus>(&e.payload)) {
            auto h = by_hash.find(ts->subject);
            if (h != by_hash.end()) {
                d.torrents[h->second].terminal = ts->status;
                continue;
            }
            for (auto& t : d.torrents)
                if (t.item.torrent_url == ts->subject && !t.infohash) t.terminal = ts->status;
        }
    }

    // Publishers.
    std::map<std::string, PublisherRecord> pubs;
    for (std::size_t i = 0; i < d.torrents.size(); ++i) {
        auto& t = d.torrents[i];
        auto& p = pubs[t.item.username];
        p.username = t.item.username;
        p.torrents.push_back(i);
        if (t.identified_ip) p.ip_set.insert(*t.identified_ip);
    }
    for (const auto& [u, when] : removed) {
        auto it = pubs.find(u);
        if (it == pubs.end()) continue;
        it->second.removed_by_portal = true;
        it->second.removed_at = when;
    }
    for (auto& [u, p] : pubs) {
        d.by_username.emplace(u, d.publishers.size());
        d.publishers.push_back(std::move(p));
    }

    // Snapshots: publisher sightings and downloaders.
    std::vector<const std::set<Ipv4>*> owner_ips(d.torrents.size(), nullptr);
    for (const auto& p : d.publishers)
        for (auto i : p.torrents) owner_ips[i] = &p.ip_set;
    for (const auto& e : events) {
        const auto* s = std::get_if<SwarmSnapshot>(&e.payload);
        if (!s) continue;
        auto h = by_hash.find(s->infohash);
        if (h == by_hash.end()) continue;
        auto& t = d.torrents[h->second];
        ++t.snapshot_count;
        const auto& own = *owner_ips[h->second];
        bool seen = false;
        for (const auto& peer : s->peers) {
            if (own.contains(peer.ip)) {
                seen = true;
            } else if (!opt.exclude_ips.contains(peer.ip)) {
                t.downloaders.insert(peer.ip);
            }
        }
        if (seen) t.publisher_seen.push_back(s->observed_at);
    }

    std::set<std::string> sampled;
    if (opt.seeding_sample > 0 && static_cast<std::size_t>(opt.seeding_sample) < d.publishers.size()) {
        std::vector<std::string> names;
        for (const auto& p : d.publishers) names.push_back(p.username);
        std::mt19937_64 rng(opt.sample_seed);
        std::vector<std::string> pick;
        std::sample(names.begin(), names.end(), std::back_inserter(pick), static_cast<std::size_t>(opt.seeding_sample),
                    rng);
        sampled.insert(pick.begin(), pick.end());
    }

    for (auto& p : d.publishers) {
        std::int64_t monitored = 0;
        for (auto i : p.torrents) {
            const auto& t = d.torrents[i];
            p.downloads_attracted += static_cast<std::int64_t>(t.downloaders.size());
            if (t.infohash) ++monitored;
            auto hits = extract_urls(t.infohash ? t.name : t.item.title, t.item.description, t.file_names);
            p.promoted_urls.insert(hits.begin(), hits.end());
        }
        if (monitored > 0) p.popularity = static_cast<double>(p.downloads_attracted) / static_cast<double>(monitored);
        for (const auto& ip : p.ip_set) p.isp.emplace(ip, geo.lookup(ip));
        p.isp_class = majority_isp_class(p);
        p.multi_ip_case = classify_multi_ip(p, geo);
        if (auto a = opt.annotations.find(p.username); a != opt.annotations.end()) p.business_class = a->second;
        if (sampled.empty() || sampled.contains(p.username)) detail::compute_seeding(p, d, opt);
    }
    flag_fake(d.publishers, opt.fake_threshold);
    rank_top(d.publishers, opt.top_k);
    return d;
}

// ---------------------------------------------------------------------------
// Group statistics

enum class GroupLabel { All, Fake, Top, Top_HP, Top_CI };

inline const char* to_string(GroupLabel g) {
    switch (g) {
        case GroupLabel::All: return "All";
        case GroupLabel::Fake: return "Fake";
        case GroupLabel::Top: return "Top";
        case GroupLabel::Top_HP: return "Top-HP";
        case GroupLabel::Top_CI: return "Top-CI";
    }
    return "?";
}

inline constexpr GroupLabel all_groups[] = {GroupLabel::All, GroupLabel::Fake, GroupLabel::Top, GroupLabel::Top_HP,
                                            GroupLabel::Top_CI};

inline bool in_group(const PublisherRecord& r, GroupLabel g) {
    switch (g) {
        case GroupLabel::All: return true;
        case GroupLabel::Fake: return r.fake;
        case GroupLabel::Top: return r.top;
        case GroupLabel::Top_HP: return r.top && r.isp_class == IspType::hosting;
        case GroupLabel::Top_CI: return r.top && r.isp_class == IspType::commercial;
    }
    return false;
}

inline std::vector<const PublisherRecord*> members(const Dataset& d, GroupLabel g) {
    std::vector<const PublisherRecord*> out;
    for (const auto& r : d.publishers)
        if (in_group(r, g)) out.push_back(&r);
    return out;
}

struct GroupSignature {
    std::size_t members = 0;
    std::size_t with_sessions = 0;
    std::optional<double> seeding_time_s;  // medians over members
    std::optional<double> parallel_torrents;
    std::optional<double> aggregated_session_s;
    std::optional<Quartiles> popularity;
};

inline GroupSignature group_signature(const std::vector<const PublisherRecord*>& group) {
    GroupSignature s;
    s.members = group.size();
    std::vector<double> seed, par, agg, pop;
    for (const auto* r : group) {
        if (r->avg_seeding_time_s) {
            seed.push_back(*r->avg_seeding_time_s);
            par.push_back(*r->parallel_torrents);
            agg.push_back(*r->aggregated_session_s);
        }
        if (r->popularity) pop.push_back(*r->popularity);
    }
    s.with_sessions = seed.size();
    if (!seed.empty()) {
        s.seeding_time_s = percentile_nearest_rank(seed, 50);
        s.parallel_torrents = percentile_nearest_rank(par, 50);
        s.aggregated_session_s = percentile_nearest_rank(agg, 50);
    }
    if (!pop.empty()) s.popularity = quartiles(pop);
    return s;
}

/// Fraction of a group's torrents per category; empty category strings count as "unknown".
inline std::map<std::string, double> group_breakdown(const Dataset& d, const std::vector<const PublisherRecord*>& group) {
    std::map<std::string, double> out;
    std::size_t n = 0;
    for (const auto* r : group) {
        for (auto i : r->torrents) {
            const auto& c = d.torrents[i].item.category;
            out[c.empty() ? "unknown" : c] += 1;
            ++n;
        }
    }
    for (auto& [_, v] : out) v /= static_cast<double>(n);
    return out;
}

struct ClassShare {
    double content_share = 0;
    double download_share = 0;
    std::size_t publishers = 0;
};

/// Content and download shares per business class over the whole population.
/// Publishers without an annotation land in "unclassified".
inline std::map<std::string, ClassShare> class_aggregates(const std::vector<PublisherRecord>& records) {
    std::map<std::string, ClassShare> out;
    double content = 0;
    double downloads = 0;
    for (const auto& r : records) {
        std::string key = r.business_class ? to_string(*r.business_class) : "unclassified";
        auto& c = out[key];
        c.content_share += static_cast<double>(r.torrent_count());
        c.download_share += static_cast<double>(r.downloads_attracted);
        ++c.publishers;
        content += static_cast<double>(r.torrent_count());
        downloads += static_cast<double>(r.downloads_attracted);
    }
    for (auto& [_, c] : out) {
        c.content_share = content > 0 ? c.content_share / content : 0;
        c.download_share = downloads > 0 ? c.download_share / downloads : 0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports

namespace detail {

inline nlohmann::json opt_num(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

inline nlohmann::json quartiles_json(const std::optional<Quartiles>& q) {
    if (!q) return nullptr;
    return {{"p25", q->p25}, {"p50", q->p50}, {"p75", q->p75}};
}

inline std::string num(double v) {
    nlohmann::json j = v;
    return j.dump();
}

}  // namespace detail

inline nlohmann::json summary_json(const Dataset& d, const AnalyticsOptions& opt) {
    nlohmann::json j;
    j["model"] = {{"N", opt.model.population},
                  {"W", opt.model.sample_size},
                  {"P", opt.model.target},
                  {"m", opt.model.queries()},
                  {"inter_query_s", opt.model.inter_query.count()},
                  {"offline_threshold_s", d.threshold.count()}};
    j["options"] = {{"fake_threshold", opt.fake_threshold}, {"top_k", opt.top_k}, {"tick_s", opt.tick.count()}};

    std::size_t with_id = 0, with_ip = 0;
    std::map<std::string, std::size_t> reasons, terminal;
    for (const auto& t : d.torrents) {
        if (t.infohash) ++with_id;
        if (t.identified_ip) ++with_ip;
        if (t.reason_no_ip) ++reasons[to_string(*t.reason_no_ip)];
        terminal[t.terminal ? to_string(*t.terminal) : "open"]++;
    }
    j["torrents"] = {{"published", d.torrents.size()},
                     {"identified_swarms", with_id},
                     {"with_username", d.torrents.size()},
                     {"with_ip", with_ip},
                     {"no_ip_reasons", reasons},
                     {"terminal", terminal}};

    std::vector<std::string> top, fake;
    for (const auto& r : d.publishers) {
        if (r.top) top.push_back(r.username);
        if (r.fake) fake.push_back(r.username);
    }
    j["publishers"] = {{"count", d.publishers.size()}, {"top", top}, {"fake", fake}};

    auto curve = contribution_curve(d.publishers);
    nlohmann::json c = nlohmann::json::object();
    for (int x : {1, 3, 5, 10, 20, 50, 100}) c[std::to_string(x)] = curve[static_cast<std::size_t>(x - 1)].second;
    j["contribution"] = c;

    nlohmann::json groups = nlohmann::json::object();
    for (auto g : all_groups) {
        auto m = members(d, g);
        GroupSignature s = group_signature(m);
        groups[to_string(g)] = {{"members", s.members},
                                {"with_sessions", s.with_sessions},
                                {"median_seeding_time_s", detail::opt_num(s.seeding_time_s)},
                                {"median_parallel_torrents", detail::opt_num(s.parallel_torrents)},
                                {"median_aggregated_session_s", detail::opt_num(s.aggregated_session_s)},
                                {"popularity", detail::quartiles_json(s.popularity)},
                                {"categories", m.empty() ? nlohmann::json::object() : nlohmann::json(group_breakdown(d, m))}};
    }
    std::size_t top_unknown = 0;
    for (const auto& r : d.publishers)
        if (r.top && r.isp_class == IspType::unknown) ++top_unknown;
    groups["Top-unknown-ISP"] = {{"members", top_unknown}};
    j["groups"] = groups;

    // Which ISPs host the identified IPs of Top and Fake publishers.
    nlohmann::json isps = nlohmann::json::object();
    for (auto g : {GroupLabel::Top, GroupLabel::Fake}) {
        std::map<std::string, std::size_t> count;
        for (const auto* r : members(d, g))
            for (const auto& [ip, info] : r->isp)
                count[info.isp_name + " (" + to_string(info.isp_type) + ", " + info.country + ")"]++;
        isps[to_string(g)] = count;
    }
    j["isp_breakdown"] = isps;

    std::map<std::string, std::size_t> cases;
    for (const auto& r : d.publishers)
        if (r.multi_ip_case && r.ip_set.size() > 1) cases[to_string(*r.multi_ip_case)]++;
    j["multi_ip_cases"] = cases;

    nlohmann::json classes = nlohmann::json::object();
    for (const auto& [k, v] : class_aggregates(d.publishers)) {
        std::vector<double> life, rate;
        for (const auto& r : d.publishers) {
            std::string key = r.business_class ? to_string(*r.business_class) : "unclassified";
            if (key != k) continue;
            auto l = longitudinal(r, d);
            life.push_back(static_cast<double>(l.lifetime_days));
            rate.push_back(l.publish_rate);
        }
        auto mean = [](const std::vector<double>& v) {
            return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        };
        classes[k] = {{"publishers", v.publishers},
                      {"content_share", v.content_share},
                      {"download_share", v.download_share},
                      {"lifetime_days", {{"min", *std::min_element(life.begin(), life.end())},
                                         {"avg", mean(life)},
                                         {"max", *std::max_element(life.begin(), life.end())}}},
                      {"publish_rate", {{"min", *std::min_element(rate.begin(), rate.end())},
                                        {"avg", mean(rate)},
                                        {"max", *std::max_element(rate.begin(), rate.end())}}}};
    }
    j["business_classes"] = classes;
    return j;
}

/// Writes summary.json and the CSV tables into `dir`. Output depends only on the inputs.
inline void write_report(const Dataset& d, const AnalyticsOptions& opt, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto open = [&dir](const char* name) {
        std::ofstream out(dir / name, std::ios::trunc | std::ios::binary);
        if (!out) throw Error("cannot write " + (dir / name).string());
        return out;
    };
    {
        auto out = open("summary.json");
        out << summary_json(d, opt).dump(2) << '\n';
    }
    {
        auto out = open("publishers.csv");
        out << "username,torrents,downloads,ips,fake,top,removed_by_portal,isp_class,multi_ip_case,business_class,"
               "avg_seeding_time_s,parallel_torrents,aggregated_session_s,popularity,lifetime_days,publish_rate,"
               "promoted_urls\n";
        for (const auto& r : d.publishers) {
            std::vector<std::string> ips, urls;
            for (const auto& ip : r.ip_set) ips.push_back(ip.to_string());
            std::set<std::string> domains;
            for (const auto& h : r.promoted_urls) domains.insert(h.domain);
            urls.assign(domains.begin(), domains.end());
            auto opt_cell = [](const std::optional<double>& v) { return v ? detail::num(*v) : std::string(); };
            auto l = longitudinal(r, d);
            out << detail::csv_field(r.username) << ',' << r.torrent_count() << ',' << r.downloads_attracted << ','
                << detail::join(ips, ';') << ',' << r.fake << ',' << r.top << ',' << r.removed_by_portal << ','
                << to_string(r.isp_class) << ',' << (r.multi_ip_case ? to_string(*r.multi_ip_case) : "") << ','
                << (r.business_class ? to_string(*r.business_class) : "") << ',' << opt_cell(r.avg_seeding_time_s)
                << ',' << opt_cell(r.parallel_torrents) << ',' << opt_cell(r.aggregated_session_s) << ','
                << opt_cell(r.popularity) << ',' << l.lifetime_days << ',' << detail::num(l.publish_rate) << ','
                << detail::join(urls, ';') << '\n';
        }
    }
    {
        auto out = open("sessions.csv");
        out << "username,infohash,start,end,duration_s,observations\n";
        for (const auto& r : d.publishers)
            for (const auto& s : r.sessions)
                out << detail::csv_field(r.username) << ',' << s.infohash << ',' << format_iso8601(s.start) << ','
                    << format_iso8601(s.end) << ',' << s.duration().count() << ',' << s.observation_count << '\n';
    }
    {
        auto out = open("contribution_curve.csv");
        out << "top_percent,content_share\n";
        for (const auto& [x, share] : contribution_curve(d.publishers)) out << x << ',' << detail::num(share) << '\n';
    }
    {
        auto out = open("torrents.csv");
        out << "torrent_url,username,infohash,category,subcategory,published_at,identified_ip,reason_no_ip,downloaders,"
               "snapshots,terminal\n";
        for (const auto& t : d.torrents)
            out << detail::csv_field(t.item.torrent_url) << ',' << detail::csv_field(t.item.username) << ','
                << t.infohash.value_or("") << ',' << detail::csv_field(t.item.category) << ','
                << detail::csv_field(t.item.subcategory) << ',' << format_iso8601(t.item.published_at) << ','
                << (t.identified_ip ? t.identified_ip->to_string() : "") << ','
                << (t.reason_no_ip ? to_string(*t.reason_no_ip) : "") << ',' << t.downloaders.size() << ','
                << t.snapshot_count << ',' << (t.terminal ? to_string(*t.terminal) : "open") << '\n';
    }
}

// ---------------------------------------------------------------------------
// Query surface

/// Everything known about one username, as served to a publisher page.
inline nlohmann::json query_publisher(const Dataset& d, const std::string& username) {
    const PublisherRecord* r = d.find(username);
    if (!r) throw NotFound("unknown publisher: " + username);
    nlohmann::json torrents = nlohmann::json::array();
    for (auto i : r->torrents) {
        const auto& t = d.torrents[i];
        torrents.push_back({{"filename", t.infohash ? t.name : t.item.title},
                            {"title", t.item.title},
                            {"category", t.item.category},
                            {"subcategory", t.item.subcategory},
                            {"published_at", format_iso8601(t.item.published_at)},
                            {"infohash", t.infohash ? nlohmann::json(*t.infohash) : nlohmann::json(nullptr)},
                            {"downloaders", t.downloaders.size()}});
    }
    nlohmann::json ips = nlohmann::json::array();
    for (const auto& [ip, info] : r->isp)
        ips.push_back({{"ip", ip.to_string()},
                       {"isp", info.isp_name},
                       {"isp_type", to_string(info.isp_type)},
                       {"city", info.city},
                       {"country", info.country}});
    nlohmann::json removals = nlohmann::json::array();
    for (const auto& rm : d.removals)
        if (rm.username == username) removals.push_back(rm);
    nlohmann::json urls = nlohmann::json::array();
    for (const auto& h : r->promoted_urls) urls.push_back({{"domain", h.domain}, {"channel", to_string(h.channel)}});
    return {{"username", r->username},
            {"torrents", torrents},
            {"ips", ips},
            {"flags", {{"fake", r->fake}, {"top", r->top}, {"removed_by_portal", r->removed_by_portal}}},
            {"portal_removals", removals},
            {"promoted_urls", urls},
            {"business_class", r->business_class ? nlohmann::json(to_string(*r->business_class)) : nlohmann::json(nullptr)},
            {"downloads_attracted", r->downloads_attracted}};
}

inline std::map<std::string, BusinessClass> load_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open annotations " + path.string());
    std::map<std::string, BusinessClass> out;
    try {
        auto j = nlohmann::json::parse(in);
        for (const auto& [k, v] : j.items()) out.emplace(k, business_class_from_string(v.get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad annotations file: ") + e.what());
    } catch (const ParseError& e) {
        throw ConfigError(std::string("bad annotations file: ") + e.what());
    }
    return out;
}

}  // namespace pubmon
