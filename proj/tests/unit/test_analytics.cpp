#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "pubmon/publisher_analytics.hpp"

using namespace pubmon;

namespace {

Timestamp t0() { return parse_iso8601("2010-04-06T00:00:00Z"); }
Ipv4 ip(const char* s) { return *Ipv4::parse(s); }

PublisherRecord pub(const std::string& name, std::size_t torrents, std::int64_t downloads = 0) {
    PublisherRecord r;
    r.username = name;
    for (std::size_t i = 0; i < torrents; ++i) r.torrents.push_back(i);
    r.downloads_attracted = downloads;
    return r;
}

GeoDatabase geo() {
    std::istringstream in(
        "cidr,isp_name,isp_type,country,city\n"
        "# hosting\n"
        "91.121.0.0/16,OVH,hosting,FR,Roubaix\n"
        "91.121.7.0/24,OVH-dedicated,hosting,FR,Gravelines\n"
        "78.46.0.0/15,Hetzner,hosting,DE,Falkenstein\n"
        "81.48.0.0/13,France Telecom,commercial,FR,Paris\n"
        "82.224.0.0/11,Free,commercial,FR,Paris\n");
    return GeoDatabase::load(in);
}

// Oracle: the top ceil(x n / 100) counts by repeated max extraction.
double share_oracle(std::vector<std::int64_t> counts, int x) {
    auto n = counts.size();
    std::size_t k = (static_cast<std::size_t>(x) * n + 99) / 100;
    double total = 0;
    for (auto c : counts) total += static_cast<double>(c);
    double got = 0;
    for (std::size_t i = 0; i < k; ++i) {
        auto it = std::max_element(counts.begin(), counts.end());
        got += static_cast<double>(*it);
        *it = -1;
    }
    return got / total;
}

EventRecord feed_event(const std::string& user, int id, Timestamp at, const std::string& category = "Video") {
    FeedItem f;
    f.title = "title " + std::to_string(id);
    f.username = user;
    f.portal_id = "pb";
    f.category = category;
    f.torrent_url = "http://pb/t/" + std::to_string(id);
    f.published_at = at;
    return {at, f};
}

std::string hash_of(int id) {
    std::string h = std::to_string(id);
    return std::string(40 - h.size(), '0') + h;
}

EventRecord id_event(int id, std::optional<Ipv4> who, Timestamp at) {
    IdentificationRecord r;
    r.portal_id = "pb";
    r.torrent_url = "http://pb/t/" + std::to_string(id);
    r.id.infohash = hash_of(id);
    r.id.ip = who;
    r.id.method = who ? IdMethod::single_seed_bitfield : IdMethod::none;
    if (!who) r.id.reason_no_ip = NoIpReason::nat;
    r.name = "file" + std::to_string(id) + ".avi";
    return {at, r};
}

EventRecord snap_event(int id, Timestamp at, std::vector<const char*> ips) {
    SwarmSnapshot s;
    s.infohash = hash_of(id);
    s.observed_at = at;
    s.vantage_id = "v0";
    for (auto* x : ips) s.peers.push_back({ip(x), 6881});
    s.empty = s.peers.empty();
    return {at, s};
}

}  // namespace

TEST(Urls, FilenameAndTextbox) {
    auto hits = extract_urls("Movie-divxatope.com.avi", "Visit www.ultratorrents.com for more!", {});
    EXPECT_TRUE(hits.contains({"divxatope.com", UrlChannel::filename}));
    EXPECT_TRUE(hits.contains({"ultratorrents.com", UrlChannel::textbox}));
    EXPECT_EQ(hits.size(), 2u);
}

TEST(Urls, BundledFilesAndNoise) {
    auto hits = extract_urls("Show.S01E02.HDTV.XviD", "", {"Show/Downloaded from www.sitex.net.txt", "a.avi"});
    ASSERT_EQ(hits.size(), 1u);
    EXPECT_EQ(hits.begin()->channel, UrlChannel::bundled_file);
    EXPECT_EQ(hits.begin()->domain, "sitex.net");
    EXPECT_TRUE(extract_urls("Some.Movie.2009.DVDRip", "plain text, nothing here", {}).empty());
    EXPECT_TRUE(extract_domains("http://www.example.co.uk/page", UrlChannel::textbox).contains("example.co.uk"));
}

TEST(FlagFake, SharedIpThreshold) {
    std::vector<PublisherRecord> rs;
    for (int i = 0; i < 5; ++i) {
        rs.push_back(pub("f" + std::to_string(i), 1));
        rs.back().ip_set.insert(ip("1.1.1.1"));
    }
    for (int i = 0; i < 4; ++i) {
        rs.push_back(pub("g" + std::to_string(i), 1));
        rs.back().ip_set.insert(ip("2.2.2.2"));
    }
    rs.push_back(pub("removed", 1));
    rs.back().removed_by_portal = true;
    flag_fake(rs, 5);
    for (const auto& r : rs) EXPECT_EQ(r.fake, r.username[0] == 'f' || r.username == "removed") << r.username;
    flag_fake(rs, 4);
    for (const auto& r : rs) EXPECT_TRUE(r.fake || r.username == "x");
    EXPECT_THROW(flag_fake(rs, 1), std::domain_error);
}

TEST(RankTop, RemovesFakesWithoutRefill) {
    std::vector<PublisherRecord> rs;
    for (int i = 0; i < 150; ++i) rs.push_back(pub("u" + std::to_string(1000 + i), static_cast<std::size_t>(300 - i)));
    for (int i = 0; i < 100; i += 6) rs[static_cast<std::size_t>(i)].fake = true;  // 17 of the top 100
    rs[96].fake = false;
    int fakes_in_top = 0;
    for (int i = 0; i < 100; ++i) fakes_in_top += rs[static_cast<std::size_t>(i)].fake;
    ASSERT_EQ(fakes_in_top, 16);
    auto top = rank_top(rs, 100);
    EXPECT_EQ(top.size(), 84u);
    EXPECT_EQ(top.front(), "u1001");
    EXPECT_FALSE(rs[100].top);
    for (const auto& r : rs) EXPECT_FALSE(r.fake && r.top);
}

TEST(RankTop, TiesAndSmallPopulations) {
    std::vector<PublisherRecord> rs{pub("b", 3, 10), pub("a", 3, 10), pub("c", 3, 50), pub("d", 1)};
    auto top = rank_top(rs, 3);
    EXPECT_EQ(top, (std::vector<std::string>{"c", "a", "b"}));
    EXPECT_EQ(rank_top(rs, 1000).size(), 4u);
    EXPECT_THROW(rank_top(rs, 0), std::domain_error);
}

TEST(Contribution, Examples) {
    auto c = contribution_curve(std::vector<std::int64_t>{5, 3, 1, 1});
    ASSERT_EQ(c.size(), 100u);
    EXPECT_DOUBLE_EQ(c[0].second, 0.5);     // x=1: ceil(0.04) = 1 publisher
    EXPECT_DOUBLE_EQ(c[49].second, 0.8);    // x=50: 2 publishers
    EXPECT_DOUBLE_EQ(c[99].second, 1.0);
    auto uniform = contribution_curve(std::vector<std::int64_t>(100, 7));
    for (const auto& [x, share] : uniform) EXPECT_NEAR(share, x / 100.0, 1e-12);
    EXPECT_THROW(contribution_curve(std::vector<std::int64_t>{}), std::domain_error);
}

TEST(Contribution, MatchesOracleAndIsMonotone) {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> n_pick(1, 400), c_pick(1, 300);
    for (int trial = 0; trial < 60; ++trial) {
        std::vector<std::int64_t> counts(static_cast<std::size_t>(n_pick(rng)));
        for (auto& c : counts) c = c_pick(rng);
        auto curve = contribution_curve(counts);
        double prev = 0;
        for (const auto& [x, share] : curve) {
            ASSERT_NEAR(share, share_oracle(counts, x), 1e-12);
            ASSERT_GE(share, prev);
            // Never below the uniform diagonal.
            ASSERT_GE(share + 1e-12, x / 100.0);
            prev = share;
        }
        ASSERT_DOUBLE_EQ(curve.back().second, 1.0);
    }
}

TEST(Popularity, NearestRank) {
    EXPECT_DOUBLE_EQ(percentile_nearest_rank({1, 2, 3, 4}, 50), 2);
    EXPECT_DOUBLE_EQ(percentile_nearest_rank({1, 2, 3, 4}, 100), 4);
    EXPECT_DOUBLE_EQ(percentile_nearest_rank({1, 2, 3, 4}, 0), 1);
    std::vector<PublisherRecord> rs{pub("a", 1), pub("b", 1), pub("c", 1), pub("d", 1), pub("e", 1)};
    double pops[] = {8, 2, 100, 4};
    for (int i = 0; i < 4; ++i) rs[static_cast<std::size_t>(i)].popularity = pops[i];
    std::vector<const PublisherRecord*> g;
    for (const auto& r : rs) g.push_back(&r);
    auto q = popularity_stats(g);
    EXPECT_DOUBLE_EQ(q.p25, 2);
    EXPECT_DOUBLE_EQ(q.p50, 4);
    EXPECT_DOUBLE_EQ(q.p75, 8);
    EXPECT_THROW(popularity_stats({&rs[4]}), std::domain_error);
}

TEST(Geo, LongestPrefix) {
    auto db = geo();
    EXPECT_EQ(db.lookup(ip("91.121.7.9")).isp_name, "OVH-dedicated");
    EXPECT_EQ(db.lookup(ip("91.121.8.9")).isp_name, "OVH");
    EXPECT_EQ(geo_lookup(ip("78.47.1.1"), db).isp_type, IspType::hosting);
    EXPECT_EQ(db.lookup(ip("82.230.1.1")).city, "Paris");
    auto none = db.lookup(ip("8.8.8.8"));
    EXPECT_EQ(none.isp_type, IspType::unknown);
    std::istringstream bad("1.2.3.0/24,x,hosting,FR\n");
    EXPECT_THROW(GeoDatabase::load(bad), ParseError);
    std::istringstream dup("1.2.3.0/24,x,hosting,FR,a\n1.2.3.0/24,y,hosting,FR,b\n");
    EXPECT_THROW(GeoDatabase::load(dup), ParseError);

    std::ostringstream out;
    db.write_csv(out);
    std::istringstream back(out.str());
    EXPECT_EQ(GeoDatabase::load(back).rows().size(), db.rows().size());
}

TEST(MultiIp, Cases) {
    auto db = geo();
    PublisherRecord r = pub("x", 1);
    EXPECT_FALSE(classify_multi_ip(r, db));
    r.ip_set = {ip("91.121.1.1")};
    EXPECT_EQ(classify_multi_ip(r, db), MultiIpCase::single_ip);
    r.ip_set = {ip("91.121.1.1"), ip("78.46.1.1")};
    EXPECT_EQ(classify_multi_ip(r, db), MultiIpCase::few_hosting);
    r.ip_set = {ip("81.48.1.1"), ip("81.49.2.2"), ip("81.50.3.3")};
    EXPECT_EQ(classify_multi_ip(r, db), MultiIpCase::single_commercial_isp);
    r.ip_set = {ip("81.48.1.1"), ip("82.224.1.1")};
    EXPECT_EQ(classify_multi_ip(r, db), MultiIpCase::multi_commercial_isp);
}

TEST(MajorityIsp, TiesGoCommercial) {
    auto db = geo();
    PublisherRecord r = pub("x", 1);
    EXPECT_EQ(majority_isp_class(r), IspType::unknown);
    for (const char* s : {"91.121.1.1", "81.48.1.1", "8.8.8.8"}) r.isp.emplace(ip(s), db.lookup(ip(s)));
    EXPECT_EQ(majority_isp_class(r), IspType::commercial);
    r.isp.emplace(ip("78.46.1.1"), db.lookup(ip("78.46.1.1")));
    EXPECT_EQ(majority_isp_class(r), IspType::hosting);
}

TEST(Longitudinal, RateAndFloor) {
    std::vector<Timestamp> ts;
    for (int i = 0; i < 60; ++i) ts.push_back(t0() + Hours{12 * i});
    ts.push_back(t0() + Hours{24 * 30});
    auto l = longitudinal(ts);
    EXPECT_EQ(l.lifetime_days, 30);
    EXPECT_DOUBLE_EQ(l.publish_rate, 61.0 / 30.0);
    auto one = longitudinal(std::vector<Timestamp>{t0()});
    EXPECT_EQ(one.lifetime_days, 1);
    EXPECT_DOUBLE_EQ(one.publish_rate, 1.0);
    EXPECT_THROW(longitudinal(std::vector<Timestamp>{}), std::domain_error);
}

TEST(ClassAggregates, Shares) {
    std::vector<PublisherRecord> rs{pub("a", 6, 30), pub("b", 2, 60), pub("c", 2, 10)};
    rs[0].business_class = BusinessClass::bt_portal;
    rs[1].business_class = BusinessClass::bt_portal;
    auto agg = class_aggregates(rs);
    EXPECT_DOUBLE_EQ(agg["bt_portal"].content_share, 0.8);
    EXPECT_DOUBLE_EQ(agg["bt_portal"].download_share, 0.9);
    EXPECT_EQ(agg["bt_portal"].publishers, 2u);
    EXPECT_DOUBLE_EQ(agg["unclassified"].content_share, 0.2);
}

TEST(Dataset, ResolvesFromEvents) {
    std::vector<EventRecord> ev;
    ev.push_back(feed_event("alice", 1, t0()));
    ev.push_back(feed_event("alice", 2, t0() + Hours{1}, ""));
    ev.push_back(feed_event("bob", 3, t0() + Hours{2}, "Audio"));
    ev.push_back(feed_event("alice", 1, t0() + Hours{3}));  // repeated feed item
    ev.push_back(id_event(1, ip("91.121.1.1"), t0()));
    ev.push_back(id_event(2, ip("91.121.1.1"), t0() + Hours{1}));
    ev.push_back(id_event(3, std::nullopt, t0() + Hours{2}));
    // alice seeds torrent 1 for 30 minutes, then again after a long gap.
    for (int m : {0, 10, 20, 30, 600})
        ev.push_back(snap_event(1, t0() + Minutes{m}, {"91.121.1.1", "81.48.0.1", "81.48.0.2"}));
    // The same downloader in two of alice's swarms counts once per swarm.
    ev.push_back(snap_event(2, t0() + Hours{1}, {"81.48.0.1"}));
    ev.push_back(snap_event(3, t0() + Hours{2}, {"82.224.0.9"}));
    TerminalStatus ts{hash_of(3), TerminalKind::terminated, 1, t0(), t0() + Hours{5}, ""};
    ev.push_back({t0() + Hours{5}, ts});
    ev.push_back({t0() + Hours{6}, PortalRemoval{"pb", "bob", t0() + Hours{6}}});

    AnalyticsOptions opt;
    opt.top_k = 1;
    Dataset d = resolve_identities(ev, geo(), opt);
    ASSERT_EQ(d.torrents.size(), 3u);
    ASSERT_EQ(d.publishers.size(), 2u);
    EXPECT_EQ(d.threshold, Hours{4});
    const auto* alice = d.find("alice");
    const auto* bob = d.find("bob");
    ASSERT_TRUE(alice && bob);
    EXPECT_EQ(alice->torrent_count(), 2u);
    EXPECT_EQ(alice->downloads_attracted, 3);
    EXPECT_DOUBLE_EQ(*alice->popularity, 1.5);
    EXPECT_EQ(alice->isp_class, IspType::hosting);
    EXPECT_TRUE(alice->top);
    EXPECT_FALSE(alice->fake);
    ASSERT_EQ(alice->sessions.size(), 2u);
    EXPECT_EQ(alice->sessions[0].duration(), Minutes{30});
    EXPECT_DOUBLE_EQ(*alice->avg_seeding_time_s, 1800.0);
    EXPECT_TRUE(bob->fake);
    EXPECT_TRUE(bob->removed_by_portal);
    EXPECT_FALSE(bob->avg_seeding_time_s);
    EXPECT_EQ(d.torrents[2].terminal, TerminalKind::terminated);
    EXPECT_FALSE(d.torrents[0].terminal);
    EXPECT_EQ(d.torrents[2].reason_no_ip, NoIpReason::nat);

    auto br = group_breakdown(d, members(d, GroupLabel::All));
    EXPECT_NEAR(br["Video"], 1.0 / 3, 1e-12);
    EXPECT_NEAR(br["unknown"], 1.0 / 3, 1e-12);
    EXPECT_NEAR(br["Audio"], 1.0 / 3, 1e-12);

    auto q = query_publisher(d, "alice");
    EXPECT_EQ(q["torrents"].size(), 2u);
    EXPECT_EQ(q["ips"][0]["isp"], "OVH");
    EXPECT_EQ(q["flags"]["top"], true);
    EXPECT_EQ(query_publisher(d, "bob")["flags"]["fake"], true);
    EXPECT_EQ(query_publisher(d, "bob")["portal_removals"].size(), 1u);
    EXPECT_THROW(query_publisher(d, "carol"), NotFound);

    auto summary = summary_json(d, opt);
    EXPECT_EQ(summary["torrents"]["with_ip"], 2);
    EXPECT_EQ(summary["torrents"]["no_ip_reasons"]["nat"], 1);
    EXPECT_EQ(summary["publishers"]["fake"][0], "bob");
}

TEST(Dataset, ExcludedAddressesAreNotDownloaders) {
    std::vector<EventRecord> ev{feed_event("a", 1, t0()), id_event(1, ip("91.121.1.1"), t0()),
                                snap_event(1, t0(), {"91.121.1.1", "10.9.9.9", "81.48.0.1"})};
    AnalyticsOptions opt;
    opt.exclude_ips = {ip("10.9.9.9")};
    auto d = resolve_identities(ev, geo(), opt);
    EXPECT_EQ(d.publishers[0].downloads_attracted, 1);
}
