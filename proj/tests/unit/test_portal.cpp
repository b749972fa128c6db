#include <gtest/gtest.h>

#include <fstream>

#include "pubmon/portal_ingest.hpp"

using namespace pubmon;

namespace {

std::string item_xml(const std::string& title, const std::string& user, const std::string& url,
                     const std::string& date = "Tue, 06 Apr 2010 00:01:00 +0000") {
    std::string out = "<item>";
    if (!title.empty()) out += "<title>" + title + "</title>";
    out += "<category>Video</category><subcategory>TV shows</subcategory><author>" + user + "</author>";
    out += "<size>734003200</size><pubDate>" + date + "</pubDate>";
    out += "<description>Visit www.example.com</description>";
    out += "<enclosure url=\"" + url + "\" type=\"application/x-bittorrent\"/></item>";
    return out;
}

std::string feed(const std::vector<std::string>& items) {
    std::string out = "<?xml version=\"1.0\"?><rss version=\"2.0\"><channel><title>portal</title>";
    for (const auto& i : items) out += i;
    return out + "</channel></rss>";
}

PortalProfile profile() {
    PortalProfile p;
    p.portal_id = "pb";
    p.feed_url = "http://portal/rss";
    return p;
}

class MapTransport final : public Transport {
public:
    std::map<std::string, HttpResponse> pages;
    bool down = false;
    int calls = 0;
    HttpResponse get(const std::string& url, std::chrono::milliseconds) override {
        ++calls;
        if (down) throw TransportError("timed out");
        auto it = pages.find(url);
        if (it == pages.end()) return {404, ""};
        return it->second;
    }
};

Timestamp t0() { return parse_iso8601("2010-04-06T00:00:00Z"); }

std::string tiny_torrent() {
    namespace be = bencode;
    be::Dict info{{"name", "a.avi"}, {"length", 100}, {"piece length", 64}, {"pieces", std::string(40, 'p')}};
    return be::encode(be::Value(be::Dict{{"announce", "http://tracker/announce"}, {"info", info}}));
}

}  // namespace

TEST(ParseFeed, TwoItems) {
    auto items = parse_feed(feed({item_xml("Show.S01E01", "eztv", "http://portal/t/1.torrent"),
                                  item_xml("Movie-divxatope.com", "mois20", "http://portal/t/2.torrent")}),
                            profile());
    ASSERT_EQ(items.size(), 2u);
    EXPECT_EQ(items[0].username, "eztv");
    EXPECT_EQ(items[1].username, "mois20");
    EXPECT_EQ(items[0].category, "Video");
    EXPECT_EQ(items[0].subcategory, "TV shows");
    EXPECT_EQ(items[0].content_size, 734003200);
    EXPECT_EQ(items[0].torrent_url, "http://portal/t/1.torrent");
    EXPECT_EQ(items[0].published_at, parse_iso8601("2010-04-06T00:01:00Z"));
    EXPECT_EQ(items[0].portal_id, "pb");
    EXPECT_EQ(items[0].identity(), "pb|http://portal/t/1.torrent");
}

TEST(ParseFeed, MissingTitleSkippedWithWarning) {
    std::vector<std::string> warnings;
    auto items = parse_feed(feed({item_xml("", "eztv", "http://portal/t/1.torrent"),
                                  item_xml("ok", "eztv", "http://portal/t/2.torrent")}),
                            profile(), &warnings);
    ASSERT_EQ(items.size(), 1u);
    EXPECT_EQ(items[0].title, "ok");
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("title"), std::string::npos);
}

TEST(ParseFeed, MalformedXml) {
    EXPECT_THROW(parse_feed("<rss><channel><item>", profile()), ParseError);
    EXPECT_THROW(parse_feed("<html/>", profile()), ParseError);
}

TEST(ParseFeed, CustomMapping) {
    PortalProfile p = profile();
    p.username_path = "uploader.<xmlattr>.name";
    std::string xml = feed({"<item><title>t</title><uploader name=\"mois20\"/><enclosure url=\"u\"/></item>"});
    auto items = parse_feed(xml, p);
    ASSERT_EQ(items.size(), 1u);
    EXPECT_EQ(items[0].username, "mois20");
}

TEST(Rfc822, ParseAndFormat) {
    EXPECT_EQ(parse_rfc822("Tue, 06 Apr 2010 02:01:00 +0200"), parse_iso8601("2010-04-06T00:01:00Z"));
    EXPECT_EQ(parse_rfc822("06 Apr 2010 00:01:00 GMT"), parse_iso8601("2010-04-06T00:01:00Z"));
    EXPECT_FALSE(parse_rfc822("yesterday"));
    Timestamp t = parse_iso8601("2010-12-31T23:59:59Z");
    EXPECT_EQ(parse_rfc822(format_rfc822(t)), t);
}

TEST(Poll, DedupAndSetDifference) {
    MapTransport tx;
    IngestState state;
    std::vector<std::string> items{item_xml("a", "u1", "http://portal/t/1.torrent"),
                                   item_xml("b", "u2", "http://portal/t/2.torrent")};
    tx.pages["http://portal/rss"] = {200, feed(items)};
    auto first = poll(tx, profile(), state, t0());
    EXPECT_EQ(first.items.size(), 2u);
    EXPECT_FALSE(first.error);
    EXPECT_EQ(poll(tx, profile(), state, t0() + Minutes{1}).items.size(), 0u);

    items.insert(items.begin(), item_xml("c", "u3", "http://portal/t/3.torrent"));
    tx.pages["http://portal/rss"] = {200, feed(items)};
    auto third = poll(tx, profile(), state, t0() + Minutes{2});
    ASSERT_EQ(third.items.size(), 1u);
    EXPECT_EQ(third.items[0].title, "c");
    EXPECT_EQ(state.last_poll_at, t0() + Minutes{2});
}

TEST(Poll, FailureLeavesStateAlone) {
    MapTransport tx;
    IngestState state;
    state.seen.insert("pb|x");
    tx.down = true;
    auto r = poll(tx, profile(), state, t0());
    EXPECT_TRUE(r.items.empty());
    ASSERT_TRUE(r.error);
    EXPECT_EQ(state.seen.size(), 1u);
    EXPECT_EQ(state.last_poll_at, Timestamp{});

    tx.down = false;
    tx.pages["http://portal/rss"] = {200, "<not xml"};
    r = poll(tx, profile(), state, t0());
    EXPECT_TRUE(r.error);
    EXPECT_EQ(state.seen.size(), 1u);
}

TEST(Poll, Backoff) {
    EXPECT_EQ(poll_backoff(Minutes{1}, 0), Minutes{1});
    EXPECT_EQ(poll_backoff(Minutes{1}, 1), Minutes{2});
    EXPECT_EQ(poll_backoff(Minutes{1}, 3), Minutes{8});
    EXPECT_EQ(poll_backoff(Minutes{1}, 20), Minutes{30});
    EXPECT_EQ(poll_backoff(Hours{1}, 5), Hours{1});
}

TEST(IngestState, SaveLoad) {
    auto path = std::filesystem::temp_directory_path() / "pubmon_ingest_state_test.json";
    IngestState s;
    s.seen = {"pb|1", "pb|2"};
    s.last_poll_at = t0();
    s.save(path);
    auto back = IngestState::load(path);
    EXPECT_EQ(back.seen, s.seen);
    EXPECT_EQ(back.last_poll_at, t0());
    std::filesystem::remove(path);
    EXPECT_TRUE(IngestState::load(path).seen.empty());
}

TEST(FetchTorrent, OkRetryAndCorrupt) {
    MapTransport tx;
    FeedItem item;
    item.torrent_url = "http://portal/t/1.torrent";
    tx.pages[item.torrent_url] = {200, tiny_torrent()};
    auto ok = fetch_torrent(tx, item);
    EXPECT_EQ(ok.status, FetchStatus::ok);
    ASSERT_TRUE(ok.meta);
    EXPECT_EQ(ok.meta->piece_count, 2);

    tx.calls = 0;
    item.torrent_url = "http://portal/t/missing.torrent";
    auto missing = fetch_torrent(tx, item);
    EXPECT_EQ(missing.status, FetchStatus::transport_failed);
    EXPECT_EQ(missing.attempts, 3);
    EXPECT_EQ(tx.calls, 3);

    tx.pages["http://portal/t/bad.torrent"] = {200, "d8:announce"};
    item.torrent_url = "http://portal/t/bad.torrent";
    tx.calls = 0;
    auto bad = fetch_torrent(tx, item);
    EXPECT_EQ(bad.status, FetchStatus::parse_failed);
    EXPECT_EQ(tx.calls, 1);
}

TEST(PortalConfig, IniProfile) {
    std::istringstream in(
        "[portal]\nid = tpb\nfeed_url = http://portal/rss\nusername = dc:creator\n"
        "[monitor]\nmin_interval = 15m\nvantages = 2\nprobe_timeout = 3s\n");
    auto cfg = load_portal_config(in);
    EXPECT_EQ(cfg.profile.portal_id, "tpb");
    EXPECT_EQ(cfg.profile.username_path, "dc:creator");
    EXPECT_EQ(cfg.profile.title_path, "title");
    EXPECT_EQ(cfg.monitor.min_interval, Minutes{15});
    EXPECT_EQ(cfg.monitor.vantages, 2);
    EXPECT_EQ(cfg.monitor.probe_timeout, std::chrono::milliseconds{3000});
    EXPECT_EQ(cfg.monitor.numwant, 200);
    EXPECT_EQ(cfg.monitor.empty_replies_to_stop, 10);

    std::istringstream no_feed("[portal]\nid = x\n");
    EXPECT_THROW(load_portal_config(no_feed), ConfigError);
    std::istringstream bad("[portal]\nfeed_url = u\n[monitor]\nvantages = 0\n");
    EXPECT_THROW(load_portal_config(bad), ConfigError);
}

TEST(PortalConfig, ShippedExampleLoads) {
    auto cfg = load_portal_config_file(std::string(PUBMON_WORLDS) + "/portal_example.ini");
    EXPECT_FALSE(cfg.profile.feed_url.empty());
}
