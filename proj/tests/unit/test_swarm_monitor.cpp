#include <gtest/gtest.h>

#include <functional>

#include "pubmon/swarm_monitor.hpp"

using namespace pubmon;

namespace {

Timestamp t0() { return parse_iso8601("2010-04-06T00:00:00Z"); }

Endpoint peer(int i) { return *Endpoint::parse("10.0.0." + std::to_string(i) + ":6881"); }

TorrentMeta meta() {
    TorrentMeta m;
    m.infohash.fill(0xab);
    m.announce_url = "http://tracker/announce";
    m.name = "x";
    m.piece_count = 8;
    m.piece_length = 16;
    m.total_size = 128;
    return m;
}

AnnounceResult reply(int seeders, int n_peers) {
    AnnounceResult r;
    r.seeders = seeders;
    for (int i = 1; i <= n_peers; ++i) r.peers.push_back(peer(i));
    return r;
}

Prober seed_at(int which) {
    return [which](const Endpoint& ep) {
        ProbeResult r;
        r.endpoint = ep;
        r.outcome = ep == peer(which) ? ProbeOutcome::seed : ProbeOutcome::non_seed;
        return r;
    };
}

// Serves one .torrent and answers announces from a script indexed by call number.
class ScriptTransport final : public Transport {
public:
    std::function<HttpResponse(int)> tracker;
    Bytes torrent;
    int announces = 0;
    HttpResponse get(const std::string& url, std::chrono::milliseconds) override {
        if (url == "http://portal/t/1.torrent") return {200, torrent};
        if (url.rfind("http://tracker/announce", 0) == 0) return tracker(announces++);
        return {404, ""};
    }
};

class RefuseAll final : public PeerDialer {
public:
    DialResult dial(const Endpoint&, std::chrono::milliseconds) override { return {DialStatus::refused, nullptr}; }
};

Bytes tiny_torrent() {
    namespace be = bencode;
    be::Dict info{{"name", "a.avi"}, {"length", 100}, {"piece length", 64}, {"pieces", std::string(40, 'p')}};
    return be::encode(be::Value(be::Dict{{"announce", "http://tracker/announce"}, {"info", info}}));
}

HttpResponse peers_reply(int n) {
    AnnounceResult r = reply(n > 0 ? 2 : 0, n);
    r.interval_s = 600;
    return {200, serialize_announce_response(r)};
}

FeedItem item() {
    FeedItem f;
    f.title = "t";
    f.username = "eztv";
    f.portal_id = "pb";
    f.torrent_url = "http://portal/t/1.torrent";
    return f;
}

struct Harness {
    ScriptTransport tx;
    RefuseAll dialer;
    MemorySink sink;
    MonitorConfig cfg;
    std::vector<VantageIdentity> vantages;
    std::unique_ptr<RateLimiter> limiter;

    SwarmContext ctx() {
        vantages.clear();
        for (int i = 0; i < cfg.vantages; ++i) vantages.push_back(VantageIdentity::make("v" + std::to_string(i)));
        limiter = std::make_unique<RateLimiter>(cfg.min_interval);
        return SwarmContext{tx, dialer, *limiter, sink, cfg, vantages};
    }
};

}  // namespace

TEST(Identify, SingleSeedFoundByBitfield) {
    auto o = identify_initial_publisher(meta(), "eztv", reply(1, 5), seed_at(3));
    EXPECT_EQ(o.probes.size(), 5u);
    ASSERT_TRUE(o.id.ip);
    EXPECT_EQ(*o.id.ip, peer(3).ip);
    EXPECT_EQ(o.id.method, IdMethod::single_seed_bitfield);
    EXPECT_FALSE(o.id.reason_no_ip);
    EXPECT_EQ(o.id.username, "eztv");
}

TEST(Identify, TwoSeedersReported) {
    auto o = identify_initial_publisher(meta(), "eztv", reply(2, 5), seed_at(3));
    EXPECT_FALSE(o.id.ip);
    EXPECT_EQ(o.id.reason_no_ip, NoIpReason::multi_seed);
    EXPECT_TRUE(o.probes.empty());
}

TEST(Identify, TooManyPeers) {
    auto o = identify_initial_publisher(meta(), "eztv", reply(1, 25), seed_at(3));
    EXPECT_EQ(o.id.reason_no_ip, NoIpReason::too_many_peers);
    EXPECT_TRUE(o.probes.empty());
    // Exactly 20 is already too many; 19 gets probed.
    EXPECT_EQ(identify_initial_publisher(meta(), "u", reply(1, 20), seed_at(3)).id.reason_no_ip,
              NoIpReason::too_many_peers);
    EXPECT_TRUE(identify_initial_publisher(meta(), "u", reply(1, 19), seed_at(3)).id.ip);
}

TEST(Identify, AllRefusedIsNat) {
    Prober refuse = [](const Endpoint& ep) { return ProbeResult{ep, ProbeOutcome::refused, std::nullopt, t0()}; };
    auto o = identify_initial_publisher(meta(), "eztv", reply(1, 4), refuse);
    EXPECT_EQ(o.id.reason_no_ip, NoIpReason::nat);
    EXPECT_EQ(o.probes.size(), 4u);
}

TEST(Identify, OtherReasons) {
    EXPECT_EQ(identify_initial_publisher(meta(), "u", reply(0, 3), seed_at(1)).id.reason_no_ip,
              NoIpReason::no_seed_reported);
    EXPECT_EQ(identify_initial_publisher(meta(), "u", reply(4, 30), seed_at(1)).id.reason_no_ip,
              NoIpReason::pre_published);
    // Tracker says one seed but two peers answer with full bitfields.
    Prober two = [](const Endpoint& ep) {
        return ProbeResult{ep, ep.ip.value % 2 ? ProbeOutcome::seed : ProbeOutcome::non_seed, 8, t0()};
    };
    EXPECT_EQ(identify_initial_publisher(meta(), "u", reply(1, 4), two).id.reason_no_ip, NoIpReason::multi_seed);
}

TEST(Termination, TrailingEmptyReplies) {
    auto snaps = [](int full, int empty, int full_after) {
        std::vector<SwarmSnapshot> h;
        for (int i = 0; i < full; ++i) h.push_back({"h", t0(), "v0", 1, 0, {peer(1)}, false});
        for (int i = 0; i < empty; ++i) h.push_back({"h", t0(), "v0", 0, 0, {}, true});
        for (int i = 0; i < full_after; ++i) h.push_back({"h", t0(), "v0", 1, 0, {peer(1)}, false});
        return h;
    };
    EXPECT_TRUE(should_terminate(snaps(3, 10, 0)));
    EXPECT_FALSE(should_terminate(snaps(3, 9, 0)));
    EXPECT_FALSE(should_terminate(snaps(0, 9, 0)));
    EXPECT_FALSE(should_terminate(snaps(0, 10, 1)));
    EXPECT_TRUE(should_terminate(snaps(0, 10, 0)));
    EXPECT_TRUE(should_terminate(snaps(0, 3, 0), 3));
}

TEST(SwarmTask, DeadTrackerAborts) {
    Harness h;
    h.cfg.dead_time = Hours{1};
    h.tx.torrent = tiny_torrent();
    h.tx.tracker = [](int) -> HttpResponse { throw TransportError("down"); };
    auto ctx = h.ctx();
    VirtualTime clock(t0());
    SwarmTask task(item(), t0());
    TerminalStatus t = run_swarm(task, ctx, clock);
    EXPECT_EQ(t.status, TerminalKind::aborted);
    EXPECT_GE(t.ended_at - t0(), Hours{1});
    EXPECT_LT(t.ended_at - t0(), Hours{1} + h.cfg.min_interval);
    EXPECT_TRUE(task.history().empty());
    EXPECT_NE(t.reason.find("tracker"), std::string::npos);
}

TEST(SwarmTask, FetchFailures) {
    Harness h;
    h.tx.torrent = "garbage";
    auto ctx = h.ctx();
    VirtualTime clock(t0());
    SwarmTask bad(item(), t0());
    EXPECT_EQ(run_swarm(bad, ctx, clock).status, TerminalKind::parse_failed);
    FeedItem missing = item();
    missing.torrent_url = "http://portal/t/404.torrent";
    SwarmTask gone(missing, t0());
    auto t = run_swarm(gone, ctx, clock);
    EXPECT_EQ(t.status, TerminalKind::fetch_failed);
    EXPECT_EQ(t.subject, missing.torrent_url);
}

TEST(SwarmTask, VantagesInterleave) {
    // 3 vantages sharing a 10 minute limit: one reply every 200 s in aggregate.
    Harness h;
    h.cfg.vantages = 3;
    h.cfg.min_interval = Minutes{10};
    h.tx.torrent = tiny_torrent();
    h.tx.tracker = [](int n) { return peers_reply(n < 30 ? 3 : 0); };
    auto ctx = h.ctx();
    VirtualTime clock(t0());
    SwarmTask task(item(), t0());
    run_swarm(task, ctx, clock);
    const auto& hist = task.history();
    ASSERT_GE(hist.size(), 30u);
    for (std::size_t i = 1; i < hist.size(); ++i) {
        ASSERT_EQ(hist[i].observed_at - hist[i - 1].observed_at, Seconds{200}) << i;
        ASSERT_NE(hist[i].vantage_id, hist[i - 1].vantage_id);
    }
    // Each vantage on its own never beats the limit.
    std::map<std::string, Timestamp> last;
    for (const auto& s : hist) {
        if (last.contains(s.vantage_id)) { ASSERT_GE(s.observed_at - last[s.vantage_id], Minutes{10}); }
        last[s.vantage_id] = s.observed_at;
    }
}

TEST(SwarmTask, TerminatesOnTenthEmptyReply) {
    Harness h;
    h.tx.torrent = tiny_torrent();
    // Alternating noise first, then the swarm drains for good after call 12.
    h.tx.tracker = [](int n) { return peers_reply(n < 12 ? (n % 4 == 1 ? 0 : 2) : 0); };
    auto ctx = h.ctx();
    VirtualTime clock(t0());
    SwarmTask task(item(), t0());
    auto t = run_swarm(task, ctx, clock);
    EXPECT_EQ(t.status, TerminalKind::terminated);
    EXPECT_EQ(task.history().size(), 22u);
    EXPECT_EQ(t.snapshot_count, 22);
    // Drained at snapshot 12; the tenth empty reply comes 9 cadence steps later.
    EXPECT_EQ(t.ended_at - task.history()[12].observed_at, 9 * (h.cfg.min_interval / h.cfg.vantages));

    // Identification was written once, before the terminal record.
    int ids = 0;
    bool terminal_seen = false;
    for (const auto& e : h.sink.events()) {
        if (e.kind() == EventKind::identification) {
            ++ids;
            EXPECT_FALSE(terminal_seen);
        }
        if (e.kind() == EventKind::terminal_status) terminal_seen = true;
    }
    EXPECT_EQ(ids, 1);
    ASSERT_TRUE(task.identification());
    EXPECT_EQ(task.identification()->reason_no_ip, NoIpReason::multi_seed);
}

TEST(SwarmTask, AbortWritesTerminalOnce) {
    Harness h;
    h.tx.torrent = tiny_torrent();
    h.tx.tracker = [](int) { return peers_reply(3); };
    auto ctx = h.ctx();
    SwarmTask task(item(), t0());
    auto next = task.step(ctx, t0());
    ASSERT_TRUE(next);
    next = task.step(ctx, *next);
    ASSERT_TRUE(next);
    task.abort(ctx, *next, "stop");
    task.abort(ctx, *next, "stop again");
    EXPECT_FALSE(task.step(ctx, *next));
    int terminals = 0;
    for (const auto& e : h.sink.events()) terminals += e.kind() == EventKind::terminal_status;
    EXPECT_EQ(terminals, 1);
    EXPECT_EQ(task.terminal()->status, TerminalKind::aborted);
}

TEST(Monitor, VantagesAndStopFlag) {
    ScriptTransport tx;
    tx.torrent = tiny_torrent();
    tx.tracker = [](int) { return peers_reply(3); };
    RefuseAll dialer;
    VirtualTime clock(t0());
    MemorySink sink;
    IngestState state;
    PortalProfile p;
    p.portal_id = "pb";
    p.feed_url = "http://portal/rss";
    MonitorConfig cfg;
    cfg.vantages = 4;
    Monitor m(p, cfg, tx, dialer, clock, sink, state);
    ASSERT_EQ(m.vantages().size(), 4u);
    EXPECT_EQ(m.vantages()[3].id, "v3");
    EXPECT_EQ(m.vantages()[3].port, 6884);
    std::atomic<bool> stop{true};
    m.set_stop_flag(&stop);
    auto s = m.run(t0() + Hours{1});
    EXPECT_EQ(s.feed_polls, 0);

    cfg.vantages = 0;
    EXPECT_THROW(Monitor(p, cfg, tx, dialer, clock, sink, state), ConfigError);
}
