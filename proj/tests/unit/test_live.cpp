#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "pubmon/live_transport.hpp"
#include "pubmon/swarm_monitor.hpp"

using namespace pubmon;

namespace {

Timestamp t0() { return parse_iso8601("2010-04-06T00:00:00Z"); }

// Listening loopback socket; answers each handshake with the given bitfield.
class PeerStub {
public:
    PeerStub(std::int64_t pieces, std::int64_t have) : pieces_(pieces), have_(have) {
        fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
        int one = 1;
        ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 8) != 0)
            throw std::runtime_error("peer stub: bind/listen failed");
        socklen_t len = sizeof addr;
        ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
        thread_ = std::thread([this] { serve(); });
    }
    ~PeerStub() {
        stop_ = true;
        ::shutdown(fd_, SHUT_RDWR);
        ::close(fd_);
        thread_.join();
    }
    [[nodiscard]] Endpoint endpoint() const { return {*Ipv4::parse("127.0.0.1"), port_}; }
    std::atomic<int> handshakes{0};
    Bytes received;  // from the last connection

private:
    void serve() {
        while (!stop_) {
            int c = ::accept(fd_, nullptr, nullptr);
            if (c < 0) return;
            Bytes in;
            char buf[256];
            while (in.size() < wire::handshake_size) {
                ssize_t n = ::recv(c, buf, sizeof buf, 0);
                if (n <= 0) break;
                in.append(buf, static_cast<std::size_t>(n));
            }
            auto hs = wire::parse_handshake(in.substr(0, std::min(in.size(), wire::handshake_size)));
            if (hs) {
                ++handshakes;
                Bytes out = wire::encode_handshake(hs->infohash, "-ST0001-000000000000") +
                            wire::encode_message(wire::msg_bitfield, wire::make_bitfield(pieces_, have_));
                ::send(c, out.data(), out.size(), MSG_NOSIGNAL);
            }
            // Give the client a moment to read everything, then see if it sends more.
            pollfd p{c, POLLIN, 0};
            if (::poll(&p, 1, 200) > 0) {
                ssize_t n = ::recv(c, buf, sizeof buf, 0);
                if (n > 0) in.append(buf, static_cast<std::size_t>(n));
            }
            received = in;
            ::close(c);
        }
    }

    std::int64_t pieces_;
    std::int64_t have_;
    int fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> stop_{false};
    std::thread thread_;
};

std::uint16_t closed_port() {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    ::close(fd);
    return ntohs(addr.sin_port);
}

struct HttpFixture {
    httplib::Server server;
    int port = 0;
    std::thread thread;

    HttpFixture() {
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~HttpFixture() {
        server.stop();
        thread.join();
    }
    [[nodiscard]] std::string base() const { return "http://127.0.0.1:" + std::to_string(port); }
};

Bytes torrent_for(const std::string& announce) {
    namespace be = bencode;
    be::Dict info{{"name", "live.avi"}, {"length", 1000}, {"piece length", 256}, {"pieces", std::string(80, 'q')}};
    return be::encode(be::Value(be::Dict{{"announce", announce}, {"info", info}}));
}

}  // namespace

TEST(Live, HttpGetAndErrors) {
    HttpFixture http;
    http.server.Get("/hello", [](const httplib::Request&, httplib::Response& res) { res.set_content("hi", "text/plain"); });
    HttpTransport tx;
    auto ok = tx.get(http.base() + "/hello", std::chrono::milliseconds{2000});
    EXPECT_EQ(ok.status, 200);
    EXPECT_EQ(ok.body, "hi");
    EXPECT_EQ(tx.get(http.base() + "/missing", std::chrono::milliseconds{2000}).status, 404);
    EXPECT_THROW(tx.get("ftp://x/y", std::chrono::milliseconds{100}), TransportError);
    EXPECT_THROW(tx.get("http://127.0.0.1:" + std::to_string(closed_port()) + "/", std::chrono::milliseconds{500}),
                 TransportError);
}

TEST(Live, ProbeOverTcp) {
    PeerStub seed(8, 8);
    PeerStub leech(8, 3);
    TcpDialer dialer;
    Digest20 h{};
    h.fill(0x42);
    const Bytes pid = VantageIdentity::make("v0").peer_id;
    auto r = probe(dialer, seed.endpoint(), h, pid, 8, t0(), std::chrono::milliseconds{2000});
    EXPECT_EQ(r.outcome, ProbeOutcome::seed);
    auto l = probe(dialer, leech.endpoint(), h, pid, 8, t0(), std::chrono::milliseconds{2000});
    EXPECT_EQ(l.outcome, ProbeOutcome::non_seed);
    EXPECT_EQ(l.pieces_have, 3);
    Endpoint nobody{*Ipv4::parse("127.0.0.1"), closed_port()};
    EXPECT_EQ(probe(dialer, nobody, h, pid, 8, t0(), std::chrono::milliseconds{1000}).outcome, ProbeOutcome::refused);
    // Only the handshake went out.
    std::this_thread::sleep_for(std::chrono::milliseconds{300});
    EXPECT_EQ(seed.received, wire::encode_handshake(h, pid));
}

TEST(Live, SwarmOverRealSockets) {
    PeerStub publisher(4, 4);
    HttpFixture http;
    const std::string announce = http.base() + "/announce";
    const Bytes torrent = torrent_for(announce);
    std::atomic<int> announces{0};
    Endpoint pub_ep = publisher.endpoint();
    http.server.Get("/t/1.torrent", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(torrent, "application/x-bittorrent");
    });
    http.server.Get("/announce", [&](const httplib::Request& req, httplib::Response& res) {
        EXPECT_EQ(req.get_param_value("numwant"), "200");
        AnnounceResult r;
        r.interval_s = 600;
        if (announces++ < 3) {
            r.seeders = 1;
            r.peers = {pub_ep};
        }
        res.set_content(serialize_announce_response(r), "text/plain");
    });

    HttpTransport tx;
    TcpDialer dialer;
    MemorySink sink;
    MonitorConfig cfg;
    cfg.vantages = 2;
    cfg.probe_timeout = std::chrono::milliseconds{2000};
    cfg.http_timeout = std::chrono::milliseconds{2000};
    std::vector<VantageIdentity> vs{VantageIdentity::make("v0"), VantageIdentity::make("v1", 6882)};
    RateLimiter limiter(cfg.min_interval);
    SwarmContext ctx{tx, dialer, limiter, sink, cfg, vs};
    FeedItem item;
    item.portal_id = "live";
    item.username = "someone";
    item.torrent_url = http.base() + "/t/1.torrent";
    VirtualTime clock(t0());
    SwarmTask task(item, t0());
    auto t = run_swarm(task, ctx, clock);
    EXPECT_EQ(t.status, TerminalKind::terminated);
    EXPECT_EQ(t.snapshot_count, 13);
    ASSERT_TRUE(task.identification());
    ASSERT_TRUE(task.identification()->ip);
    EXPECT_EQ(*task.identification()->ip, pub_ep.ip);
    EXPECT_EQ(publisher.handshakes.load(), 1);
}
