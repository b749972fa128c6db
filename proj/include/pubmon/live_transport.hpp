#pragma once

// Real network transport. Kept apart from the rest of the library because it needs
// cpp-httplib on the include path.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fcntl.h>

#include <httplib.h>

#include "pubmon/transport.hpp"

namespace pubmon {

/// Plain-HTTP GET through cpp-httplib. https:// URLs need httplib built with OpenSSL
/// support and are rejected otherwise.
class HttpTransport final : public Transport {
public:
    HttpResponse get(const std::string& full_url, std::chrono::milliseconds timeout) override {
        const std::string scheme = "http://";
        if (full_url.rfind(scheme, 0) != 0) throw TransportError("unsupported URL scheme: " + full_url);
        auto path_at = full_url.find('/', scheme.size());
        std::string host = full_url.substr(0, path_at);
        std::string path = path_at == std::string::npos ? "/" : full_url.substr(path_at);
        httplib::Client client(host);
        auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
        auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
        client.set_connection_timeout(static_cast<time_t>(secs.count()), static_cast<time_t>(usecs.count()));
        client.set_read_timeout(static_cast<time_t>(secs.count()), static_cast<time_t>(usecs.count()));
        client.set_follow_location(true);
        auto res = client.Get(path);
        if (!res) throw TransportError("GET " + full_url + " failed: " + httplib::to_string(res.error()));
        return {res->status, res->body};
    }
};

namespace detail {

class Fd {
public:
    explicit Fd(int fd) : fd_(fd) {}
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    ~Fd() {
        if (fd_ >= 0) ::close(fd_);
    }
    [[nodiscard]] int get() const { return fd_; }

private:
    int fd_;
};

// 1: ready, 0: timed out.
inline int wait_fd(int fd, short events, std::chrono::milliseconds timeout) {
    pollfd p{fd, events, 0};
    for (;;) {
        int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
        if (rc < 0 && errno == EINTR) continue;
        if (rc < 0) throw TransportError(std::string("poll: ") + std::strerror(errno));
        return rc;
    }
}

}  // namespace detail

class TcpConnection final : public PeerConnection {
public:
    explicit TcpConnection(int fd) : fd_(fd) {}

    void send(std::string_view bytes) override {
        while (!bytes.empty()) {
            ssize_t n = ::send(fd_.get(), bytes.data(), bytes.size(), MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                if (errno == EAGAIN || errno == EWOULDBLOCK) {
                    if (detail::wait_fd(fd_.get(), POLLOUT, std::chrono::seconds{5}) == 0)
                        throw TransportError("send timed out");
                    continue;
                }
                throw TransportError(std::string("send: ") + std::strerror(errno));
            }
            bytes.remove_prefix(static_cast<std::size_t>(n));
        }
    }

    std::optional<Bytes> receive(std::size_t n, std::chrono::milliseconds timeout) override {
        auto deadline = std::chrono::steady_clock::now() + timeout;
        while (buf_.size() < n) {
            auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0 || detail::wait_fd(fd_.get(), POLLIN, left) == 0) return std::nullopt;
            char tmp[4096];
            ssize_t got = ::recv(fd_.get(), tmp, sizeof tmp, 0);
            if (got == 0) throw TransportError("peer closed connection");
            if (got < 0) {
                if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
                throw TransportError(std::string("recv: ") + std::strerror(errno));
            }
            buf_.append(tmp, static_cast<std::size_t>(got));
        }
        Bytes out = buf_.substr(0, n);
        buf_.erase(0, n);
        return out;
    }

private:
    detail::Fd fd_;
    Bytes buf_;
};

/// Non-blocking connect with a deadline. ECONNREFUSED and unreachable hosts map to
/// `refused`; no answer within the timeout maps to `timeout`.
class TcpDialer final : public PeerDialer {
public:
    DialResult dial(const Endpoint& ep, std::chrono::milliseconds timeout) override {
        int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_NONBLOCK | SOCK_CLOEXEC, 0);
        if (fd < 0) throw TransportError(std::string("socket: ") + std::strerror(errno));
        auto conn = std::make_unique<TcpConnection>(fd);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(ep.port);
        addr.sin_addr.s_addr = htonl(ep.ip.value);
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0)
            return {DialStatus::connected, std::move(conn)};
        if (errno != EINPROGRESS) return {DialStatus::refused, nullptr};
        if (detail::wait_fd(fd, POLLOUT, timeout) == 0) return {DialStatus::timeout, nullptr};
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) return {DialStatus::refused, nullptr};
        return {DialStatus::connected, std::move(conn)};
    }
};

}  // namespace pubmon
