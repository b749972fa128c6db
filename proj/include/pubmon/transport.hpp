#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <thread>

#include "pubmon/common.hpp"

namespace pubmon {

// The monitor only talks to the outside world through these interfaces. The live
// implementations sit in live_transport.hpp; simnet provides in-memory ones.

struct HttpResponse {
    int status = 0;
    Bytes body;
};

class Transport {
public:
    virtual ~Transport() = default;
    /// Throws TransportError when no HTTP response could be obtained at all.
    virtual HttpResponse get(const std::string& url, std::chrono::milliseconds timeout) = 0;
};

class PeerConnection {
public:
    virtual ~PeerConnection() = default;
    virtual void send(std::string_view bytes) = 0;
    /// Exactly `n` bytes, or nullopt when the deadline passes. Throws TransportError if the
    /// peer closed the connection.
    virtual std::optional<Bytes> receive(std::size_t n, std::chrono::milliseconds timeout) = 0;
};

enum class DialStatus { connected, refused, timeout };

struct DialResult {
    DialStatus status = DialStatus::refused;
    std::unique_ptr<PeerConnection> connection;
};

class PeerDialer {
public:
    virtual ~PeerDialer() = default;
    virtual DialResult dial(const Endpoint& endpoint, std::chrono::milliseconds timeout) = 0;
};

class TimeSource {
public:
    virtual ~TimeSource() = default;
    [[nodiscard]] virtual Timestamp now() const = 0;
    virtual void sleep_until(Timestamp t) = 0;
};

class SystemTime final : public TimeSource {
public:
    [[nodiscard]] Timestamp now() const override {
        return std::chrono::time_point_cast<Seconds>(std::chrono::system_clock::now());
    }
    void sleep_until(Timestamp t) override { std::this_thread::sleep_until(t); }
};

class VirtualTime final : public TimeSource {
public:
    explicit VirtualTime(Timestamp start) : now_(start) {}
    [[nodiscard]] Timestamp now() const override { return now_; }
    void sleep_until(Timestamp t) override {
        if (t > now_) now_ = t;
    }

private:
    Timestamp now_;
};

}  // namespace pubmon
