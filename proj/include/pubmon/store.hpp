#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "pubmon/records.hpp"

namespace pubmon {

inline constexpr int schema_version = 1;

using EventPayload =
    std::variant<FeedItem, IdentificationRecord, SwarmSnapshot, ProbeRecord, PortalRemoval, TerminalStatus>;

enum class EventKind { feed_item, identification, snapshot, probe, portal_removal, terminal_status };

inline const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::feed_item: return "feed_item";
        case EventKind::identification: return "identification";
        case EventKind::snapshot: return "snapshot";
        case EventKind::probe: return "probe";
        case EventKind::portal_removal: return "portal_removal";
        case EventKind::terminal_status: return "terminal_status";
    }
    return "?";
}

inline EventKind event_kind_from_string(std::string_view s) {
    for (auto k : {EventKind::feed_item, EventKind::identification, EventKind::snapshot, EventKind::probe,
                   EventKind::portal_removal, EventKind::terminal_status})
        if (s == to_string(k)) return k;
    throw ParseError("unknown event kind: " + std::string(s));
}

struct EventRecord {
    Timestamp ts{};
    EventPayload payload;

    [[nodiscard]] EventKind kind() const { return static_cast<EventKind>(payload.index()); }
};

inline nlohmann::json to_json(const EventRecord& e) {
    nlohmann::json body;
    std::visit([&body](const auto& p) { body = p; }, e.payload);
    return {{"schema_version", schema_version}, {"ts", format_iso8601(e.ts)}, {"kind", to_string(e.kind())},
            {"payload", std::move(body)}};
}

/// Parses and validates one log line. Anything that would not round-trip is rejected.
inline EventRecord event_from_json(const nlohmann::json& j) {
    try {
        if (j.at("schema_version").get<int>() != schema_version) throw ParseError("unsupported schema_version");
        EventRecord e;
        e.ts = parse_iso8601(j.at("ts").get<std::string>());
        const auto& body = j.at("payload");
        switch (event_kind_from_string(j.at("kind").get<std::string>())) {
            case EventKind::feed_item: e.payload = body.get<FeedItem>(); break;
            case EventKind::identification: e.payload = body.get<IdentificationRecord>(); break;
            case EventKind::snapshot: e.payload = body.get<SwarmSnapshot>(); break;
            case EventKind::probe: e.payload = body.get<ProbeRecord>(); break;
            case EventKind::portal_removal: e.payload = body.get<PortalRemoval>(); break;
            case EventKind::terminal_status: e.payload = body.get<TerminalStatus>(); break;
        }
        return e;
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(std::string("malformed event: ") + ex.what());
    }
}

inline std::string to_line(const EventRecord& e) { return to_json(e).dump(); }

inline EventRecord event_from_line(std::string_view line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& ex) {
        throw ParseError(std::string("event line is not JSON: ") + ex.what());
    }
    return event_from_json(j);
}

class EventSink {
public:
    virtual ~EventSink() = default;
    /// Returns the record's position in the log; positions strictly increase.
    virtual std::uint64_t append(const EventRecord& e) = 0;
};

/// In-memory sink; used by tests and as the analytics input after loading.
class MemorySink final : public EventSink {
public:
    std::uint64_t append(const EventRecord& e) override {
        std::lock_guard lock(mu_);
        events_.push_back(e);
        return events_.size() - 1;
    }
    [[nodiscard]] const std::vector<EventRecord>& events() const { return events_; }

private:
    std::mutex mu_;
    std::vector<EventRecord> events_;
};

enum class Durability {
    fsync,  // fsync before append returns
    flush,  // handed to the kernel before append returns; fsync on close
};

/// Append-only JSON-lines file, one event per line. A torn final line (crash mid-write)
/// is discarded when the log is reopened.
class EventLog final : public EventSink {
public:
    explicit EventLog(const std::filesystem::path& path, Durability durability = Durability::fsync)
        : path_(path), durability_(durability) {
        if (std::filesystem::exists(path)) next_ = recover();
        fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
        if (fd_ < 0) throw Error("cannot open event log " + path.string() + ": " + std::strerror(errno));
    }

    EventLog(const EventLog&) = delete;
    EventLog& operator=(const EventLog&) = delete;

    ~EventLog() override {
        if (fd_ >= 0) {
            ::fsync(fd_);
            ::close(fd_);
        }
    }

    std::uint64_t append(const EventRecord& e) override {
        // Round-trip through the validator so nothing unreadable ever reaches disk.
        std::string line = to_line(e);
        (void)event_from_line(line);
        line.push_back('\n');
        std::lock_guard lock(mu_);
        const char* p = line.data();
        std::size_t left = line.size();
        while (left > 0) {
            ssize_t n = ::write(fd_, p, left);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw Error("event log write failed: " + std::string(std::strerror(errno)));
            }
            p += n;
            left -= static_cast<std::size_t>(n);
        }
        if (durability_ == Durability::fsync && ::fsync(fd_) != 0)
            throw Error("event log fsync failed: " + std::string(std::strerror(errno)));
        return next_++;
    }

    [[nodiscard]] std::uint64_t size() const { return next_; }

private:
    std::uint64_t recover() {
        std::ifstream in(path_, std::ios::binary);
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        auto last_newline = content.rfind('\n');
        std::size_t keep = last_newline == std::string::npos ? 0 : last_newline + 1;
        if (keep != content.size()) std::filesystem::resize_file(path_, keep);
        return static_cast<std::uint64_t>(std::count(content.begin(), content.begin() + static_cast<long>(keep), '\n'));
    }

    std::filesystem::path path_;
    Durability durability_;
    int fd_ = -1;
    std::mutex mu_;
    std::uint64_t next_ = 0;
};

/// Reads a JSON-lines log. A trailing line without newline is treated as torn and skipped.
inline std::vector<EventRecord> load_events(std::istream& in) {
    std::vector<EventRecord> out;
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < content.size()) {
        auto nl = content.find('\n', pos);
        if (nl == std::string::npos) break;
        ++line_no;
        std::string_view line(content.data() + pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        try {
            out.push_back(event_from_line(line));
        } catch (const ParseError& e) {
            throw ParseError("log line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<EventRecord> load_events(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open event log " + path.string());
    return load_events(in);
}

// --- export ------------------------------------------------------------------

enum class ExportFormat { jsonl, csv };

inline ExportFormat export_format_from_string(std::string_view s) {
    if (s == "jsonl") return ExportFormat::jsonl;
    if (s == "csv") return ExportFormat::csv;
    throw ConfigError("unknown export format: " + std::string(s));
}

struct ExportFilter {
    std::set<EventKind> kinds;  // empty = all kinds

    [[nodiscard]] bool accepts(const EventRecord& e) const { return kinds.empty() || kinds.contains(e.kind()); }
};

inline void export_jsonl(const std::vector<EventRecord>& events, std::ostream& out, const ExportFilter& filter = {}) {
    for (const auto& e : events)
        if (filter.accepts(e)) out << to_line(e) << '\n';
}

namespace detail {

inline std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

inline std::string join(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

}  // namespace detail

/// Column layout of each kind's CSV export. Multi-valued cells are ';'-joined.
inline std::vector<std::string> csv_columns(EventKind k) {
    switch (k) {
        case EventKind::feed_item:
            return {"ts", "portal_id", "torrent_url", "username", "title", "category", "subcategory", "content_size",
                    "published_at"};
        case EventKind::identification:
            return {"ts", "infohash", "username", "ip", "method", "reason_no_ip", "name", "piece_count", "total_size",
                    "torrent_url"};
        case EventKind::snapshot:
            return {"ts", "infohash", "observed_at", "vantage_id", "seeders", "leechers", "peer_count", "peers"};
        case EventKind::probe: return {"ts", "infohash", "endpoint", "outcome", "pieces_have"};
        case EventKind::portal_removal: return {"ts", "portal_id", "username", "removed_at"};
        case EventKind::terminal_status:
            return {"ts", "subject", "status", "snapshot_count", "started_at", "ended_at", "reason"};
    }
    return {};
}

inline std::vector<std::string> csv_row(const EventRecord& e) {
    std::vector<std::string> r{format_iso8601(e.ts)};
    std::visit(
        [&r](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, FeedItem>) {
                r.insert(r.end(), {p.portal_id, p.torrent_url, p.username, p.title, p.category, p.subcategory,
                                   std::to_string(p.content_size), format_iso8601(p.published_at)});
            } else if constexpr (std::is_same_v<T, IdentificationRecord>) {
                r.insert(r.end(), {p.id.infohash, p.id.username, p.id.ip ? p.id.ip->to_string() : "",
                                   to_string(p.id.method), p.id.reason_no_ip ? to_string(*p.id.reason_no_ip) : "",
                                   p.name, std::to_string(p.piece_count), std::to_string(p.total_size),
                                   p.torrent_url});
            } else if constexpr (std::is_same_v<T, SwarmSnapshot>) {
                std::vector<std::string> peers;
                for (const auto& ep : p.peers) peers.push_back(ep.to_string());
                r.insert(r.end(), {p.infohash, format_iso8601(p.observed_at), p.vantage_id, std::to_string(p.seeders),
                                   std::to_string(p.leechers), std::to_string(p.peers.size()),
                                   detail::join(peers, ';')});
            } else if constexpr (std::is_same_v<T, ProbeRecord>) {
                r.insert(r.end(), {p.infohash, p.result.endpoint.to_string(), to_string(p.result.outcome),
                                   p.result.pieces_have ? std::to_string(*p.result.pieces_have) : ""});
            } else if constexpr (std::is_same_v<T, PortalRemoval>) {
                r.insert(r.end(), {p.portal_id, p.username, format_iso8601(p.removed_at)});
            } else {
                r.insert(r.end(), {p.subject, to_string(p.status), std::to_string(p.snapshot_count),
                                   format_iso8601(p.started_at), format_iso8601(p.ended_at), p.reason});
            }
        },
        e.payload);
    return r;
}

/// Writes one CSV per event kind into `dir` (`<kind>.csv`), header row first. Returns the
/// files written.
inline std::vector<std::filesystem::path> export_csv(const std::vector<EventRecord>& events,
                                                     const std::filesystem::path& dir,
                                                     const ExportFilter& filter = {}) {
    std::filesystem::create_directories(dir);
    std::map<EventKind, std::ostringstream> buffers;
    for (const auto& e : events) {
        if (!filter.accepts(e)) continue;
        auto [it, fresh] = buffers.try_emplace(e.kind());
        if (fresh) {
            std::vector<std::string> cols = csv_columns(e.kind());
            it->second << detail::join(cols, ',') << '\n';
        }
        std::vector<std::string> cells;
        for (const auto& c : csv_row(e)) cells.push_back(detail::csv_field(c));
        it->second << detail::join(cells, ',') << '\n';
    }
    std::vector<std::filesystem::path> written;
    for (const auto& [kind, buf] : buffers) {
        auto path = dir / (std::string(to_string(kind)) + ".csv");
        std::ofstream out(path, std::ios::trunc | std::ios::binary);
        out << buf.str();
        if (!out) throw Error("cannot write " + path.string());
        written.push_back(path);
    }
    return written;
}

}  // namespace pubmon
