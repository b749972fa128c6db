#pragma once

#include <algorithm>
#include <atomic>
#include <functional>
#include <future>
#include <memory>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "pubmon/peer_wire.hpp"
#include "pubmon/portal_ingest.hpp"
#include "pubmon/records.hpp"
#include "pubmon/store.hpp"
#include "pubmon/tracker_client.hpp"
#include "pubmon/transport.hpp"

namespace pubmon {

// ---------------------------------------------------------------------------
// Identification at swarm birth

using Prober = std::function<ProbeResult(const Endpoint&)>;

struct IdentificationOutcome {
    PublisherIdentification id;
    std::vector<ProbeResult> probes;  // in peer-list order
};

/// Decides who seeded the swarm first, from the first tracker reply. The bitfield check
/// only runs when the tracker reports a single seeder and fewer than `max_peers` peers;
/// all returned peers are probed at once.
inline IdentificationOutcome identify_initial_publisher(const TorrentMeta& meta, const std::string& username,
                                                        const AnnounceResult& first, const Prober& prober,
                                                        int max_peers = 20) {
    IdentificationOutcome out;
    out.id.infohash = to_hex(meta.infohash);
    out.id.username = username;
    const auto n_peers = static_cast<std::int64_t>(first.peers.size());
    auto give_up = [&out](NoIpReason r) {
        out.id.method = IdMethod::none;
        out.id.reason_no_ip = r;
        return out;
    };
    if (first.seeders == 0) return give_up(NoIpReason::no_seed_reported);
    if (n_peers >= max_peers) return give_up(first.seeders > 1 ? NoIpReason::pre_published : NoIpReason::too_many_peers);
    if (first.seeders > 1) return give_up(NoIpReason::multi_seed);

    std::vector<std::future<ProbeResult>> pending;
    pending.reserve(first.peers.size());
    for (const auto& ep : first.peers) pending.push_back(std::async(std::launch::async, prober, ep));
    for (auto& f : pending) out.probes.push_back(f.get());

    std::vector<Endpoint> seeds;
    bool unreachable = false;
    for (const auto& p : out.probes) {
        if (p.outcome == ProbeOutcome::seed) seeds.push_back(p.endpoint);
        if (p.outcome == ProbeOutcome::refused || p.outcome == ProbeOutcome::timeout) unreachable = true;
    }
    if (seeds.size() == 1) {
        out.id.ip = seeds.front().ip;
        out.id.method = IdMethod::single_seed_bitfield;
        return out;
    }
    if (seeds.size() > 1) return give_up(NoIpReason::multi_seed);
    return give_up(unreachable ? NoIpReason::nat : NoIpReason::no_seed_reported);
}

/// True once the last `n` replies, all vantages merged in time order, carried no peers.
inline bool should_terminate(std::span<const SwarmSnapshot> history, int n = 10) {
    if (n <= 0 || history.size() < static_cast<std::size_t>(n)) return false;
    return std::all_of(history.end() - n, history.end(), [](const SwarmSnapshot& s) { return s.empty; });
}

// ---------------------------------------------------------------------------
// Per-swarm lifecycle

struct SwarmContext {
    Transport& transport;
    PeerDialer& dialer;
    RateLimiter& limiter;
    EventSink& sink;
    const MonitorConfig& config;
    const std::vector<VantageIdentity>& vantages;
};

/// One torrent from feed detection to its terminal status. step() does at most one
/// network round (fetch, or one announce plus its probes) and says when to call it next.
class SwarmTask {
public:
    SwarmTask(FeedItem item, Timestamp detected_at) : item_(std::move(item)), detected_at_(detected_at) {}

    /// Returns the next wake-up time, or nullopt once a terminal status was written.
    std::optional<Timestamp> step(SwarmContext& ctx, Timestamp now) {
        if (terminal_) return std::nullopt;
        switch (phase_) {
            case Phase::fetch: return do_fetch(ctx, now);
            case Phase::first_announce:
            case Phase::track: return do_announce(ctx, now);
        }
        return std::nullopt;
    }

    /// Forced stop (monitor shutting down). Writes the terminal status if none exists yet.
    void abort(SwarmContext& ctx, Timestamp now, const std::string& reason) {
        if (terminal_) return;
        flush_identification(ctx, now);
        finish(ctx, now, TerminalKind::aborted, reason);
    }

    [[nodiscard]] bool done() const { return terminal_.has_value(); }
    [[nodiscard]] const std::optional<TerminalStatus>& terminal() const { return terminal_; }
    [[nodiscard]] const FeedItem& item() const { return item_; }
    [[nodiscard]] const std::vector<SwarmSnapshot>& history() const { return history_; }
    [[nodiscard]] const std::optional<PublisherIdentification>& identification() const { return identified_; }

private:
    enum class Phase { fetch, first_announce, track };

    std::optional<Timestamp> do_fetch(SwarmContext& ctx, Timestamp now) {
        started_at_ = now;
        FetchOutcome f = fetch_torrent(ctx.transport, item_, ctx.config.fetch_retries, ctx.config.http_timeout);
        if (f.status != FetchStatus::ok) {
            finish(ctx, now,
                   f.status == FetchStatus::parse_failed ? TerminalKind::parse_failed : TerminalKind::fetch_failed,
                   f.reason);
            return std::nullopt;
        }
        meta_ = std::move(*f.meta);
        hex_ = to_hex(meta_.infohash);
        for (const auto& v : ctx.vantages) built_.push_back(build_announce(meta_, v, ctx.config.numwant));
        next_due_.assign(ctx.vantages.size(), detected_at_ + ctx.config.first_query_delay);
        last_success_ = now;
        phase_ = Phase::first_announce;
        return std::max(now, detected_at_ + ctx.config.first_query_delay);
    }

    std::optional<Timestamp> do_announce(SwarmContext& ctx, Timestamp now) {
        std::size_t v = pick_vantage();
        if (next_due_[v] > now) return next_due_[v];
        RateDecision d = ctx.limiter.acquire(RateKey{ctx.vantages[v].id, meta_.announce_url, hex_}, now);
        if (!d.proceed) {
            next_due_[v] = d.wait_until;
            return earliest_due();
        }
        next_due_[v] = now + ctx.limiter.min_interval(meta_.announce_url);

        AnnounceResult res;
        try {
            res = announce(ctx.transport, built_[v], ctx.vantages[v].id, now, ctx.config.http_timeout);
        } catch (const Error& e) {
            if (now - last_success_ >= ctx.config.dead_time) {
                flush_identification(ctx, now);
                finish(ctx, now, TerminalKind::aborted, std::string("tracker unreachable: ") + e.what());
                return std::nullopt;
            }
            return earliest_due();
        }
        last_success_ = now;

        if (phase_ == Phase::first_announce) {
            first_ = res;
            first_at_ = now;
            phase_ = Phase::track;
            // Spread the vantages evenly over one rate-limit period.
            auto interval = ctx.limiter.min_interval(meta_.announce_url);
            auto k = static_cast<std::int64_t>(ctx.vantages.size());
            for (std::size_t u = 0; u < ctx.vantages.size(); ++u)
                if (u != v) next_due_[u] = now + interval * static_cast<std::int64_t>((u + ctx.vantages.size() - v) % ctx.vantages.size()) / k;
        }
        if (!identified_) try_identify(ctx, res, now);

        SwarmSnapshot snap{hex_, now, ctx.vantages[v].id, res.seeders, res.leechers, res.peers, res.peers.empty()};
        ctx.sink.append({now, snap});
        history_.push_back(std::move(snap));
        if (should_terminate(history_, ctx.config.empty_replies_to_stop)) {
            flush_identification(ctx, now);
            finish(ctx, now, TerminalKind::terminated, "");
            return std::nullopt;
        }
        return earliest_due();
    }

    void try_identify(SwarmContext& ctx, const AnnounceResult& res, Timestamp now) {
        Prober prober = [&ctx, this, now](const Endpoint& ep) {
            return probe(ctx.dialer, ep, meta_.infohash, ctx.vantages.front().peer_id, meta_.piece_count, now,
                         ctx.config.probe_timeout);
        };
        IdentificationOutcome o = identify_initial_publisher(meta_, item_.username, res, prober,
                                                             ctx.config.max_probe_peers);
        for (const auto& p : o.probes) ctx.sink.append({now, ProbeRecord{hex_, p}});
        pending_id_ = o.id;
        // With a retry window, a swarm that showed no seed yet is asked again later.
        bool retry = o.id.reason_no_ip == NoIpReason::no_seed_reported && now - first_at_ < ctx.config.id_retry_window;
        if (!retry) flush_identification(ctx, now);
    }

    void flush_identification(SwarmContext& ctx, Timestamp now) {
        if (identified_ || !pending_id_) return;
        identified_ = pending_id_;
        IdentificationRecord r;
        r.portal_id = item_.portal_id;
        r.torrent_url = item_.torrent_url;
        r.id = *identified_;
        r.name = meta_.name;
        r.piece_count = meta_.piece_count;
        r.piece_length = meta_.piece_length;
        r.total_size = meta_.total_size;
        r.announce_url = meta_.announce_url;
        r.file_names = meta_.file_names;
        r.first_seeders = first_.seeders;
        r.first_leechers = first_.leechers;
        r.first_peer_count = static_cast<std::int64_t>(first_.peers.size());
        ctx.sink.append({now, r});
    }

    void finish(SwarmContext& ctx, Timestamp now, TerminalKind kind, std::string reason) {
        TerminalStatus t{hex_.empty() ? item_.torrent_url : hex_,
                         kind,
                         static_cast<std::int64_t>(history_.size()),
                         started_at_.value_or(now),
                         now,
                         std::move(reason)};
        ctx.sink.append({now, t});
        terminal_ = std::move(t);
    }

    [[nodiscard]] std::size_t pick_vantage() const {
        return static_cast<std::size_t>(std::min_element(next_due_.begin(), next_due_.end()) - next_due_.begin());
    }
    [[nodiscard]] Timestamp earliest_due() const { return *std::min_element(next_due_.begin(), next_due_.end()); }

    FeedItem item_;
    Timestamp detected_at_;
    Phase phase_ = Phase::fetch;
    TorrentMeta meta_;
    std::string hex_;
    std::vector<BuiltAnnounce> built_;
    std::vector<Timestamp> next_due_;
    std::optional<Timestamp> started_at_;
    Timestamp last_success_{};
    Timestamp first_at_{};
    AnnounceResult first_;
    std::optional<PublisherIdentification> pending_id_;
    std::optional<PublisherIdentification> identified_;
    std::vector<SwarmSnapshot> history_;
    std::optional<TerminalStatus> terminal_;
};

/// Drives one swarm to completion on its own. Meant for tests and single-torrent runs;
/// the monitor interleaves many tasks instead.
inline TerminalStatus run_swarm(SwarmTask& task, SwarmContext& ctx, TimeSource& clock) {
    for (;;) {
        auto next = task.step(ctx, clock.now());
        if (!next) return *task.terminal();
        clock.sleep_until(*next);
    }
}

// ---------------------------------------------------------------------------
// Orchestration

/// Source of portal-side account removals (the fake-content signal).
class RemovalSource {
public:
    virtual ~RemovalSource() = default;
    /// Removals that became known at or before `now` and were not returned before.
    virtual std::vector<PortalRemoval> poll(Timestamp now) = 0;
};

struct MonitorStats {
    std::int64_t feed_polls = 0;
    std::int64_t feed_errors = 0;
    std::int64_t items = 0;
    std::int64_t terminated = 0;
    std::int64_t aborted = 0;
    std::int64_t fetch_failed = 0;
    std::int64_t parse_failed = 0;
};

/// Polls one portal, spawns a SwarmTask per new item and runs everything off a single
/// timer queue. With a virtual clock the run is sequential and deterministic; with the
/// system clock, tasks that fall due together run on worker threads.
class Monitor {
public:
    Monitor(PortalProfile profile, MonitorConfig config, Transport& transport, PeerDialer& dialer, TimeSource& clock,
            EventSink& sink, IngestState& state, RemovalSource* removals = nullptr)
        : profile_(std::move(profile)),
          config_(std::move(config)),
          clock_(clock),
          state_(state),
          removals_(removals),
          limiter_(config_.min_interval) {
        if (config_.vantages < 1) throw ConfigError("need at least one vantage");
        for (int i = 0; i < config_.vantages; ++i)
            vantages_.push_back(VantageIdentity::make("v" + std::to_string(i), static_cast<std::uint16_t>(6881 + i)));
        ctx_ = std::make_unique<SwarmContext>(SwarmContext{transport, dialer, limiter_, sink, config_, vantages_});
    }

    /// Polls the feed until `stop_polling_at`, then keeps tracking open swarms until they
    /// end or `hard_stop` passes (open swarms are then closed as aborted).
    MonitorStats run(Timestamp stop_polling_at, std::optional<Timestamp> hard_stop = std::nullopt,
                     bool parallel = false) {
        push(clock_.now(), poller_id);
        while (!queue_.empty()) {
            if (stop_flag_ && stop_flag_->load()) break;
            Entry e = queue_.top();
            if (hard_stop && e.at > *hard_stop) break;
            clock_.sleep_until(e.at);
            Timestamp now = clock_.now();
            std::vector<Entry> batch;
            while (!queue_.empty() && queue_.top().at <= now) {
                batch.push_back(queue_.top());
                queue_.pop();
            }
            std::vector<std::size_t> due;
            for (const auto& b : batch) {
                if (b.task == poller_id)
                    poll_once(now, stop_polling_at);
                else
                    due.push_back(b.task);
            }
            run_tasks(due, now, parallel);
        }
        Timestamp now = clock_.now();
        for (auto& t : tasks_) {
            if (!t->done()) {
                t->abort(*ctx_, now, "monitor stopped");
                ++stats_.aborted;
            }
        }
        return stats_;
    }

    /// Checked between rounds; once set, run() closes open swarms and returns.
    void set_stop_flag(const std::atomic<bool>* flag) { stop_flag_ = flag; }

    [[nodiscard]] const std::vector<VantageIdentity>& vantages() const { return vantages_; }
    [[nodiscard]] const std::vector<std::unique_ptr<SwarmTask>>& tasks() const { return tasks_; }

private:
    static constexpr std::size_t poller_id = static_cast<std::size_t>(-1);

    struct Entry {
        Timestamp at;
        std::uint64_t seq;
        std::size_t task;
        bool operator>(const Entry& o) const { return at != o.at ? at > o.at : seq > o.seq; }
    };

    void push(Timestamp at, std::size_t task) { queue_.push({at, seq_++, task}); }

    void poll_once(Timestamp now, Timestamp stop_polling_at) {
        ++stats_.feed_polls;
        if (removals_)
            for (auto& r : removals_->poll(now)) ctx_->sink.append({now, r});
        PollResult pr = poll(ctx_->transport, profile_, state_, now, config_.http_timeout);
        if (pr.error) {
            ++stats_.feed_errors;
            ++feed_failures_;
        } else {
            feed_failures_ = 0;
        }
        for (auto& item : pr.items) {
            ctx_->sink.append({now, item});
            ++stats_.items;
            tasks_.push_back(std::make_unique<SwarmTask>(std::move(item), now));
            push(now, tasks_.size() - 1);
        }
        Timestamp next = now + poll_backoff(config_.poll_interval, feed_failures_);
        if (next <= stop_polling_at) push(next, poller_id);
    }

    void run_tasks(const std::vector<std::size_t>& due, Timestamp now, bool parallel) {
        std::vector<std::optional<Timestamp>> next(due.size());
        if (parallel && due.size() > 1) {
            std::vector<std::future<std::optional<Timestamp>>> fs;
            for (std::size_t id : due)
                fs.push_back(std::async(std::launch::async, [this, id, now] { return tasks_[id]->step(*ctx_, now); }));
            for (std::size_t i = 0; i < fs.size(); ++i) next[i] = fs[i].get();
        } else {
            for (std::size_t i = 0; i < due.size(); ++i) next[i] = tasks_[due[i]]->step(*ctx_, now);
        }
        for (std::size_t i = 0; i < due.size(); ++i) {
            if (next[i]) {
                push(std::max(*next[i], now), due[i]);
            } else {
                count_terminal(*tasks_[due[i]]->terminal());
            }
        }
    }

    void count_terminal(const TerminalStatus& t) {
        switch (t.status) {
            case TerminalKind::terminated: ++stats_.terminated; break;
            case TerminalKind::aborted: ++stats_.aborted; break;
            case TerminalKind::fetch_failed: ++stats_.fetch_failed; break;
            case TerminalKind::parse_failed: ++stats_.parse_failed; break;
        }
    }

    PortalProfile profile_;
    MonitorConfig config_;
    TimeSource& clock_;
    IngestState& state_;
    RemovalSource* removals_;
    RateLimiter limiter_;
    std::vector<VantageIdentity> vantages_;
    std::unique_ptr<SwarmContext> ctx_;
    std::vector<std::unique_ptr<SwarmTask>> tasks_;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue_;
    std::uint64_t seq_ = 0;
    int feed_failures_ = 0;
    const std::atomic<bool>* stop_flag_ = nullptr;
    MonitorStats stats_;
};

}  // namespace pubmon
