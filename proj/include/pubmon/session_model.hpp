#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pubmon/common.hpp"

namespace pubmon {

/// Probability that a peer present in a swarm of `population` shows up at least once in
/// `queries` consecutive tracker replies of `sample_size` random peers each.
inline double discovery_probability(double population, double sample_size, int queries) {
    if (population < 1 || sample_size < 0 || queries < 1)
        throw std::domain_error("discovery_probability: need population >= 1, sample_size >= 0, queries >= 1");
    if (sample_size >= population) return 1.0;
    return 1.0 - std::pow(1.0 - sample_size / population, queries);
}

/// Smallest number of queries whose discovery probability reaches `target`.
inline int required_queries(double population, double sample_size, double target) {
    if (!(target > 0.0 && target < 1.0)) throw std::domain_error("required_queries: target must be in (0, 1)");
    if (sample_size >= population) return 1;
    if (sample_size <= 0) throw std::domain_error("required_queries: sample_size must be positive");
    constexpr int limit = 10'000'000;
    for (int m = 1; m <= limit; ++m)
        if (discovery_probability(population, sample_size, m) >= target) return m;
    throw std::domain_error("required_queries: target unreachable");
}

inline Seconds round_up_to_hour(Seconds d) {
    auto h = (d.count() + 3599) / 3600;
    return Seconds{h * 3600};
}

/// Parameters of the presence-detection model and the offline threshold derived from them.
struct DiscoveryModel {
    double population = 165;  // N: assumed upper bound on concurrent swarm size
    double sample_size = 50;  // W: peers returned per tracker reply
    double target = 0.99;     // P
    Seconds inter_query = Minutes{18};
    // Explicit threshold (e.g. 2h / 6h sensitivity runs); otherwise derived.
    std::optional<Seconds> threshold_override;

    [[nodiscard]] int queries() const { return required_queries(population, sample_size, target); }

    [[nodiscard]] Seconds offline_threshold() const {
        if (threshold_override) return *threshold_override;
        return round_up_to_hour(inter_query * queries());
    }

    void validate() const {
        if (!(sample_size > 0) || !(population >= 1) || !(target > 0 && target < 1) || inter_query.count() <= 0)
            throw ConfigError("invalid discovery model");
        if (threshold_override && threshold_override->count() <= 0) throw ConfigError("threshold must be positive");
    }

    /// Overrides like "N=165,W=50,P=0.99,dt=18m[,threshold=6h]"; absent keys keep defaults.
    static DiscoveryModel parse(std::string_view spec) {
        DiscoveryModel m;
        while (!spec.empty()) {
            auto comma = spec.find(',');
            std::string_view item = spec.substr(0, comma);
            auto eq = item.find('=');
            if (eq == std::string_view::npos) throw ConfigError("model override needs key=value: " + std::string(item));
            std::string key(item.substr(0, eq));
            std::string value(item.substr(eq + 1));
            try {
                if (key == "N")
                    m.population = std::stod(value);
                else if (key == "W")
                    m.sample_size = std::stod(value);
                else if (key == "P")
                    m.target = std::stod(value);
                else if (key == "dt")
                    m.inter_query = parse_duration(value);
                else if (key == "threshold")
                    m.threshold_override = parse_duration(value);
                else
                    throw ConfigError("unknown model key: " + key);
            } catch (const std::logic_error&) {
                throw ConfigError("bad model value for " + key + ": " + value);
            }
            if (comma == std::string_view::npos) break;
            spec = spec.substr(comma + 1);
        }
        m.validate();
        return m;
    }
};

inline Seconds offline_threshold(const DiscoveryModel& model) { return model.offline_threshold(); }

/// A presence interval of one publisher in one swarm.
struct SessionRecord {
    std::string publisher_id;
    std::string infohash;
    Timestamp start{};
    Timestamp end{};
    std::int64_t observation_count = 0;

    [[nodiscard]] Seconds duration() const { return end - start; }
    friend bool operator==(const SessionRecord&, const SessionRecord&) = default;
};

/// Splits sorted sighting times into sessions: a gap of at least `threshold` ends one.
/// Bounds are the first and last sighting; nothing is padded.
inline std::vector<SessionRecord> reconstruct_sessions(std::span<const Timestamp> observations, Seconds threshold,
                                                       const std::string& publisher_id = {},
                                                       const std::string& infohash = {}) {
    if (threshold.count() <= 0) throw std::domain_error("reconstruct_sessions: threshold must be positive");
    std::vector<SessionRecord> sessions;
    for (std::size_t i = 0; i < observations.size(); ++i) {
        Timestamp t = observations[i];
        if (i > 0 && t < observations[i - 1]) throw std::domain_error("reconstruct_sessions: observations not sorted");
        if (sessions.empty() || t - sessions.back().end >= threshold) {
            sessions.push_back({publisher_id, infohash, t, t, 1});
        } else {
            sessions.back().end = t;
            ++sessions.back().observation_count;
        }
    }
    return sessions;
}

/// Total time a publisher spent in one swarm.
inline Seconds seeding_time(std::span<const SessionRecord> sessions) {
    Seconds total{0};
    for (const auto& s : sessions) total += s.duration();
    return total;
}

/// Measure of the union of closed intervals [start, end].
inline Seconds aggregated_session_time(std::span<const SessionRecord> sessions) {
    std::vector<std::pair<Timestamp, Timestamp>> iv;
    iv.reserve(sessions.size());
    for (const auto& s : sessions) iv.emplace_back(s.start, s.end);
    std::sort(iv.begin(), iv.end());
    Seconds total{0};
    std::size_t i = 0;
    while (i < iv.size()) {
        Timestamp lo = iv[i].first;
        Timestamp hi = iv[i].second;
        for (++i; i < iv.size() && iv[i].first <= hi; ++i) hi = std::max(hi, iv[i].second);
        total += hi - lo;
    }
    return total;
}

namespace detail {

using TickRange = std::pair<std::int64_t, std::int64_t>;  // [first, last) tick index

/// Session [s, e) covers ticks floor(s/tick) .. ceil(e/tick)-1; zero-length sessions occupy their start tick.
inline TickRange to_ticks(const SessionRecord& s, Seconds tick) {
    auto floor_div = [](std::int64_t a, std::int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
    std::int64_t a = floor_div(s.start.time_since_epoch().count(), tick.count());
    std::int64_t b = -floor_div(-s.end.time_since_epoch().count(), tick.count());
    if (b <= a) b = a + 1;
    return {a, b};
}

inline std::vector<TickRange> merge(std::vector<TickRange> r) {
    std::sort(r.begin(), r.end());
    std::vector<TickRange> out;
    for (const auto& x : r) {
        if (!out.empty() && x.first <= out.back().second)
            out.back().second = std::max(out.back().second, x.second);
        else
            out.push_back(x);
    }
    return out;
}

inline std::int64_t measure(const std::vector<TickRange>& merged) {
    std::int64_t n = 0;
    for (const auto& x : merged) n += x.second - x.first;
    return n;
}

}  // namespace detail

/// Average number of swarms seeded at once, sampled every `tick` over the times the
/// publisher was active anywhere. Sessions are grouped into swarms by `infohash`.
inline double parallel_torrents(std::span<const SessionRecord> sessions, Seconds tick = Minutes{1}) {
    if (tick.count() <= 0) throw std::domain_error("parallel_torrents: tick must be positive");
    if (sessions.empty()) return 0.0;
    std::map<std::string, std::vector<detail::TickRange>> per_swarm;
    std::vector<detail::TickRange> all;
    for (const auto& s : sessions) {
        auto r = detail::to_ticks(s, tick);
        per_swarm[s.infohash].push_back(r);
        all.push_back(r);
    }
    std::int64_t covered = 0;
    for (auto& [_, ranges] : per_swarm) covered += detail::measure(detail::merge(std::move(ranges)));
    std::int64_t active = detail::measure(detail::merge(std::move(all)));
    return static_cast<double>(covered) / static_cast<double>(active);
}

}  // namespace pubmon
