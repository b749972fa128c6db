// pubmon: monitor a portal, simulate a world, analyze and query event logs.

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "pubmon/live_transport.hpp"
#include "pubmon/publisher_analytics.hpp"
#include "pubmon/simnet.hpp"
#include "pubmon/store.hpp"
#include "pubmon/swarm_monitor.hpp"

namespace {

using namespace pubmon;

constexpr int exit_ok = 0;
constexpr int exit_input = 1;
constexpr int exit_runtime = 2;

/// Reads portal removals appended by an external checker (one JSON object per line).
class FileRemovalSource final : public RemovalSource {
public:
    explicit FileRemovalSource(std::string path) : path_(std::move(path)) {}

    std::vector<PortalRemoval> poll(Timestamp now) override {
        std::vector<PortalRemoval> out;
        std::ifstream in(path_);
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (n++ < consumed_) continue;
            auto r = nlohmann::json::parse(line).get<PortalRemoval>();
            if (r.removed_at > now) break;
            out.push_back(r);
            ++consumed_;
        }
        return out;
    }

private:
    std::string path_;
    std::size_t consumed_ = 0;
};

struct AnalyzeArgs {
    std::string log;
    std::string geoip;
    std::string model = "N=165,W=50,P=0.99,dt=18m";
    std::string annotations;
    int top_k = 100;
    int fake_threshold = 5;
    std::string tick = "1m";
    int seeding_sample = 0;
};

void add_analysis_flags(CLI::App* cmd, AnalyzeArgs& a) {
    cmd->add_option("--log", a.log, "event log (JSON lines)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--geoip", a.geoip, "ISP database CSV: cidr,isp_name,isp_type,country,city")
        ->check(CLI::ExistingFile);
    cmd->add_option("--model", a.model, "discovery model, e.g. N=165,W=50,P=0.99,dt=18m[,threshold=6h]");
    cmd->add_option("--annotations", a.annotations, "JSON object username -> business class")
        ->check(CLI::ExistingFile);
    cmd->add_option("--top-k", a.top_k, "size of the ranking the Top group is cut from")->check(CLI::PositiveNumber);
    cmd->add_option("--fake-threshold", a.fake_threshold, "usernames per IP that mark the IP as fake")
        ->check(CLI::Range(2, 1000000));
    cmd->add_option("--tick", a.tick, "sampling step for parallel torrents");
    cmd->add_option("--seeding-sample", a.seeding_sample, "compute seeding metrics for N random publishers only");
}

Dataset load_dataset(const AnalyzeArgs& a, AnalyticsOptions& opt) {
    opt.model = DiscoveryModel::parse(a.model);
    opt.top_k = a.top_k;
    opt.fake_threshold = a.fake_threshold;
    opt.tick = parse_duration(a.tick);
    opt.seeding_sample = a.seeding_sample;
    if (!a.annotations.empty()) opt.annotations = load_annotations(a.annotations);
    GeoDatabase geo = a.geoip.empty() ? GeoDatabase{} : GeoDatabase::load_file(a.geoip);
    auto events = load_events(a.log);
    return resolve_identities(events, geo, opt);
}

std::atomic<bool> g_stop{false};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Track publishers of BitTorrent content: monitor, simulate, analyze, query."};
    app.require_subcommand(1);

    // monitor
    std::string portal_path, out_path, state_path, duration = "24h", grace = "7d", removals_path;
    bool no_fsync = false;
    auto* monitor = app.add_subcommand("monitor", "poll a portal feed and track every new swarm");
    monitor->add_option("--portal", portal_path, "portal profile (INI)")->required()->check(CLI::ExistingFile);
    monitor->add_option("--out", out_path, "event log to append to")->required();
    monitor->add_option("--state", state_path, "ingest state file (default: <out>.state)");
    monitor->add_option("--duration", duration, "how long to keep polling the feed");
    monitor->add_option("--grace", grace, "extra time for open swarms after polling stops");
    monitor->add_option("--removals", removals_path, "JSON lines of portal account removals");
    monitor->add_flag("--no-fsync", no_fsync, "flush without fsync on every event");

    // simulate
    std::string world_path, sim_out, truth_path, geo_out, ann_out;
    bool sim_fsync = false;
    auto* simulate = app.add_subcommand("simulate", "run the monitor against a simulated world");
    simulate->add_option("--config", world_path, "world config (JSON)")->required()->check(CLI::ExistingFile);
    simulate->add_option("--out", sim_out, "event log to write (replaced)")->required();
    simulate->add_option("--truth", truth_path, "ground truth JSON lines to write")->required();
    simulate->add_option("--geoip-out", geo_out, "write the world's ISP database CSV");
    simulate->add_option("--annotations-out", ann_out, "write business-class annotations JSON");
    simulate->add_flag("--fsync", sim_fsync, "fsync every event (slow)");

    // analyze
    AnalyzeArgs an;
    std::string report_dir;
    auto* analyze = app.add_subcommand("analyze", "build publisher analytics from an event log");
    add_analysis_flags(analyze, an);
    analyze->add_option("--report", report_dir, "output directory")->required();

    // query
    AnalyzeArgs qa;
    std::string username;
    auto* query = app.add_subcommand("query", "print one publisher's profile as JSON");
    add_analysis_flags(query, qa);
    query->add_option("--username", username, "publisher username")->required();

    // export
    std::string ex_log, ex_format = "jsonl", ex_out;
    std::vector<std::string> ex_kinds;
    auto* exporter = app.add_subcommand("export", "export an event log as JSON lines or CSV");
    exporter->add_option("--log", ex_log, "event log")->required()->check(CLI::ExistingFile);
    exporter->add_option("--format", ex_format, "jsonl or csv");
    exporter->add_option("--out", ex_out, "output file (jsonl) or directory (csv)")->required();
    exporter->add_option("--kind", ex_kinds, "only these event kinds");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_input;
    }

    try {
        if (*monitor) {
            PortalConfig cfg = load_portal_config_file(portal_path);
            if (cfg.profile.feed_url.empty()) throw ConfigError("portal profile has no feed_url");
            std::string sp = state_path.empty() ? out_path + ".state" : state_path;
            IngestState state = IngestState::load(sp);
            EventLog log(out_path, no_fsync ? Durability::flush : Durability::fsync);
            HttpTransport http;
            TcpDialer dialer;
            SystemTime clock;
            std::unique_ptr<FileRemovalSource> removals;
            if (!removals_path.empty()) removals = std::make_unique<FileRemovalSource>(removals_path);
            Monitor m(cfg.profile, cfg.monitor, http, dialer, clock, log, state, removals.get());
            Timestamp start = clock.now();
            Timestamp stop_polling = start + parse_duration(duration);
            m.set_stop_flag(&g_stop);
            std::signal(SIGINT, [](int) { g_stop = true; });
            std::signal(SIGTERM, [](int) { g_stop = true; });
            MonitorStats s = m.run(stop_polling, stop_polling + parse_duration(grace), true);
            state.save(sp);
            std::cerr << "items " << s.items << ", terminated " << s.terminated << ", aborted " << s.aborted
                      << ", fetch_failed " << s.fetch_failed << ", parse_failed " << s.parse_failed << '\n';
            return exit_ok;
        }
        if (*simulate) {
            sim::WorldConfig wc = sim::load_world_config(world_path);
            sim::World world = sim::generate_world(wc);
            std::filesystem::remove(sim_out);
            sim::SimulationResult r;
            {
                EventLog log(sim_out, sim_fsync ? Durability::fsync : Durability::flush);
                r = sim::run_simulation(world, log);
            }
            {
                std::ofstream truth(truth_path, std::ios::trunc | std::ios::binary);
                sim::write_ground_truth(world, truth);
                if (!truth) throw Error("cannot write " + truth_path);
            }
            if (!geo_out.empty()) {
                std::ofstream g(geo_out, std::ios::trunc | std::ios::binary);
                world.geo().write_csv(g);
            }
            if (!ann_out.empty()) {
                std::ofstream a(ann_out, std::ios::trunc | std::ios::binary);
                a << sim::annotations(world).dump(2) << '\n';
            }
            std::cerr << "torrents " << world.torrents.size() << ", publishers " << world.publishers.size()
                      << ", announces " << r.query_log.size() << ", terminated " << r.stats.terminated
                      << ", aborted " << r.stats.aborted << '\n';
            return exit_ok;
        }
        if (*analyze) {
            AnalyticsOptions opt;
            Dataset d = load_dataset(an, opt);
            write_report(d, opt, report_dir);
            return exit_ok;
        }
        if (*query) {
            AnalyticsOptions opt;
            Dataset d = load_dataset(qa, opt);
            std::cout << query_publisher(d, username).dump(2) << '\n';
            return exit_ok;
        }
        if (*exporter) {
            ExportFilter filter;
            for (const auto& k : ex_kinds) filter.kinds.insert(event_kind_from_string(k));
            ExportFormat fmt = export_format_from_string(ex_format);
            auto events = load_events(ex_log);
            if (fmt == ExportFormat::jsonl) {
                std::ofstream out(ex_out, std::ios::trunc | std::ios::binary);
                export_jsonl(events, out, filter);
                if (!out) throw Error("cannot write " + ex_out);
            } else {
                export_csv(events, ex_out, filter);
            }
            return exit_ok;
        }
    } catch (const NotFound& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_input;
    } catch (const ConfigError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return exit_input;
    } catch (const ParseError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return exit_input;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return exit_runtime;
    }
    return exit_ok;
}
