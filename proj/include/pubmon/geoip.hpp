#pragma once

#include <array>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "pubmon/common.hpp"

namespace pubmon {

enum class IspType { hosting, commercial, unknown };

inline const char* to_string(IspType t) {
    switch (t) {
        case IspType::hosting: return "hosting";
        case IspType::commercial: return "commercial";
        case IspType::unknown: break;
    }
    return "unknown";
}

inline IspType isp_type_from_string(std::string_view s) {
    if (s == "hosting") return IspType::hosting;
    if (s == "commercial") return IspType::commercial;
    if (s == "unknown") return IspType::unknown;
    throw ParseError("unknown ISP type: " + std::string(s));
}

struct Cidr {
    Ipv4 network;
    int prefix_len = 0;

    static Cidr parse(std::string_view text) {
        auto slash = text.find('/');
        if (slash == std::string_view::npos) throw ParseError("CIDR without prefix length: " + std::string(text));
        auto ip = Ipv4::parse(text.substr(0, slash));
        int len = -1;
        auto tail = text.substr(slash + 1);
        auto [next, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), len);
        if (!ip || ec != std::errc{} || next != tail.data() + tail.size() || len < 0 || len > 32)
            throw ParseError("bad CIDR: " + std::string(text));
        return {Ipv4{ip->value & mask(len)}, len};
    }

    static std::uint32_t mask(int len) { return len == 0 ? 0u : ~0u << (32 - len); }

    [[nodiscard]] bool contains(Ipv4 ip) const { return (ip.value & mask(prefix_len)) == network.value; }
    [[nodiscard]] std::string to_string() const { return network.to_string() + '/' + std::to_string(prefix_len); }
};

struct IspInfo {
    Cidr prefix;
    std::string isp_name;
    IspType isp_type = IspType::unknown;
    std::string country;
    std::string city;
};

/// Fixture-backed ISP / location lookup with longest-prefix matching.
/// Rows: `cidr,isp_name,isp_type,country,city`; an optional header line starting with
/// "cidr" and '#' comments are skipped.
class GeoDatabase {
public:
    GeoDatabase() = default;

    static GeoDatabase load(std::istream& in) {
        GeoDatabase db;
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#' || line.rfind("cidr", 0) == 0) continue;
            std::vector<std::string> cols;
            std::stringstream ss(line);
            std::string col;
            while (std::getline(ss, col, ',')) cols.push_back(col);
            if (cols.size() != 5) throw ParseError("geoip line " + std::to_string(line_no) + ": expected 5 columns");
            IspInfo info;
            try {
                info.prefix = Cidr::parse(cols[0]);
                info.isp_type = isp_type_from_string(cols[2]);
            } catch (const ParseError& e) {
                throw ParseError("geoip line " + std::to_string(line_no) + ": " + e.what());
            }
            info.isp_name = cols[1];
            info.country = cols[3];
            info.city = cols[4];
            db.insert(std::move(info));
        }
        return db;
    }

    static GeoDatabase load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open geoip database: " + path);
        return load(in);
    }

    void insert(IspInfo info) {
        auto& bucket = by_len_[static_cast<std::size_t>(info.prefix.prefix_len)];
        if (bucket.contains(info.prefix.network.value))
            throw ParseError("duplicate geoip prefix " + info.prefix.to_string());
        bucket.emplace(info.prefix.network.value, rows_.size());
        rows_.push_back(std::move(info));
    }

    /// Longest covering prefix, or an entry of type unknown.
    [[nodiscard]] IspInfo lookup(Ipv4 ip) const {
        for (int len = 32; len >= 0; --len) {
            const auto& bucket = by_len_[static_cast<std::size_t>(len)];
            if (bucket.empty()) continue;
            auto it = bucket.find(ip.value & Cidr::mask(len));
            if (it != bucket.end()) return rows_[it->second];
        }
        return IspInfo{Cidr{ip, 32}, "unknown", IspType::unknown, "", ""};
    }

    [[nodiscard]] const std::vector<IspInfo>& rows() const { return rows_; }
    [[nodiscard]] bool empty() const { return rows_.empty(); }

    void write_csv(std::ostream& out) const {
        out << "cidr,isp_name,isp_type,country,city\n";
        for (const auto& r : rows_)
            out << r.prefix.to_string() << ',' << r.isp_name << ',' << to_string(r.isp_type) << ',' << r.country << ','
                << r.city << '\n';
    }

private:
    std::vector<IspInfo> rows_;
    std::array<std::unordered_map<std::uint32_t, std::size_t>, 33> by_len_;
};

inline IspInfo geo_lookup(Ipv4 ip, const GeoDatabase& db) { return db.lookup(ip); }

}  // namespace pubmon
