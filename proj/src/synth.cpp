#include "crome/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "crome/grid.hpp"
#include "crome/random.hpp"

namespace crome {

namespace {

constexpr double kReferenceSpeed = 60.0;

void require(bool ok, const std::string& field, const std::string& what) {
    if (!ok) {
        throw ConfigError("synth." + field + ": " + what);
    }
}

void check_distribution(const std::array<double, 10>& p, const std::string& field) {
    double total = 0.0;
    for (double v : p) {
        require(v >= 0.0, field, "probabilities must be non-negative");
        total += v;
    }
    require(std::abs(total - 1.0) < 1e-9, field, "probabilities must sum to 1");
}

double round_to(double v, double quantum) { return std::round(v / quantum) * quantum; }

LatLon round_coordinate(LatLon p) { return {round_to(p.lat, 1e-7), round_to(p.lon, 1e-7)}; }

LatLon gaussian_offset(Rng& rng, const LatLon& center, double sigma_km) {
    const double east = rng.normal() * sigma_km;
    const double north = rng.normal() * sigma_km;
    return unproject(center, {east, north});
}

LatLon uniform_point(Rng& rng, const BoundingBox& r) {
    const double lat = rng.uniform(r.lat_min, r.lat_max);
    const double lon = rng.uniform(r.lon_min, r.lon_max);
    return {lat, lon};
}

std::string make_id(char prefix, std::size_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%c%07zu", prefix, n);
    return buf;
}

}  // namespace

void ScenarioConfig::validate() const {
    require(region.lat_min < region.lat_max && region.lon_min < region.lon_max, "region", "degenerate bounding box");
    require(duration_days > 0.0, "duration_days", "must be positive");
    require(incident_rate >= 0.0, "incident_rate", "must be non-negative");
    require(report_rate_mean >= 0.0, "report_rate_mean", "must be non-negative");
    require(false_report_rate >= 0.0, "false_report_rate", "must be non-negative");
    require(report_spatial_sigma > 0.0, "report_spatial_sigma", "must be positive");
    require(report_delay_mean >= 0.0, "report_delay_mean", "must be non-negative");
    require(official_delay_mean >= 0.0, "official_delay_mean", "must be non-negative");
    require(congestion_bump >= 0.0 && congestion_bump <= 1.0, "congestion_bump", "must be in [0, 1]");
    require(congestion_radius_km > 0.0, "congestion_radius_km", "must be positive");
    require(congestion_minutes > 0.0, "congestion_minutes", "must be positive");
    require(segment_spacing_km > 0.0, "segment_spacing_km", "must be positive");
    require(std::abs(precip.phi) < 1.0, "precip.phi", "must lie in (-1, 1)");
    require(precip.sigma > 0.0, "precip.sigma", "must be positive");
    require(precip.stations >= 0, "precip.stations", "must be non-negative");
    check_distribution(reliability_true, "reliability_true");
    check_distribution(reliability_false, "reliability_false");
    for (std::size_t i = 0; i < hotspots.size(); ++i) {
        const std::string f = "hotspots[" + std::to_string(i) + "]";
        require(hotspots[i].weight >= 0.0, f + ".weight", "must be non-negative");
        require(hotspots[i].sigma_km > 0.0, f + ".sigma_km", "must be positive");
    }
}

ScenarioConfig default_scenario() {
    ScenarioConfig cfg;
    const LatLon sw{36.07, -86.90};
    cfg.region = region_from_extent(sw, 20.0, 20.0);
    cfg.start = days_from_civil(2019, 9, 1) * kSecondsPerDay;
    auto at = [&](double fx, double fy) { return unproject(sw, {20.0 * fx, 20.0 * fy}); };
    const struct {
        double fx, fy, weight, sigma;
    } spots[] = {{0.30, 0.30, 3.0, 1.5}, {0.70, 0.60, 2.0, 2.0}, {0.50, 0.80, 1.0, 1.0}, {0.20, 0.75, 1.0, 1.5}};
    for (const auto& s : spots) {
        const LatLon p = round_coordinate(at(s.fx, s.fy));
        cfg.hotspots.push_back({p.lat, p.lon, s.weight, s.sigma});
    }
    cfg.reliability_true = {0.01, 0.01, 0.02, 0.03, 0.05, 0.08, 0.15, 0.20, 0.25, 0.20};
    cfg.reliability_false = {0.20, 0.25, 0.20, 0.15, 0.08, 0.05, 0.03, 0.02, 0.01, 0.01};
    return cfg;
}

Scenario generate(const ScenarioConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    Scenario out;
    out.start = cfg.start;
    out.end = cfg.end();
    Dataset& ds = out.dataset;
    ds.region = cfg.region;
    const BoundingBox& region = cfg.region;

    std::vector<double> weights;
    for (const auto& h : cfg.hotspots) {
        weights.push_back(h.weight);
    }
    const bool use_hotspots = std::accumulate(weights.begin(), weights.end(), 0.0) > 0.0;

    auto incident_location = [&]() {
        if (use_hotspots) {
            for (int attempt = 0; attempt < 100; ++attempt) {
                const Hotspot& h = cfg.hotspots[rng.categorical(weights)];
                const LatLon p = round_coordinate(gaussian_offset(rng, {h.lat, h.lon}, h.sigma_km));
                if (region.contains(p.lat, p.lon)) {
                    return p;
                }
            }
        }
        return round_coordinate(uniform_point(rng, region));
    };

    struct Occurrence {
        Timestamp time;
        LatLon where;
        std::string id;
    };
    std::vector<Occurrence> occurrences;

    struct PendingReport {
        Timestamp time;
        LatLon where;
        int reliability;
        std::string source;
    };
    std::vector<PendingReport> reports;

    // Incidents: homogeneous Poisson process in time, Gaussian mixture in space.
    if (cfg.incident_rate > 0.0) {
        const double mean_gap = kSecondsPerDay / cfg.incident_rate;
        double t = static_cast<double>(out.start);
        while (true) {
            t += rng.exponential(mean_gap);
            if (t >= static_cast<double>(out.end)) {
                break;
            }
            Occurrence occ{static_cast<Timestamp>(std::floor(t)), incident_location(),
                           make_id('i', occurrences.size() + 1)};
            const Timestamp official =
                occ.time + static_cast<Timestamp>(std::llround(rng.exponential(cfg.official_delay_mean * 60.0)));

            const std::int64_t n = rng.poisson(cfg.report_rate_mean);
            for (std::int64_t k = 0; k < n; ++k) {
                const Timestamp rt =
                    occ.time + static_cast<Timestamp>(std::llround(rng.exponential(cfg.report_delay_mean * 60.0)));
                const LatLon rp = round_coordinate(gaussian_offset(rng, occ.where, cfg.report_spatial_sigma));
                const int rel = static_cast<int>(rng.categorical(cfg.reliability_true)) + 1;
                if (rt < out.end && region.contains(rp.lat, rp.lon)) {
                    reports.push_back({rt, rp, rel, occ.id});
                }
            }
            if (official < out.end) {
                ds.incidents.push_back({occ.id, official, occ.where.lat, occ.where.lon});
            }
            out.occurrences.push_back({occ.id, occ.time, occ.where.lat, occ.where.lon});
            occurrences.push_back(std::move(occ));
        }
    }

    // False reports: uniform in space and time.
    if (cfg.false_report_rate > 0.0) {
        const double mean_gap = kSecondsPerDay / cfg.false_report_rate;
        double t = static_cast<double>(out.start);
        while (true) {
            t += rng.exponential(mean_gap);
            if (t >= static_cast<double>(out.end)) {
                break;
            }
            const LatLon p = round_coordinate(uniform_point(rng, region));
            const int rel = static_cast<int>(rng.categorical(cfg.reliability_false)) + 1;
            if (region.contains(p.lat, p.lon)) {
                reports.push_back({static_cast<Timestamp>(std::floor(t)), p, rel, "FALSE"});
            }
        }
    }

    std::stable_sort(reports.begin(), reports.end(),
                     [](const PendingReport& a, const PendingReport& b) { return a.time < b.time; });
    ds.reports.reserve(reports.size());
    out.provenance.reserve(reports.size());
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        ds.reports.push_back({make_id('w', i + 1), r.time, r.where.lat, r.where.lon, r.reliability});
        out.provenance.push_back(r.source);
    }

    // Traffic: pseudo-segments on a lattice; segments near an incident slow
    // down for `congestion_minutes` after it occurs, then report free flow.
    {
        const LatLon sw{region.lat_min, region.lon_min};
        const PlaneOffset extent = project(sw, region.lat_max, region.lon_max);
        const int sx = std::max(1, static_cast<int>(extent.east_km / cfg.segment_spacing_km));
        const int sy = std::max(1, static_cast<int>(extent.north_km / cfg.segment_spacing_km));
        struct Segment {
            std::string id;
            LatLon where;
        };
        std::vector<Segment> segments;
        for (int i = 0; i < sx; ++i) {
            for (int j = 0; j < sy; ++j) {
                const LatLon c = round_coordinate(
                    unproject(sw, {(i + 0.5) * cfg.segment_spacing_km, (j + 0.5) * cfg.segment_spacing_km}));
                if (region.contains(c.lat, c.lon)) {
                    char buf[32];
                    std::snprintf(buf, sizeof buf, "s%03d_%03d", i, j);
                    segments.push_back({buf, c});
                }
            }
        }
        const double slow = round_to(kReferenceSpeed * (1.0 - cfg.congestion_bump), 1e-6);
        const Timestamp span = static_cast<Timestamp>(cfg.congestion_minutes * 60.0);
        for (const auto& occ : occurrences) {
            for (const auto& seg : segments) {
                if (geodesic_km(seg.where, occ.where) > cfg.congestion_radius_km) {
                    continue;
                }
                for (Timestamp dt = 0; dt < span; dt += 10 * kSecondsPerMinute) {
                    if (occ.time + dt < out.end) {
                        ds.traffic.push_back(
                            {seg.id, occ.time + dt, slow, kReferenceSpeed, seg.where.lat, seg.where.lon});
                    }
                }
                if (occ.time + span < out.end) {
                    ds.traffic.push_back(
                        {seg.id, occ.time + span, kReferenceSpeed, kReferenceSpeed, seg.where.lat, seg.where.lon});
                }
            }
        }
    }

    // Weather: one AR(1) precipitation series per station, hourly.
    {
        const LatLon sw{region.lat_min, region.lon_min};
        const PlaneOffset extent = project(sw, region.lat_max, region.lon_max);
        const int n = cfg.precip.stations;
        const int cols = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)))));
        const int rows = n > 0 ? (n + cols - 1) / cols : 0;
        int made = 0;
        for (int r = 0; r < rows && made < n; ++r) {
            for (int c = 0; c < cols && made < n; ++c, ++made) {
                const LatLon where = round_coordinate(
                    unproject(sw, {extent.east_km * (c + 0.5) / cols, extent.north_km * (r + 0.5) / rows}));
                char buf[32];
                std::snprintf(buf, sizeof buf, "st%02d", made + 1);
                const double stationary_sd = cfg.precip.sigma / std::sqrt(1.0 - cfg.precip.phi * cfg.precip.phi);
                double state = rng.normal() * stationary_sd;
                for (Timestamp t = out.start; t < out.end; t += 3600) {
                    state = cfg.precip.phi * state + cfg.precip.sigma * rng.normal();
                    const double mm = round_to(std::max(0.0, state + cfg.precip.offset), 0.01);
                    ds.weather.push_back({buf, t, mm, where.lat, where.lon});
                }
            }
        }
    }

    normalize(ds);
    return out;
}

DatasetPaths scenario_paths(const std::filesystem::path& dir) {
    return {dir / "reports.csv", dir / "incidents.csv", dir / "traffic.csv", dir / "weather.csv"};
}

void write_scenario(const std::filesystem::path& dir, const Scenario& s) {
    std::filesystem::create_directories(dir);
    write_dataset(s.dataset, scenario_paths(dir));
    {
        std::ofstream out(dir / "provenance.csv", std::ios::binary);
        out << "report_id,incident_id\n";
        for (std::size_t i = 0; i < s.dataset.reports.size(); ++i) {
            out << s.dataset.reports[i].id << ',' << s.provenance[i] << '\n';
        }
    }
    const auto& r = s.dataset.region;
    nlohmann::json meta = {
        {"region", {{"lat_min", r.lat_min}, {"lat_max", r.lat_max}, {"lon_min", r.lon_min}, {"lon_max", r.lon_max}}},
        {"start", format_iso8601(s.start)},
        {"end", format_iso8601(s.end)},
        {"reports", "reports.csv"},
        {"incidents", "incidents.csv"},
        {"traffic", "traffic.csv"},
        {"weather", "weather.csv"}};
    std::ofstream(dir / "dataset.json", std::ios::binary) << meta.dump(2) << '\n';
}

nlohmann::json to_json(const ScenarioConfig& c) {
    nlohmann::json hs = nlohmann::json::array();
    for (const auto& h : c.hotspots) {
        hs.push_back({{"lat", h.lat}, {"lon", h.lon}, {"weight", h.weight}, {"sigma_km", h.sigma_km}});
    }
    return {{"seed", c.seed},
            {"region",
             {{"lat_min", c.region.lat_min},
              {"lat_max", c.region.lat_max},
              {"lon_min", c.region.lon_min},
              {"lon_max", c.region.lon_max}}},
            {"start", format_iso8601(c.start)},
            {"duration_days", c.duration_days},
            {"hotspots", hs},
            {"incident_rate", c.incident_rate},
            {"report_rate_mean", c.report_rate_mean},
            {"report_spatial_sigma", c.report_spatial_sigma},
            {"report_delay_mean", c.report_delay_mean},
            {"official_delay_mean", c.official_delay_mean},
            {"false_report_rate", c.false_report_rate},
            {"reliability_true", c.reliability_true},
            {"reliability_false", c.reliability_false},
            {"congestion_bump", c.congestion_bump},
            {"congestion_radius_km", c.congestion_radius_km},
            {"congestion_minutes", c.congestion_minutes},
            {"segment_spacing_km", c.segment_spacing_km},
            {"precip",
             {{"phi", c.precip.phi},
              {"sigma", c.precip.sigma},
              {"offset", c.precip.offset},
              {"stations", c.precip.stations}}}};
}

ScenarioConfig scenario_from_json(const nlohmann::json& j, const ScenarioConfig& defaults) {
    static const std::set<std::string> kKeys{
        "seed", "region", "start", "duration_days", "hotspots", "incident_rate", "report_rate_mean",
        "report_spatial_sigma", "report_delay_mean", "official_delay_mean", "false_report_rate",
        "reliability_true", "reliability_false", "congestion_bump", "congestion_radius_km", "congestion_minutes",
        "segment_spacing_km", "precip"};
    if (!j.is_object()) {
        throw ConfigError("synth: expected an object");
    }
    for (const auto& [k, v] : j.items()) {
        if (!kKeys.count(k)) {
            throw ConfigError("synth: unknown key '" + k + "'");
        }
    }
    ScenarioConfig c = defaults;
    try {
        c.seed = j.value("seed", c.seed);
        if (j.contains("region")) {
            const auto& r = j.at("region");
            c.region = {r.at("lat_min").get<double>(), r.at("lat_max").get<double>(), r.at("lon_min").get<double>(),
                        r.at("lon_max").get<double>()};
        }
        if (j.contains("start")) {
            c.start = parse_iso8601(j.at("start").get<std::string>());
        }
        c.duration_days = j.value("duration_days", c.duration_days);
        if (j.contains("hotspots")) {
            c.hotspots.clear();
            for (const auto& h : j.at("hotspots")) {
                c.hotspots.push_back({h.at("lat").get<double>(), h.at("lon").get<double>(),
                                      h.value("weight", 1.0), h.value("sigma_km", 1.0)});
            }
        }
        c.incident_rate = j.value("incident_rate", c.incident_rate);
        c.report_rate_mean = j.value("report_rate_mean", c.report_rate_mean);
        c.report_spatial_sigma = j.value("report_spatial_sigma", c.report_spatial_sigma);
        c.report_delay_mean = j.value("report_delay_mean", c.report_delay_mean);
        c.official_delay_mean = j.value("official_delay_mean", c.official_delay_mean);
        c.false_report_rate = j.value("false_report_rate", c.false_report_rate);
        if (j.contains("reliability_true")) {
            c.reliability_true = j.at("reliability_true").get<std::array<double, 10>>();
        }
        if (j.contains("reliability_false")) {
            c.reliability_false = j.at("reliability_false").get<std::array<double, 10>>();
        }
        c.congestion_bump = j.value("congestion_bump", c.congestion_bump);
        c.congestion_radius_km = j.value("congestion_radius_km", c.congestion_radius_km);
        c.congestion_minutes = j.value("congestion_minutes", c.congestion_minutes);
        c.segment_spacing_km = j.value("segment_spacing_km", c.segment_spacing_km);
        if (j.contains("precip")) {
            const auto& p = j.at("precip");
            c.precip.phi = p.value("phi", c.precip.phi);
            c.precip.sigma = p.value("sigma", c.precip.sigma);
            c.precip.offset = p.value("offset", c.precip.offset);
            c.precip.stations = p.value("stations", c.precip.stations);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synth: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("synth.start: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace crome
