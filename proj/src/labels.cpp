#include "crome/labels.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace crome {

void MatchRule::validate() const {
    if (!(alpha_minutes >= 0.0) || !(beta_minutes >= 0.0)) {
        throw std::invalid_argument("match rule: alpha and beta must be non-negative");
    }
    if (!(delta_km > 0.0)) {
        throw std::invalid_argument("match rule: delta must be positive");
    }
}

namespace {

struct CellRange {
    int x0, x1, y0, y1;  // inclusive
};

/// Cells that can possibly lie within `radius_km` of a point. Uses the exact
/// haversine bounding box, widened by one cell.
CellRange candidate_cells(const GridSpec& spec, const LatLon& p, double radius_km) {
    constexpr double kDeg = 180.0 / std::numbers::pi;
    const double ang = radius_km / kEarthRadiusKm;
    const double lat_lo = p.lat - ang * kDeg;
    const double lat_hi = p.lat + ang * kDeg;
    const double cos_lat = std::cos(p.lat / kDeg);
    const double s = std::sin(ang);
    if (lat_hi >= 90.0 || lat_lo <= -90.0 || s >= cos_lat) {
        return {0, spec.nx - 1, 0, spec.ny - 1};
    }
    const double dlon = std::asin(s / cos_lat) * kDeg;
    double e_lo = std::numeric_limits<double>::infinity(), e_hi = -e_lo;
    double n_lo = e_lo, n_hi = -e_lo;
    for (double lat : {lat_lo, lat_hi}) {
        for (double lon : {p.lon - dlon, p.lon + dlon}) {
            const auto off = project(spec.origin, lat, lon);
            e_lo = std::min(e_lo, off.east_km);
            e_hi = std::max(e_hi, off.east_km);
            n_lo = std::min(n_lo, off.north_km);
            n_hi = std::max(n_hi, off.north_km);
        }
    }
    const double c = spec.cell_size_km;
    auto clampx = [&](double v, int n) { return static_cast<int>(std::clamp(v, -1.0, static_cast<double>(n))); };
    return {std::max(0, clampx(std::floor(e_lo / c) - 1, spec.nx)),
            std::min(spec.nx - 1, clampx(std::floor(e_hi / c) + 1, spec.nx)),
            std::max(0, clampx(std::floor(n_lo / c) - 1, spec.ny)),
            std::min(spec.ny - 1, clampx(std::floor(n_hi / c) + 1, spec.ny))};
}

template <typename Record>
std::pair<std::size_t, std::size_t> time_range(std::span<const Record> rows, Timestamp lo, Timestamp hi) {
    auto first = std::lower_bound(rows.begin(), rows.end(), lo,
                                  [](const Record& r, Timestamp t) { return r.time < t; });
    auto last = std::upper_bound(first, rows.end(), hi, [](Timestamp t, const Record& r) { return t < r.time; });
    return {static_cast<std::size_t>(first - rows.begin()), static_cast<std::size_t>(last - rows.begin())};
}

Timestamp floor_seconds(double minutes) { return static_cast<Timestamp>(std::floor(minutes * 60.0)); }
Timestamp ceil_seconds(double minutes) { return static_cast<Timestamp>(std::ceil(minutes * 60.0)); }

}  // namespace

LabelGrid label_window(std::span<const Incident> incidents, const GridSpec& spec, const TimeBin& end_bin,
                       const MatchRule& rule) {
    rule.validate();
    LabelGrid grid{end_bin, LabelArray::Zero(spec.nx, spec.ny)};
    const Timestamp t = end_bin.end();
    // Incidents must be time-sorted; the range is widened by a second and then
    // filtered by the exact predicate.
    auto [first, last] = time_range(incidents, t - ceil_seconds(rule.alpha_minutes) - 1,
                                    t + ceil_seconds(rule.beta_minutes) + 1);
    for (std::size_t i = first; i < last; ++i) {
        const Incident& inc = incidents[i];
        if (!rule.in_time(t, inc.time)) {
            continue;
        }
        const LatLon loc{inc.lat, inc.lon};
        const CellRange r = candidate_cells(spec, loc, rule.delta_km);
        for (int x = r.x0; x <= r.x1; ++x) {
            for (int y = r.y0; y <= r.y1; ++y) {
                if (grid.values(x, y) == 0 && rule.in_space(geodesic_km(cell_center(spec, {x, y}), loc))) {
                    grid.values(x, y) = 1;
                }
            }
        }
    }
    return grid;
}

std::vector<IncidentMatch> match_detections(std::span<const Detection> detections,
                                            std::span<const Incident> incidents, const GridSpec& spec,
                                            const MatchRule& rule) {
    rule.validate();
    std::vector<std::size_t> order(detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return detections[a].end_bin.end() < detections[b].end_bin.end();
    });
    std::vector<Timestamp> times;
    times.reserve(order.size());
    for (auto i : order) {
        times.push_back(detections[i].end_bin.end());
    }

    std::vector<IncidentMatch> out;
    for (const Incident& inc : incidents) {
        const LatLon loc{inc.lat, inc.lon};
        // Detection end times t with inc.time ∈ [t − alpha, t + beta].
        const Timestamp lo = inc.time - ceil_seconds(rule.beta_minutes) - 1;
        const Timestamp hi = inc.time + floor_seconds(rule.alpha_minutes) + 1;
        auto it = std::lower_bound(times.begin(), times.end(), lo);
        bool found = false;
        IncidentMatch best;
        for (; it != times.end() && *it <= hi; ++it) {
            const Timestamp t = *it;
            if (found && t > best.detection_bin.end()) {
                break;
            }
            if (!rule.in_time(t, inc.time)) {
                continue;
            }
            const Detection& det = detections[order[static_cast<std::size_t>(it - times.begin())]];
            for (const CellIndex& c : det.cells) {
                const double d = geodesic_km(cell_center(spec, c), loc);
                if (!rule.in_space(d)) {
                    continue;
                }
                const bool better = !found || d < best.distance_km ||
                                    (d == best.distance_km && linear_index(spec, c) < linear_index(spec, best.detection_cell));
                if (better) {
                    best = {inc.id, det.end_bin, c, d, static_cast<double>(inc.time - t) / 60.0};
                    found = true;
                }
            }
        }
        if (found) {
            out.push_back(std::move(best));
        }
    }
    return out;
}

void write_labels_csv(const std::filesystem::path& path, std::span<const LabelGrid> labels) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "end_bin,x,y,label\n";
    for (const auto& g : labels) {
        for (Eigen::Index x = 0; x < g.values.rows(); ++x) {
            for (Eigen::Index y = 0; y < g.values.cols(); ++y) {
                out << g.end_bin.index << ',' << x << ',' << y << ',' << int(g.values(x, y)) << '\n';
            }
        }
    }
}

void write_matches_csv(const std::filesystem::path& path, std::span<const IncidentMatch> matches) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "incident_id,detection_bin,x,y,distance_km,lead_minutes\n";
    for (const auto& m : matches) {
        out << m.incident_id << ',' << m.detection_bin.index << ',' << m.detection_cell.x << ','
            << m.detection_cell.y << ',' << format_number(m.distance_km) << ',' << format_number(m.lead_minutes)
            << '\n';
    }
}

}  // namespace crome
