#include "crome/grid.hpp"

#include <cmath>
#include <numbers>

namespace crome {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kRadToDeg = 180.0 / std::numbers::pi;

// Slack for extents that are exact multiples of the cell size up to rounding.
constexpr double kEdgeSlackKm = 1e-9;

}  // namespace

PlaneOffset project(const LatLon& origin, double lat, double lon) {
    const double cos0 = std::cos(origin.lat * kDegToRad);
    return {kEarthRadiusKm * cos0 * (lon - origin.lon) * kDegToRad, kEarthRadiusKm * (lat - origin.lat) * kDegToRad};
}

LatLon unproject(const LatLon& origin, PlaneOffset offset) {
    const double cos0 = std::cos(origin.lat * kDegToRad);
    return {origin.lat + offset.north_km / kEarthRadiusKm * kRadToDeg,
            origin.lon + offset.east_km / (kEarthRadiusKm * cos0) * kRadToDeg};
}

BoundingBox region_from_extent(const LatLon& south_west, double width_km, double height_km) {
    const LatLon ne = unproject(south_west, {width_km, height_km});
    return {south_west.lat, ne.lat, south_west.lon, ne.lon};
}

GridSpec make_grid(const BoundingBox& region, double cell_size_km) {
    if (!(cell_size_km > 0.0) || !std::isfinite(cell_size_km)) {
        throw std::invalid_argument("make_grid: cell size must be positive");
    }
    if (!(region.lat_max > region.lat_min) || !(region.lon_max > region.lon_min)) {
        throw std::invalid_argument("make_grid: degenerate region");
    }
    GridSpec spec;
    spec.origin = {region.lat_min, region.lon_min};
    spec.cell_size_km = cell_size_km;
    const PlaneOffset extent = project(spec.origin, region.lat_max, region.lon_max);
    spec.nx = std::max(1, static_cast<int>(std::ceil(extent.east_km / cell_size_km - kEdgeSlackKm)));
    spec.ny = std::max(1, static_cast<int>(std::ceil(extent.north_km / cell_size_km - kEdgeSlackKm)));
    return spec;
}

namespace {

int to_cell(double km, double cell, int n) {
    const double raw = std::floor(km / cell);
    if (raw >= 0 && raw < n) {
        return static_cast<int>(raw);
    }
    // The far edge of the coverage belongs to the last cell.
    if (raw == n && km <= n * cell + kEdgeSlackKm) {
        return n - 1;
    }
    if (raw == -1 && km >= -kEdgeSlackKm) {
        return 0;
    }
    return -1;
}

}  // namespace

CellIndex locate(const GridSpec& spec, double lat, double lon) {
    const PlaneOffset p = project(spec.origin, lat, lon);
    const int x = to_cell(p.east_km, spec.cell_size_km, spec.nx);
    const int y = to_cell(p.north_km, spec.cell_size_km, spec.ny);
    if (x < 0 || y < 0) {
        throw OutOfGrid("locate: point outside grid coverage");
    }
    return {x, y};
}

LatLon cell_center(const GridSpec& spec, CellIndex c) {
    if (c.x < 0 || c.x >= spec.nx || c.y < 0 || c.y >= spec.ny) {
        throw std::invalid_argument("cell_center: cell index out of range");
    }
    return unproject(spec.origin, {(c.x + 0.5) * spec.cell_size_km, (c.y + 0.5) * spec.cell_size_km});
}

double geodesic_km(const LatLon& a, const LatLon& b) {
    const double phi1 = a.lat * kDegToRad;
    const double phi2 = b.lat * kDegToRad;
    const double dphi = phi2 - phi1;
    const double dlambda = (b.lon - a.lon) * kDegToRad;
    const double s1 = std::sin(dphi / 2);
    const double s2 = std::sin(dlambda / 2);
    const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
    return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(std::min(1.0, h)));
}

TimeBin bin_time(Timestamp t, int step_minutes, Timestamp epoch_start) {
    if (step_minutes <= 0) {
        throw std::invalid_argument("bin_time: step must be positive");
    }
    if (t < epoch_start) {
        throw std::invalid_argument("bin_time: time precedes epoch start");
    }
    return {(t - epoch_start) / (step_minutes * kSecondsPerMinute), step_minutes, epoch_start};
}

}  // namespace crome
