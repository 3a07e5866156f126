#pragma once

#include <stdexcept>

#include "crome/core_data.hpp"

namespace crome {

/// Mean Earth radius (IUGG), km.
constexpr double kEarthRadiusKm = 6371.0088;

/// Square-cell grid laid over a region on the local tangent plane at its
/// south-west corner. Cell (x, y) spans east ∈ [x·s, (x+1)·s), north ∈ [y·s, (y+1)·s).
struct GridSpec {
    LatLon origin;
    double cell_size_km = 1.0;
    int nx = 1;
    int ny = 1;

    int cell_count() const { return nx * ny; }
};

struct CellIndex {
    int x = 0;
    int y = 0;

    friend bool operator==(const CellIndex&, const CellIndex&) = default;
    friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

/// Row-major linear index of a cell, x-major.
inline int linear_index(const GridSpec& spec, CellIndex c) { return c.x * spec.ny + c.y; }
inline CellIndex cell_at(const GridSpec& spec, int linear) { return {linear / spec.ny, linear % spec.ny}; }

struct TimeBin {
    std::int64_t index = 0;
    int step_minutes = 1;
    Timestamp epoch_start = 0;

    Timestamp start() const { return epoch_start + index * step_minutes * kSecondsPerMinute; }
    Timestamp end() const { return start() + step_minutes * kSecondsPerMinute; }
};

class OutOfGrid : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// East/north offsets (km) of a point from `origin` on the equirectangular plane at the origin.
struct PlaneOffset {
    double east_km = 0.0;
    double north_km = 0.0;
};

PlaneOffset project(const LatLon& origin, double lat, double lon);
LatLon unproject(const LatLon& origin, PlaneOffset offset);

/// Bounding box with the given south-west corner and extents in km.
BoundingBox region_from_extent(const LatLon& south_west, double width_km, double height_km);

GridSpec make_grid(const BoundingBox& region, double cell_size_km);

/// Throws OutOfGrid for points outside the grid coverage.
CellIndex locate(const GridSpec& spec, double lat, double lon);
LatLon cell_center(const GridSpec& spec, CellIndex c);

/// Haversine distance in km.
double geodesic_km(const LatLon& a, const LatLon& b);

TimeBin bin_time(Timestamp t, int step_minutes, Timestamp epoch_start);

}  // namespace crome
