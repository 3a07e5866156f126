#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace crome {

/// Seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

constexpr Timestamp kSecondsPerMinute = 60;
constexpr Timestamp kSecondsPerDay = 86400;

struct LatLon {
    double lat = 0.0;
    double lon = 0.0;
};

struct BoundingBox {
    double lat_min = 0.0;
    double lat_max = 0.0;
    double lon_min = 0.0;
    double lon_max = 0.0;

    bool contains(double lat, double lon) const {
        return lat >= lat_min && lat <= lat_max && lon >= lon_min && lon <= lon_max;
    }
};

/// One crowdsourced alert.
struct Report {
    std::string id;
    Timestamp time = 0;
    double lat = 0.0;
    double lon = 0.0;
    int reliability = 1;  // platform score in [1, 10]
};

/// Ground-truth incident. `time` is the officially reported time.
struct Incident {
    std::string id;
    Timestamp time = 0;
    double lat = 0.0;
    double lon = 0.0;
};

struct TrafficObservation {
    std::string segment_id;
    Timestamp time = 0;
    double speed = 0.0;            // km/h
    double reference_speed = 0.0;  // free-flow km/h
    double lat = 0.0;
    double lon = 0.0;
};

struct WeatherObservation {
    std::string station_id;
    Timestamp time = 0;
    double precipitation = 0.0;  // mm
    double lat = 0.0;
    double lon = 0.0;
};

/// All four sources, each sorted ascending by time. Immutable once built.
struct Dataset {
    std::vector<Report> reports;
    std::vector<Incident> incidents;
    std::vector<TrafficObservation> traffic;
    std::vector<WeatherObservation> weather;
    BoundingBox region;
};

struct DatasetPaths {
    std::filesystem::path reports;
    std::filesystem::path incidents;
    std::filesystem::path traffic;  // optional, empty = none
    std::filesystem::path weather;  // optional, empty = none
};

struct SourceSummary {
    std::size_t rows = 0;
    std::size_t kept = 0;
    std::size_t duplicates = 0;
    std::size_t out_of_region = 0;
};

struct LoadSummary {
    SourceSummary reports;
    SourceSummary incidents;
    SourceSummary traffic;
    SourceSummary weather;
};

/// Thrown for rows that cannot be parsed or that violate field constraints.
class DataError : public std::runtime_error {
public:
    DataError(const std::string& file, std::size_t line, const std::string& field, const std::string& what);

    const std::string& file() const { return file_; }
    std::size_t line() const { return line_; }
    const std::string& field() const { return field_; }

private:
    std::string file_;
    std::size_t line_;
    std::string field_;
};

/// Invalid configuration value; `what()` names the offending section/field.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

Timestamp parse_iso8601(std::string_view text);
std::string format_iso8601(Timestamp t);

/// Days since 1970-01-01 for a proleptic Gregorian civil date.
std::int64_t days_from_civil(int year, unsigned month, unsigned day);

/// Loads, validates, sorts (stable) and de-duplicates the four sources.
/// Duplicate ids keep the earliest record; out-of-region rows are dropped and
/// counted in `summary`.
Dataset load_dataset(const DatasetPaths& paths, const BoundingBox& region, LoadSummary* summary = nullptr);

/// Stable-sorts every source by time and drops later duplicates (reports and
/// incidents by id, observations by source id and time).
void normalize(Dataset& ds);

/// Writes the dataset in the same CSV formats `load_dataset` reads. Sources
/// with no records are still written (header only) when their path is set.
void write_dataset(const Dataset& ds, const DatasetPaths& paths);

/// Keeps records with time in [start, end).
Dataset filter_time(const Dataset& ds, Timestamp start, Timestamp end);

/// A train/test split of one rotation: test is one calendar month, train the rest.
struct Rotation {
    Timestamp test_start = 0;
    Timestamp test_end = 0;
};

/// Calendar-month blocks (UTC) covering [start, end). The first and last block
/// are truncated to the range.
std::vector<Rotation> monthly_rotations(Timestamp start, Timestamp end);

/// Shortest round-trip decimal text for a double.
std::string format_number(double v);

}  // namespace crome
