#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "crome/core_data.hpp"
#include "json.hpp"

namespace crome {

struct Hotspot {
    double lat = 0.0;
    double lon = 0.0;
    double weight = 1.0;
    double sigma_km = 1.0;
};

struct PrecipitationProcess {
    double phi = 0.95;     // AR(1) coefficient
    double sigma = 0.3;    // innovation std-dev, mm
    double offset = -0.8;  // precipitation = max(0, state + offset)
    int stations = 4;
};

/// Synthetic scenario. All rates are per day, delays in minutes, distances in km.
struct ScenarioConfig {
    std::uint64_t seed = 42;
    BoundingBox region;
    Timestamp start = 0;
    double duration_days = 122.0;
    std::vector<Hotspot> hotspots;
    double incident_rate = 6.0;
    double report_rate_mean = 4.0;
    double report_spatial_sigma = 0.5;
    double report_delay_mean = 5.0;
    double official_delay_mean = 12.0;
    double false_report_rate = 40.0;
    std::array<double, 10> reliability_true{};   // P(reliability = i + 1)
    std::array<double, 10> reliability_false{};
    double congestion_bump = 0.3;
    double congestion_radius_km = 1.0;
    double congestion_minutes = 30.0;
    double segment_spacing_km = 1.0;
    PrecipitationProcess precip;

    Timestamp end() const { return start + static_cast<Timestamp>(duration_days * kSecondsPerDay); }

    /// Throws ConfigError naming the first invalid field.
    void validate() const;
};

/// 20 × 20 km region starting 2019-09-01 for 122 days (four calendar months),
/// with four hotspots.
ScenarioConfig default_scenario();

struct Scenario {
    Dataset dataset;
    /// Per report (same order as dataset.reports): generating incident id, or "FALSE".
    std::vector<std::string> provenance;
    /// Every generated incident at its occurrence time and true location, in
    /// generation order (ids match dataset.incidents).
    std::vector<Incident> occurrences;
    Timestamp start = 0;
    Timestamp end = 0;
};

Scenario generate(const ScenarioConfig& cfg);

/// Standard file names inside a scenario directory.
DatasetPaths scenario_paths(const std::filesystem::path& dir);

/// Writes the four CSVs, provenance.csv and dataset.json (region + time span).
void write_scenario(const std::filesystem::path& dir, const Scenario& s);

nlohmann::json to_json(const ScenarioConfig& cfg);
/// Missing keys take `defaults`; unknown keys raise ConfigError.
ScenarioConfig scenario_from_json(const nlohmann::json& j, const ScenarioConfig& defaults = default_scenario());

}  // namespace crome
