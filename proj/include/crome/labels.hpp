#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <span>
#include <vector>

#include "crome/core_data.hpp"
#include "crome/grid.hpp"

namespace crome {

using LabelArray = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-cell binary labels (nx × ny) for the window ending at `end_bin`.
struct LabelGrid {
    TimeBin end_bin;
    LabelArray values;
};

/// Spatio-temporal proximity between a window and an incident: the incident
/// time lies in [t − alpha, t + beta] for window end t, and it is within
/// delta km of the cell center.
struct MatchRule {
    double alpha_minutes = 60.0;
    double beta_minutes = 60.0;
    double delta_km = 1.0;

    void validate() const;

    bool in_time(Timestamp window_end, Timestamp incident_time) const {
        const double diff = static_cast<double>(incident_time - window_end);
        return diff >= -alpha_minutes * 60.0 && diff <= beta_minutes * 60.0;
    }
    bool in_space(double distance_km) const { return distance_km <= delta_km; }
};

struct IncidentMatch {
    std::string incident_id;
    TimeBin detection_bin;
    CellIndex detection_cell;
    double distance_km = 0.0;
    double lead_minutes = 0.0;  // positive = detected before the official report
};

/// Positive cells of one window.
struct Detection {
    TimeBin end_bin;
    std::vector<CellIndex> cells;
};

LabelGrid label_window(std::span<const Incident> incidents, const GridSpec& spec, const TimeBin& end_bin,
                       const MatchRule& rule);

/// Each incident is matched to its earliest qualifying detection (ties: smaller
/// distance, then smaller cell index). Unmatched incidents are omitted.
std::vector<IncidentMatch> match_detections(std::span<const Detection> detections,
                                            std::span<const Incident> incidents, const GridSpec& spec,
                                            const MatchRule& rule);

void write_labels_csv(const std::filesystem::path& path, std::span<const LabelGrid> labels);
void write_matches_csv(const std::filesystem::path& path, std::span<const IncidentMatch> matches);

}  // namespace crome
