#pragma once

#include <array>
#include <span>
#include <vector>

#include "crome/core_data.hpp"
#include "crome/features.hpp"
#include "crome/grid.hpp"
#include "crome/labels.hpp"
#include "json.hpp"

namespace crome {

/// Naive-Bayes fusion of report reliabilities into a per-cell posterior.
struct BfConfig {
    double prior = 0.01;
    double reliability_floor = 0.05;
    double reliability_ceiling = 0.95;
    double threshold = 0.5;

    void validate() const;
};

/// Normalized reliability ρ = clamp(r/10, floor, ceiling).
double normalized_reliability(int reliability, const BfConfig& cfg);

/// log(posterior odds) − log(prior odds) for one cell's reports.
double evidence_log_odds(std::span<const int> reliabilities, const BfConfig& cfg);

/// Posterior for one cell; `prior` when there are no reports.
double bf_probability(std::span<const int> reliabilities, const BfConfig& cfg);

/// Per-cell posteriors (nx × ny) from each cell's report reliabilities,
/// indexed by linear cell index.
GridArrayd bf_detect(const std::vector<std::vector<int>>& cell_reliabilities, const GridSpec& spec,
                     const BfConfig& cfg);

/// Reports located on one grid, for fast per-window lookup.
class ReportIndex {
public:
    ReportIndex(const Dataset& ds, const GridSpec& spec);

    const GridSpec& grid() const { return spec_; }

    /// Reliabilities per cell for reports with time in [start, end).
    std::vector<std::vector<int>> window(Timestamp start, Timestamp end) const;

    /// Histogram of reliabilities per cell for [start, end): counts[cell][r − 1].
    void counts(Timestamp start, Timestamp end, std::vector<std::array<int, 10>>& out) const;

private:
    GridSpec spec_;
    std::vector<Timestamp> times_;
    std::vector<int> cells_;
    std::vector<int> reliabilities_;
};

struct BfCalibration {
    std::vector<double> prior_grid = {0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5};
    std::vector<double> threshold_grid;  // empty: the CNN threshold grid

    void validate() const;
};

struct BfCalibrationResult {
    BfConfig config;
    double train_f1 = 0.0;
};

/// Picks (prior, threshold) maximizing F1 over the given windows; ties keep
/// the first grid point (prior-major, ascending).
BfCalibrationResult calibrate_bf(const ReportIndex& index, std::span<const Timestamp> window_starts,
                                 std::span<const Timestamp> window_ends, std::span<const LabelArray> labels,
                                 const BfConfig& base, const BfCalibration& grid);

nlohmann::json to_json(const BfConfig& cfg);
BfConfig bf_config_from_json(const nlohmann::json& j, const BfConfig& defaults = {});

}  // namespace crome
