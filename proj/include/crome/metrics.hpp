#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "crome/labels.hpp"
#include "json.hpp"

namespace crome {

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;

    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
};

struct ClassificationMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    ConfusionCounts counts;
};

struct EarlyMetrics {
    double early_pred_pct = 0.0;
    std::optional<double> avg_distance_km;
    std::optional<double> avg_early_time_min;
    std::int64_t early_matches = 0;
};

struct MetricsReport {
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double early_pred_pct = 0.0;
    std::optional<double> avg_distance_km;
    std::optional<double> avg_early_time_min;
    ConfusionCounts counts;
    std::int64_t matched_incidents = 0;
    std::int64_t total_incidents = 0;
};

/// Harmonic mean; 0 when both are 0.
double f1_score(double precision, double recall);

ClassificationMetrics metrics_from_counts(const ConfusionCounts& counts);

/// Counts over one pair of per-cell decision/label arrays of equal shape.
ConfusionCounts confusion(const LabelArray& predicted, const LabelArray& truth);

/// Per-cell, per-window counts. Both sequences must cover the same windows in
/// the same order with matching grid shapes.
ClassificationMetrics classification_metrics(std::span<const LabelGrid> predictions, std::span<const LabelGrid> labels);

EarlyMetrics early_metrics(std::span<const IncidentMatch> matches, std::int64_t total_incidents);

MetricsReport make_report(const ClassificationMetrics& cls, const EarlyMetrics& early,
                          std::int64_t matched_incidents, std::int64_t total_incidents);

nlohmann::json to_json(const MetricsReport& m);
MetricsReport metrics_from_json(const nlohmann::json& j);

}  // namespace crome
