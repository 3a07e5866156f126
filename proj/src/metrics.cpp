#include "crome/metrics.hpp"

#include <stdexcept>
#include <unordered_set>

namespace crome {

double f1_score(double precision, double recall) {
    const double s = precision + recall;
    return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

ClassificationMetrics metrics_from_counts(const ConfusionCounts& c) {
    ClassificationMetrics m;
    m.counts = c;
    m.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
    m.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    m.f1 = f1_score(m.precision, m.recall);
    return m;
}

ConfusionCounts confusion(const LabelArray& predicted, const LabelArray& truth) {
    if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols()) {
        throw std::invalid_argument("confusion: shape mismatch");
    }
    ConfusionCounts c;
    const auto* p = predicted.data();
    const auto* t = truth.data();
    for (Eigen::Index i = 0; i < predicted.size(); ++i) {
        const bool pos = p[i] != 0;
        const bool lab = t[i] != 0;
        c.tp += pos && lab;
        c.fp += pos && !lab;
        c.fn += !pos && lab;
    }
    return c;
}

ClassificationMetrics classification_metrics(std::span<const LabelGrid> predictions, std::span<const LabelGrid> labels) {
    if (predictions.size() != labels.size()) {
        throw std::invalid_argument("classification_metrics: window counts differ");
    }
    ConfusionCounts total;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i].end_bin.index != labels[i].end_bin.index) {
            throw std::invalid_argument("classification_metrics: window " + std::to_string(i) +
                                        " covers different bins");
        }
        total += confusion(predictions[i].values, labels[i].values);
    }
    return metrics_from_counts(total);
}

EarlyMetrics early_metrics(std::span<const IncidentMatch> matches, std::int64_t total_incidents) {
    std::unordered_set<std::string> ids;
    for (const auto& m : matches) {
        if (!ids.insert(m.incident_id).second) {
            throw std::invalid_argument("early_metrics: incident '" + m.incident_id + "' matched twice");
        }
    }
    if (total_incidents < static_cast<std::int64_t>(ids.size())) {
        throw std::invalid_argument("early_metrics: more matched incidents than total incidents");
    }
    EarlyMetrics out;
    double dist = 0.0;
    double lead = 0.0;
    for (const auto& m : matches) {
        if (m.lead_minutes > 0.0) {
            ++out.early_matches;
            dist += m.distance_km;
            lead += m.lead_minutes;
        }
    }
    if (total_incidents > 0) {
        out.early_pred_pct = 100.0 * static_cast<double>(out.early_matches) / static_cast<double>(total_incidents);
    }
    if (out.early_matches > 0) {
        out.avg_distance_km = dist / static_cast<double>(out.early_matches);
        out.avg_early_time_min = lead / static_cast<double>(out.early_matches);
    }
    return out;
}

MetricsReport make_report(const ClassificationMetrics& cls, const EarlyMetrics& early, std::int64_t matched_incidents,
                          std::int64_t total_incidents) {
    MetricsReport r;
    r.f1 = cls.f1;
    r.precision = cls.precision;
    r.recall = cls.recall;
    r.counts = cls.counts;
    r.early_pred_pct = early.early_pred_pct;
    r.avg_distance_km = early.avg_distance_km;
    r.avg_early_time_min = early.avg_early_time_min;
    r.matched_incidents = matched_incidents;
    r.total_incidents = total_incidents;
    return r;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) {
        return std::nullopt;
    }
    return j.at(key).get<double>();
}

}  // namespace

nlohmann::json to_json(const MetricsReport& m) {
    return {{"f1", m.f1},
            {"precision", m.precision},
            {"recall", m.recall},
            {"early_pred_pct", m.early_pred_pct},
            {"avg_distance_km", optional_json(m.avg_distance_km)},
            {"avg_early_time_min", optional_json(m.avg_early_time_min)},
            {"tp", m.counts.tp},
            {"fp", m.counts.fp},
            {"fn", m.counts.fn},
            {"matched_incidents", m.matched_incidents},
            {"total_incidents", m.total_incidents}};
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
    MetricsReport m;
    m.f1 = j.at("f1").get<double>();
    m.precision = j.at("precision").get<double>();
    m.recall = j.at("recall").get<double>();
    m.early_pred_pct = j.at("early_pred_pct").get<double>();
    m.avg_distance_km = optional_from(j, "avg_distance_km");
    m.avg_early_time_min = optional_from(j, "avg_early_time_min");
    m.counts = {j.at("tp").get<std::int64_t>(), j.at("fp").get<std::int64_t>(), j.at("fn").get<std::int64_t>()};
    m.matched_incidents = j.at("matched_incidents").get<std::int64_t>();
    m.total_incidents = j.at("total_incidents").get<std::int64_t>();
    return m;
}

}  // namespace crome
