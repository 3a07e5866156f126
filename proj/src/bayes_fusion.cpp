#include "crome/bayes_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "crome/cnn.hpp"
#include "crome/metrics.hpp"

namespace crome {

void BfConfig::validate() const {
    if (!(prior > 0.0 && prior < 1.0)) {
        throw ConfigError("bf.prior: must lie in (0, 1)");
    }
    if (!(reliability_floor > 0.0 && reliability_floor < reliability_ceiling && reliability_ceiling < 1.0)) {
        throw ConfigError("bf.reliability_floor/ceiling: need 0 < floor < ceiling < 1");
    }
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ConfigError("bf.threshold: must lie in (0, 1)");
    }
}

void BfCalibration::validate() const {
    if (prior_grid.empty()) {
        throw ConfigError("bf.prior_grid: must not be empty");
    }
    for (double p : prior_grid) {
        if (!(p > 0.0 && p < 1.0)) {
            throw ConfigError("bf.prior_grid: priors must lie in (0, 1)");
        }
    }
    for (double t : threshold_grid) {
        if (!(t > 0.0 && t < 1.0)) {
            throw ConfigError("bf.threshold_grid: thresholds must lie in (0, 1)");
        }
    }
}

double normalized_reliability(int reliability, const BfConfig& cfg) {
    if (reliability < 1 || reliability > 10) {
        throw std::invalid_argument("bf: reliability " + std::to_string(reliability) + " outside [1, 10]");
    }
    return std::clamp(reliability / 10.0, cfg.reliability_floor, cfg.reliability_ceiling);
}

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Summing per reliability level in a fixed order makes the result exactly
/// independent of report order.
double log_odds_from_counts(const std::array<int, 10>& counts, const BfConfig& cfg) {
    double l = 0.0;
    for (int r = 1; r <= 10; ++r) {
        if (counts[r - 1] > 0) {
            const double rho = normalized_reliability(r, cfg);
            l += counts[r - 1] * logit(rho);
        }
    }
    return l;
}

/// Uninformative evidence returns the prior itself, not a rounded sigmoid(logit(prior)).
double posterior(double evidence, const BfConfig& cfg) {
    return evidence == 0.0 ? cfg.prior : sigmoid(logit(cfg.prior) + evidence);
}

}  // namespace

double evidence_log_odds(std::span<const int> reliabilities, const BfConfig& cfg) {
    std::array<int, 10> counts{};
    for (int r : reliabilities) {
        normalized_reliability(r, cfg);
        ++counts[r - 1];
    }
    return log_odds_from_counts(counts, cfg);
}

double bf_probability(std::span<const int> reliabilities, const BfConfig& cfg) {
    return posterior(evidence_log_odds(reliabilities, cfg), cfg);
}

GridArrayd bf_detect(const std::vector<std::vector<int>>& cell_reliabilities, const GridSpec& spec,
                     const BfConfig& cfg) {
    if (static_cast<int>(cell_reliabilities.size()) != spec.cell_count()) {
        throw std::invalid_argument("bf_detect: one reliability list per cell required");
    }
    GridArrayd p(spec.nx, spec.ny);
    for (int i = 0; i < spec.cell_count(); ++i) {
        p.data()[i] = bf_probability(cell_reliabilities[i], cfg);
    }
    return p;
}

ReportIndex::ReportIndex(const Dataset& ds, const GridSpec& spec) : spec_(spec) {
    for (const auto& r : ds.reports) {
        try {
            const CellIndex c = locate(spec, r.lat, r.lon);
            times_.push_back(r.time);
            cells_.push_back(linear_index(spec, c));
            reliabilities_.push_back(r.reliability);
        } catch (const OutOfGrid&) {
        }
    }
}

std::vector<std::vector<int>> ReportIndex::window(Timestamp start, Timestamp end) const {
    std::vector<std::vector<int>> out(spec_.cell_count());
    const auto lo = std::lower_bound(times_.begin(), times_.end(), start) - times_.begin();
    const auto hi = std::lower_bound(times_.begin(), times_.end(), end) - times_.begin();
    for (auto i = lo; i < hi; ++i) {
        out[cells_[i]].push_back(reliabilities_[i]);
    }
    return out;
}

void ReportIndex::counts(Timestamp start, Timestamp end, std::vector<std::array<int, 10>>& out) const {
    out.assign(spec_.cell_count(), std::array<int, 10>{});
    const auto lo = std::lower_bound(times_.begin(), times_.end(), start) - times_.begin();
    const auto hi = std::lower_bound(times_.begin(), times_.end(), end) - times_.begin();
    for (auto i = lo; i < hi; ++i) {
        ++out[cells_[i]][reliabilities_[i] - 1];
    }
}

BfCalibrationResult calibrate_bf(const ReportIndex& index, std::span<const Timestamp> window_starts,
                                 std::span<const Timestamp> window_ends, std::span<const LabelArray> labels,
                                 const BfConfig& base, const BfCalibration& grid) {
    base.validate();
    grid.validate();
    if (window_starts.size() != window_ends.size() || window_ends.size() != labels.size()) {
        throw std::invalid_argument("calibrate_bf: one start, end and label grid per window required");
    }
    const auto thresholds = grid.threshold_grid.empty() ? TrainConfig::default_threshold_grid() : grid.threshold_grid;

    // A cell's decision depends only on its evidence, so one histogram of
    // labelled evidence values scores every grid point.
    struct Tally {
        std::int64_t pos = 0;
        std::int64_t neg = 0;
    };
    std::map<double, Tally> by_evidence;
    std::int64_t total_pos = 0;
    std::int64_t total_neg = 0;
    std::vector<std::array<int, 10>> counts;
    for (std::size_t w = 0; w < window_ends.size(); ++w) {
        const auto& y = labels[w];
        if (y.size() != index.grid().cell_count()) {
            throw std::invalid_argument("calibrate_bf: label grid shape mismatch");
        }
        index.counts(window_starts[w], window_ends[w], counts);
        for (int c = 0; c < index.grid().cell_count(); ++c) {
            const bool pos = y.data()[c] != 0;
            total_pos += pos;
            total_neg += !pos;
            if (std::any_of(counts[c].begin(), counts[c].end(), [](int n) { return n > 0; })) {
                auto& t = by_evidence[log_odds_from_counts(counts[c], base)];
                t.pos += pos;
                t.neg += !pos;
            }
        }
    }
    // Cells without reports sit at evidence 0 alongside any reported cells whose evidence cancels.
    {
        std::int64_t reported_pos = 0;
        std::int64_t reported_neg = 0;
        for (const auto& [l, t] : by_evidence) {
            reported_pos += t.pos;
            reported_neg += t.neg;
        }
        auto& zero = by_evidence[0.0];
        zero.pos += total_pos - reported_pos;
        zero.neg += total_neg - reported_neg;
    }
    BfCalibrationResult best;
    best.config = base;
    best.train_f1 = -1.0;
    for (double prior : grid.prior_grid) {
        for (double thr : thresholds) {
            BfConfig cfg = base;
            cfg.prior = prior;
            ConfusionCounts cc;
            for (const auto& [l, t] : by_evidence) {
                if (posterior(l, cfg) >= thr) {
                    cc.tp += t.pos;
                    cc.fp += t.neg;
                }
            }
            cc.fn = total_pos - cc.tp;
            const double f1 = metrics_from_counts(cc).f1;
            if (f1 > best.train_f1) {
                best.train_f1 = f1;
                best.config.prior = prior;
                best.config.threshold = thr;
            }
        }
    }
    return best;
}

nlohmann::json to_json(const BfConfig& c) {
    return {{"prior", c.prior},
            {"reliability_floor", c.reliability_floor},
            {"reliability_ceiling", c.reliability_ceiling},
            {"threshold", c.threshold}};
}

BfConfig bf_config_from_json(const nlohmann::json& j, const BfConfig& d) {
    BfConfig c = d;
    try {
        c.prior = j.value("prior", c.prior);
        c.reliability_floor = j.value("reliability_floor", c.reliability_floor);
        c.reliability_ceiling = j.value("reliability_ceiling", c.reliability_ceiling);
        c.threshold = j.value("threshold", c.threshold);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bf: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace crome
