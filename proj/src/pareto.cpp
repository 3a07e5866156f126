#include "crome/pareto.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "crome/core_data.hpp"

namespace crome {

Transform transform_from_name(const std::string& name) {
    if (name == "identity") return Transform::kIdentity;
    if (name == "log") return Transform::kLog;
    if (name == "sqrt") return Transform::kSqrt;
    if (name == "square") return Transform::kSquare;
    throw ConfigError("objectives: unknown transform '" + name + "' (identity, log, sqrt, square)");
}

std::string transform_name(Transform t) {
    switch (t) {
        case Transform::kIdentity: return "identity";
        case Transform::kLog: return "log";
        case Transform::kSqrt: return "sqrt";
        case Transform::kSquare: return "square";
    }
    return "identity";
}

double apply(Transform t, double x) {
    switch (t) {
        case Transform::kIdentity: return x;
        case Transform::kLog: return std::log(x);
        case Transform::kSqrt: return std::sqrt(x);
        case Transform::kSquare: return x * x;  // Δt, Δs > 0, so monotone
    }
    return x;
}

void ObjectiveConfig::validate() const {
    for (double g : gammas) {
        if (!(g > 0.0) || !std::isfinite(g)) {
            throw ConfigError("objectives.gammas: must be positive");
        }
    }
    if (epsilons) {
        for (double e : *epsilons) {
            if (!(e >= 0.0) || !std::isfinite(e)) {
                throw ConfigError("objectives.epsilons: must be non-negative");
            }
        }
    }
}

namespace {

double smallest_gap(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    double gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < v.size(); ++i) {
        gap = std::min(gap, v[i] - v[i - 1]);
    }
    return std::isfinite(gap) ? gap : 0.0;
}

}  // namespace

std::array<double, 3> default_epsilons(const ObjectiveConfig& cfg, std::span<const double> delta_t_values,
                                       std::span<const double> delta_s_values) {
    std::vector<double> zt, zs;
    for (double t : delta_t_values) zt.push_back(cfg.gammas[1] * apply(cfg.z1, t));
    for (double s : delta_s_values) zs.push_back(cfg.gammas[2] * apply(cfg.z2, s));
    return {0.02 * cfg.gammas[0], smallest_gap(zt), smallest_gap(zs)};
}

ObjectiveVector objectives(const Candidate& c, const ObjectiveConfig& cfg) {
    return {cfg.gammas[0] * c.f1, -cfg.gammas[1] * apply(cfg.z1, c.delta_t_min),
            -cfg.gammas[2] * apply(cfg.z2, c.delta_s_km)};
}

bool dominates(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("dominates: objective vectors differ in length");
    }
    bool strict = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] < b[i]) return false;
        strict = strict || a[i] > b[i];
    }
    return strict;
}

std::vector<double> eps_box(std::span<const double> v, std::span<const double> eps) {
    if (v.size() != eps.size()) {
        throw std::invalid_argument("eps_box: one epsilon per objective required");
    }
    std::vector<double> b(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        b[i] = eps[i] > 0.0 ? std::floor(v[i] / eps[i]) : v[i];
    }
    return b;
}

EpsilonArchive::EpsilonArchive(std::vector<double> epsilons) : eps_(std::move(epsilons)) {
    for (double e : eps_) {
        if (!(e >= 0.0) || !std::isfinite(e)) {
            throw std::invalid_argument("EpsilonArchive: epsilons must be finite and non-negative");
        }
    }
}

double EpsilonArchive::corner_distance(const ObjectiveVector& v, const std::vector<double>& box) const {
    double d2 = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (eps_[i] > 0.0) {
            const double d = (box[i] + 1.0) - v[i] / eps_[i];
            d2 += d * d;
        }
    }
    return std::sqrt(d2);
}

InsertResult EpsilonArchive::insert(const ObjectiveVector& v, std::size_t tag) {
    InsertResult r;
    if (v.size() != eps_.size()) {
        throw std::invalid_argument("EpsilonArchive::insert: objective vector length does not match epsilons");
    }
    for (double x : v) {
        if (!std::isfinite(x)) {
            r.diagnostic = "non-finite objective";
            return r;
        }
    }
    const auto box = eps_box(v, eps_);
    for (auto& m : members_) {
        if (m.box == box) {
            if (corner_distance(v, box) < corner_distance(m.v, box)) {
                r.accepted = true;
                r.evicted.push_back(m.tag);
                r.diagnostic = "replaced the member of its box";
                m = {tag, v, box};
            } else {
                r.diagnostic = "box occupied by a member at least as close to its corner";
            }
            return r;
        }
        if (dominates(m.box, box)) {
            r.diagnostic = "box dominated by member " + std::to_string(m.tag);
            return r;
        }
    }
    std::erase_if(members_, [&](const Member& m) {
        if (dominates(box, m.box)) {
            r.evicted.push_back(m.tag);
            return true;
        }
        return false;
    });
    members_.push_back({tag, v, box});
    r.accepted = true;
    return r;
}

double scalarize(const Candidate& c, const ObjectiveConfig& cfg) {
    return cfg.gammas[0] * c.f1 - cfg.gammas[1] * apply(cfg.z1, c.delta_t_min) -
           cfg.gammas[2] * apply(cfg.z2, c.delta_s_km);
}

std::vector<double> scalarize_normalized(std::span<const Candidate> cands, const ObjectiveConfig& cfg) {
    if (cands.empty()) {
        return {};
    }
    std::array<std::vector<double>, 3> cols;
    for (const auto& c : cands) {
        cols[0].push_back(c.f1);
        cols[1].push_back(apply(cfg.z1, c.delta_t_min));
        cols[2].push_back(apply(cfg.z2, c.delta_s_km));
    }
    for (auto& col : cols) {
        const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
        const double a = *lo;
        const double range = *hi - *lo;
        for (double& x : col) {
            x = range > 0.0 ? (x - a) / range : 0.0;
        }
    }
    std::vector<double> out(cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i) {
        out[i] = cfg.gammas[0] * cols[0][i] - cfg.gammas[1] * cols[1][i] - cfg.gammas[2] * cols[2][i];
    }
    return out;
}

nlohmann::json to_json(const ObjectiveConfig& c) {
    nlohmann::json j = {{"gammas", c.gammas}, {"z1", transform_name(c.z1)}, {"z2", transform_name(c.z2)}};
    j["epsilons"] = c.epsilons ? nlohmann::json(*c.epsilons) : nlohmann::json(nullptr);
    return j;
}

ObjectiveConfig objective_config_from_json(const nlohmann::json& j, const ObjectiveConfig& d) {
    ObjectiveConfig c = d;
    try {
        if (j.contains("gammas")) c.gammas = j.at("gammas").get<std::array<double, 3>>();
        if (j.contains("z1")) c.z1 = transform_from_name(j.at("z1").get<std::string>());
        if (j.contains("z2")) c.z2 = transform_from_name(j.at("z2").get<std::string>());
        if (j.contains("epsilons")) {
            if (j.at("epsilons").is_null()) {
                c.epsilons.reset();
            } else {
                c.epsilons = j.at("epsilons").get<std::array<double, 3>>();
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("objectives: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace crome
