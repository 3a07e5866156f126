#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crome/metrics.hpp"
#include "json.hpp"

namespace crome {

/// Monotone non-decreasing transforms applied to Δt and Δs.
enum class Transform { kIdentity, kLog, kSqrt, kSquare };

Transform transform_from_name(const std::string& name);
std::string transform_name(Transform t);
double apply(Transform t, double x);

struct ObjectiveConfig {
    std::array<double, 3> gammas{1.0, 1.0, 1.0};
    Transform z1 = Transform::kIdentity;  // over Δt
    Transform z2 = Transform::kIdentity;  // over Δs
    /// Box widths per objective; unset means "derive from the sweep grid".
    std::optional<std::array<double, 3>> epsilons;

    void validate() const;
};

/// (0.02 on F1, smallest gap between distinct transformed grid values of Δt
/// and of Δs); a single grid value gets width 0 (raw value).
std::array<double, 3> default_epsilons(const ObjectiveConfig& cfg, std::span<const double> delta_t_values,
                                       std::span<const double> delta_s_values);

struct Candidate {
    std::string detector;  // "cnn" or "bf"
    double delta_s_km = 0.0;
    double delta_t_min = 0.0;
    double f1 = 0.0;
    std::string model_ref;
    MetricsReport metrics;
};

/// All components are maximized: (γ1·f1, −γ2·z1(Δt), −γ3·z2(Δs)).
using ObjectiveVector = std::vector<double>;

ObjectiveVector objectives(const Candidate& c, const ObjectiveConfig& cfg);

/// a ≥ b component-wise with at least one strict inequality.
bool dominates(std::span<const double> a, std::span<const double> b);

/// floor(v_i / ε_i), or v_i itself where ε_i = 0.
std::vector<double> eps_box(std::span<const double> v, std::span<const double> epsilons);

struct InsertResult {
    bool accepted = false;
    std::vector<std::size_t> evicted;  // tags of removed members
    std::string diagnostic;
};

/// Additive ε-dominance archive. Members are identified by caller-chosen tags.
class EpsilonArchive {
public:
    struct Member {
        std::size_t tag;
        ObjectiveVector v;
        std::vector<double> box;
    };

    explicit EpsilonArchive(std::vector<double> epsilons);

    InsertResult insert(const ObjectiveVector& v, std::size_t tag);

    const std::vector<Member>& members() const { return members_; }
    const std::vector<double>& epsilons() const { return eps_; }
    std::size_t size() const { return members_.size(); }

private:
    double corner_distance(const ObjectiveVector& v, const std::vector<double>& box) const;

    std::vector<double> eps_;
    std::vector<Member> members_;
};

/// γ1·f1 − γ2·z1(Δt) − γ3·z2(Δs).
double scalarize(const Candidate& c, const ObjectiveConfig& cfg);

/// Same weighting after min-max normalizing F1, z1(Δt) and z2(Δs) over the
/// candidate set (a constant objective normalizes to 0).
std::vector<double> scalarize_normalized(std::span<const Candidate> cands, const ObjectiveConfig& cfg);

nlohmann::json to_json(const ObjectiveConfig& cfg);
ObjectiveConfig objective_config_from_json(const nlohmann::json& j, const ObjectiveConfig& defaults = {});

}  // namespace crome
