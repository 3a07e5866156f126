#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "crome/bayes_fusion.hpp"
#include "crome/cnn.hpp"
#include "crome/core_data.hpp"
#include "crome/features.hpp"
#include "crome/labels.hpp"
#include "crome/metrics.hpp"
#include "crome/pareto.hpp"
#include "crome/synth.hpp"
#include "json.hpp"

namespace crome {

inline constexpr const char* kToolVersion = "1.0.0";

/// Fully resolved run configuration. Sections mirror the JSON document:
/// data, grid, time, labels, cnn, bf, objectives, sweep, output, seed.
struct RunConfig {
    // data: either a dataset directory (with dataset.json) or a synthetic scenario
    std::optional<std::filesystem::path> data_dir;
    ScenarioConfig scenario = default_scenario();

    // grid
    std::optional<BoundingBox> region;  // defaults to the dataset region
    std::vector<double> delta_s_km = {1.0, 3.0, 5.0};

    // time
    std::vector<int> delta_t_min = {5, 20, 30};
    int t_prime_min = 30;
    std::optional<Timestamp> epoch;  // defaults to the dataset start

    MatchRule labels;

    // cnn
    int filters = 32;
    ConvActivation conv_activation = ConvActivation::kLinear;
    TrainConfig train;
    /// Train on every n-th training window (1 = all).
    int train_stride = 1;

    // bf
    BfConfig bf;
    BfCalibration bf_calibration;

    ObjectiveConfig objectives;

    // sweep
    std::vector<std::string> detectors = {"cnn", "bf"};
    std::vector<int> rotations;  // empty: all

    std::filesystem::path output_dir = "run";
    std::uint64_t seed = 42;

    void validate() const;
};

/// Parses a config document over the defaults. Unknown sections and keys raise
/// ConfigError naming them. The top-level seed seeds the scenario and the CNN
/// unless those sections set their own.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

/// Sets every seed (scenario, CNN, top level) to `seed`.
void override_seed(RunConfig& cfg, std::uint64_t seed);

struct LoadedData {
    Dataset dataset;
    Timestamp start = 0;
    Timestamp end = 0;
};

/// Reads dataset.json plus the CSVs it names.
LoadedData load_data_dir(const std::filesystem::path& dir);

/// The configured dataset: from disk, or generated in memory.
LoadedData load_data(const RunConfig& cfg);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
std::uint64_t dataset_fingerprint(const Dataset& ds);

/// One (Δs, Δt) discretization of a dataset: grid, frames and report index.
class Discretization {
public:
    Discretization(const LoadedData& data, const RunConfig& cfg, double delta_s_km, int delta_t_min);

    const GridSpec& grid() const { return grid_; }
    const FrameStore& frames() const { return *frames_; }
    const ReportIndex& reports() const { return reports_; }
    int window_length() const { return k_; }
    int step_minutes() const { return step_; }
    double delta_s_km() const { return delta_s_; }
    Timestamp window_start(std::int64_t end_bin) const;
    Timestamp window_end(std::int64_t end_bin) const;

private:
    GridSpec grid_;
    double delta_s_;
    int step_;
    int k_;
    int t_prime_;
    std::unique_ptr<FrameStore> frames_;
    ReportIndex reports_;
};

/// Windows and labels of one train/test rotation on one discretization.
/// Training labels use only incidents outside the test span; test labels only
/// incidents inside it.
struct RotationSplit {
    Rotation rotation;
    std::vector<std::int64_t> train_bins;
    std::vector<LabelArray> train_labels;
    std::vector<std::int64_t> test_bins;
    std::vector<LabelArray> test_labels;
    std::vector<Incident> test_incidents;
};

RotationSplit make_split(const Discretization& d, const Dataset& ds, const Rotation& rot, const MatchRule& rule);

/// Windows in, per-cell probabilities and thresholded cells out.
class Detector {
public:
    virtual ~Detector() = default;
    virtual std::string name() const = 0;
    virtual double threshold() const = 0;
    /// One row (nx·ny) per window.
    virtual GridArrayd probabilities(std::span<const std::int64_t> end_bins) const = 0;
};

class CnnDetector final : public Detector {
public:
    CnnDetector(TrainedModel model, const Discretization& d) : model_(std::move(model)), d_(d) {}
    std::string name() const override { return "cnn"; }
    double threshold() const override { return model_.threshold; }
    GridArrayd probabilities(std::span<const std::int64_t> end_bins) const override;
    const TrainedModel& model() const { return model_; }

private:
    TrainedModel model_;
    const Discretization& d_;
};

class BfDetector final : public Detector {
public:
    BfDetector(BfConfig cfg, const Discretization& d) : cfg_(cfg), d_(d) {}
    std::string name() const override { return "bf"; }
    double threshold() const override { return cfg_.threshold; }
    GridArrayd probabilities(std::span<const std::int64_t> end_bins) const override;
    const BfConfig& config() const { return cfg_; }

private:
    BfConfig cfg_;
    const Discretization& d_;
};

CnnSpec cnn_spec(const Discretization& d, const RunConfig& cfg);

TrainedModel train_cnn(const Discretization& d, const RotationSplit& split, const RunConfig& cfg,
                       TrainReport* report = nullptr);
BfCalibrationResult calibrate_bf(const Discretization& d, const RotationSplit& split, const RunConfig& cfg);

struct Evaluation {
    MetricsReport metrics;
    std::vector<LabelGrid> predictions;
    std::vector<IncidentMatch> matches;
};

Evaluation evaluate(const Detector& det, const Discretization& d, const RotationSplit& split, const MatchRule& rule);

/// Mean of each metric over rotations (optional averages over the rotations
/// that have them); counts are summed.
MetricsReport aggregate(std::span<const MetricsReport> per_rotation);

struct SweepOptions {
    bool overwrite = false;
    bool quiet = false;
};

struct SweepResult {
    std::vector<Candidate> candidates;  // aggregate over rotations, canonical order
    std::vector<std::size_t> archive;   // indices into candidates
    std::array<double, 3> epsilons{};
    std::vector<std::string> diagnostics;
};

/// Trains, calibrates and evaluates every (Δs, Δt, detector) over every
/// rotation, then writes per-rotation and aggregate candidates.csv /
/// pareto.json, metrics, models and manifest.json under cfg.output_dir.
/// Existing model files are reused unless `overwrite`.
SweepResult run_sweep(const RunConfig& cfg, const SweepOptions& opts = {});

/// Archive over the CNN candidates only.
EpsilonArchive build_archive(std::span<const Candidate> cands, const ObjectiveConfig& obj,
                             const std::array<double, 3>& eps);

void write_candidates_csv(const std::filesystem::path& path, std::span<const Candidate> cands,
                          std::span<const std::size_t> archive);
std::vector<Candidate> read_candidates_csv(const std::filesystem::path& path, std::vector<bool>* in_archive = nullptr);
nlohmann::json pareto_json(std::span<const Candidate> cands, const EpsilonArchive& archive,
                           const ObjectiveConfig& obj);

/// Model file name for one grid point and rotation, relative to the run directory.
std::string model_ref(const std::string& detector, double delta_s_km, int delta_t_min, int rotation);

}  // namespace crome
