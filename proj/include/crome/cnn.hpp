#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "crome/features.hpp"
#include "crome/labels.hpp"
#include "json.hpp"

namespace crome {

enum class ConvActivation { kLinear = 0, kRelu = 1 };

/// conv(2×2, same) → maxpool(2×2, stride 2, ceil) → conv(2×2, same) → flatten
/// → dense(2·N_o, ReLU) → dense(N_o, sigmoid), with N_o = nx·ny.
struct CnnSpec {
    int nx = 4;
    int ny = 4;
    int channels = 1;
    int filters1 = 32;
    int filters2 = 32;
    ConvActivation conv_activation = ConvActivation::kLinear;

    static constexpr int kPaperFilters = 256;

    int cells() const { return nx * ny; }
    int outputs() const { return cells(); }
    int hidden() const { return 2 * outputs(); }
    int pooled_nx() const { return (nx + 1) / 2; }
    int pooled_ny() const { return (ny + 1) / 2; }
    int pooled_cells() const { return pooled_nx() * pooled_ny(); }
    int flat_size() const { return pooled_cells() * filters2; }
    std::int64_t parameter_count() const;

    void validate() const;

    friend bool operator==(const CnnSpec&, const CnnSpec&) = default;
};

struct TrainConfig {
    int epochs = 4;  // largest epoch count considered by cross-validation
    int batch_size = 32;
    double learning_rate = 0.01;
    double momentum = 0.9;
    /// L2 penalty coefficient, applied to every parameter in the SGD update.
    double weight_decay = 1e-4;
    double pos_weight = 0.0;  // <= 0: #negatives / #positives of the training labels
    std::vector<double> threshold_grid = default_threshold_grid();
    int folds = 3;
    std::uint64_t seed = 42;
    /// Run the training loop in float; saved weights and inference stay double.
    bool single_precision = true;

    static std::vector<double> default_threshold_grid();
    void validate() const;
};

/// Flat weight layout, blocks in this order, each matrix row-major:
///   conv1 W (4·C × F1), conv1 b (F1), conv2 W (4·F1 × F2), conv2 b (F2),
///   dense1 W (P·F2 × H), dense1 b (H), dense2 W (H × N_o), dense2 b (N_o).
/// Conv rows are tap-major ((dx·2 + dy)·C + c) for the tap at (x+dx, y+dy);
/// the flattened conv2 output is indexed (pooled cell)·F2 + filter, with
/// pooled cells x-major. P is the pooled cell count, H = 2·N_o.
struct TrainedModel {
    CnnSpec spec;
    Eigen::VectorXd weights;
    double threshold = 0.5;
    nlohmann::json train_manifest = nlohmann::json::object();
};

/// Network inputs: stacked windows (cells × channels) and their label grids.
class SampleSet {
public:
    virtual ~SampleSet() = default;
    virtual std::size_t size() const = 0;
    virtual int cells() const = 0;
    virtual int channels() const = 0;
    virtual void input(std::size_t i, Eigen::Ref<GridArrayd> out) const = 0;
    virtual const LabelArray& label(std::size_t i) const = 0;
};

/// Windows drawn from a frame store, labelled in memory.
class WindowSamples final : public SampleSet {
public:
    WindowSamples(const FrameStore& store, int window_length, std::vector<std::int64_t> end_bins,
                  std::vector<LabelArray> labels);

    std::size_t size() const override { return end_bins_.size(); }
    int cells() const override { return store_->grid().cell_count(); }
    int channels() const override { return k_ * kFeatureCount; }
    void input(std::size_t i, Eigen::Ref<GridArrayd> out) const override;
    const LabelArray& label(std::size_t i) const override { return labels_[i]; }
    std::int64_t end_bin(std::size_t i) const { return end_bins_[i]; }

private:
    const FrameStore* store_;
    int k_;
    std::vector<std::int64_t> end_bins_;
    std::vector<LabelArray> labels_;
};

/// Samples held fully in memory; used by tests and small experiments.
class MemorySamples final : public SampleSet {
public:
    void add(GridArrayd input, LabelArray label);

    std::size_t size() const override { return inputs_.size(); }
    int cells() const override { return inputs_.empty() ? 0 : static_cast<int>(inputs_.front().rows()); }
    int channels() const override { return inputs_.empty() ? 0 : static_cast<int>(inputs_.front().cols()); }
    void input(std::size_t i, Eigen::Ref<GridArrayd> out) const override { out = inputs_[i]; }
    const LabelArray& label(std::size_t i) const override { return labels_[i]; }

private:
    std::vector<GridArrayd> inputs_;
    std::vector<LabelArray> labels_;
};

/// Glorot-uniform weights, zero biases.
Eigen::VectorXd init_weights(const CnnSpec& spec, std::uint64_t seed);

/// Per-cell probabilities (nx × ny, row-major).
GridArrayd forward(const TrainedModel& model, const GridArrayd& input);

struct LossGrad {
    double loss = 0.0;
    Eigen::VectorXd grad;
};

/// Mean pos-weighted binary cross-entropy over all cells of all samples and
/// its exact gradient. Probabilities are clamped to [1e-12, 1 − 1e-12].
LossGrad loss_and_grad(const TrainedModel& model, std::span<const GridArrayd> inputs,
                       std::span<const LabelArray> labels, double pos_weight);

struct TrainReport {
    int chosen_epochs = 0;
    double chosen_threshold = 0.5;
    double validation_f1 = 0.0;
    double pos_weight = 1.0;
    std::vector<double> epoch_loss;  // final fit, mean training loss per epoch
};

/// Cross-validated epochs/threshold selection, then a final fit on all of `data`.
TrainedModel train(const SampleSet& data, const CnnSpec& spec, const TrainConfig& cfg, TrainReport* report = nullptr);

/// Plain mini-batch SGD with momentum for a fixed number of epochs; `on_epoch`
/// is called after each epoch with (epoch, mean loss, current weights).
Eigen::VectorXd fit(const SampleSet& data, std::span<const std::size_t> indices, const CnnSpec& spec,
                    const TrainConfig& cfg, double pos_weight, int epochs,
                    const std::function<void(int, double, const Eigen::VectorXd&)>& on_epoch = {});

/// Probabilities for the samples `ids`, one row (nx·ny) per sample, evaluated in chunks of `batch`.
GridArrayd predict(const TrainedModel& model, const SampleSet& data, std::span<const std::size_t> ids,
                   int batch = 64);

std::vector<CellIndex> detect(const TrainedModel& model, const GridArrayd& input);

void save_model(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_model(const std::filesystem::path& path);

nlohmann::json to_json(const CnnSpec& spec);
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& defaults = {});

}  // namespace crome
