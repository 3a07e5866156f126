#include "crome/cnn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include "crome/metrics.hpp"
#include "crome/random.hpp"

namespace crome {

std::int64_t CnnSpec::parameter_count() const {
    const std::int64_t c1 = 4LL * channels * filters1 + filters1;
    const std::int64_t c2 = 4LL * filters1 * filters2 + filters2;
    const std::int64_t d1 = static_cast<std::int64_t>(flat_size()) * hidden() + hidden();
    const std::int64_t d2 = static_cast<std::int64_t>(hidden()) * outputs() + outputs();
    return c1 + c2 + d1 + d2;
}

void CnnSpec::validate() const {
    if (nx < 4 || ny < 4) {
        throw std::invalid_argument("cnn: grid must be at least 4×4 for pooling, got " + std::to_string(nx) + "×" +
                                    std::to_string(ny));
    }
    if (channels <= 0 || filters1 <= 0 || filters2 <= 0) {
        throw std::invalid_argument("cnn: channel and filter counts must be positive");
    }
}

std::vector<double> TrainConfig::default_threshold_grid() {
    std::vector<double> g;
    for (int i = 1; i <= 19; ++i) {
        g.push_back(i / 20.0);
    }
    // Positive weighting pushes probabilities up, so the useful range extends close to 1.
    for (double t : {0.97, 0.99, 0.995, 0.998, 0.999}) {
        g.push_back(t);
    }
    return g;
}

void TrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1 || folds < 1) {
        throw ConfigError("cnn: epochs, batch_size and folds must be >= 1");
    }
    if (!(learning_rate > 0.0)) {
        throw ConfigError("cnn.learning_rate: must be positive");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ConfigError("cnn.momentum: must be in [0, 1)");
    }
    if (!(weight_decay >= 0.0)) {
        throw ConfigError("cnn.weight_decay: must be >= 0");
    }
    if (threshold_grid.empty()) {
        throw ConfigError("cnn.threshold_grid: must not be empty");
    }
    for (double t : threshold_grid) {
        if (!(t > 0.0 && t < 1.0)) {
            throw ConfigError("cnn.threshold_grid: thresholds must lie in (0, 1)");
        }
    }
}

// ---------------------------------------------------------------------------
// Samples

WindowSamples::WindowSamples(const FrameStore& store, int window_length, std::vector<std::int64_t> end_bins,
                             std::vector<LabelArray> labels)
    : store_(&store), k_(window_length), end_bins_(std::move(end_bins)), labels_(std::move(labels)) {
    if (end_bins_.size() != labels_.size()) {
        throw std::invalid_argument("WindowSamples: one label grid per window required");
    }
}

void WindowSamples::input(std::size_t i, Eigen::Ref<GridArrayd> out) const {
    store_->stack_input(end_bins_[i], k_, out);
}

void MemorySamples::add(GridArrayd input, LabelArray label) {
    if (!inputs_.empty() && (input.rows() != inputs_.front().rows() || input.cols() != inputs_.front().cols())) {
        throw std::invalid_argument("MemorySamples: inconsistent input shape");
    }
    inputs_.push_back(std::move(input));
    labels_.push_back(std::move(label));
}

namespace {

/// Multiplies every input channel by a fixed factor.
class ScaledSamples final : public SampleSet {
public:
    ScaledSamples(const SampleSet& base, Eigen::RowVectorXd scale) : base_(base), scale_(std::move(scale)) {}
    std::size_t size() const override { return base_.size(); }
    int cells() const override { return base_.cells(); }
    int channels() const override { return base_.channels(); }
    void input(std::size_t i, Eigen::Ref<GridArrayd> out) const override {
        base_.input(i, out);
        out.array().rowwise() *= scale_.array();
    }
    const LabelArray& label(std::size_t i) const override { return base_.label(i); }

private:
    const SampleSet& base_;
    Eigen::RowVectorXd scale_;
};

// ---------------------------------------------------------------------------
// Network engine

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

constexpr double kProbClamp = 1e-12;

/// Offsets of each parameter block inside the flat weight vector.
struct Layout {
    Eigen::Index conv1_w, conv1_b, conv2_w, conv2_b, dense1_w, dense1_b, dense2_w, dense2_b, total;

    explicit Layout(const CnnSpec& s) {
        Eigen::Index o = 0;
        conv1_w = o;
        o += 4LL * s.channels * s.filters1;
        conv1_b = o;
        o += s.filters1;
        conv2_w = o;
        o += 4LL * s.filters1 * s.filters2;
        conv2_b = o;
        o += s.filters2;
        dense1_w = o;
        o += static_cast<Eigen::Index>(s.flat_size()) * s.hidden();
        dense1_b = o;
        o += s.hidden();
        dense2_w = o;
        o += static_cast<Eigen::Index>(s.hidden()) * s.outputs();
        dense2_b = o;
        o += s.outputs();
        total = o;
    }
};

/// Same-padded 2×2 patches: row (b, x, y) holds taps (x+dx, y+dy) for
/// dx, dy ∈ {0, 1}, tap-major, zero beyond the far edges.
template <typename Scalar>
void im2col(const Mat<Scalar>& in, int batch, int nx, int ny, Mat<Scalar>& out) {
    const Eigen::Index c = in.cols();
    const int cells = nx * ny;
    out.setZero(static_cast<Eigen::Index>(batch) * cells, 4 * c);
    for (int b = 0; b < batch; ++b) {
        const Eigen::Index base = static_cast<Eigen::Index>(b) * cells;
        for (int x = 0; x < nx; ++x) {
            for (int y = 0; y < ny; ++y) {
                const Eigen::Index row = base + x * ny + y;
                for (int dx = 0; dx < 2; ++dx) {
                    for (int dy = 0; dy < 2; ++dy) {
                        if (x + dx < nx && y + dy < ny) {
                            out.row(row).segment((dx * 2 + dy) * c, c) = in.row(base + (x + dx) * ny + (y + dy));
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col.
template <typename Scalar>
void col2im(const Mat<Scalar>& cols, int batch, int nx, int ny, Eigen::Index c, Mat<Scalar>& out) {
    const int cells = nx * ny;
    out.setZero(static_cast<Eigen::Index>(batch) * cells, c);
    for (int b = 0; b < batch; ++b) {
        const Eigen::Index base = static_cast<Eigen::Index>(b) * cells;
        for (int x = 0; x < nx; ++x) {
            for (int y = 0; y < ny; ++y) {
                const Eigen::Index row = base + x * ny + y;
                for (int dx = 0; dx < 2; ++dx) {
                    for (int dy = 0; dy < 2; ++dy) {
                        if (x + dx < nx && y + dy < ny) {
                            out.row(base + (x + dx) * ny + (y + dy)) += cols.row(row).segment((dx * 2 + dy) * c, c);
                        }
                    }
                }
            }
        }
    }
}

template <typename Scalar>
class Network {
public:
    explicit Network(const CnnSpec& spec) : spec_(spec), layout_(spec) {}

    /// Forward pass over a stacked batch (batch·cells × channels); returns
    /// probabilities (batch × N_o).
    const Mat<Scalar>& forward(const Vec<Scalar>& w, const Mat<Scalar>& x, int batch) {
        batch_ = batch;
        const auto& s = spec_;
        im2col(x, batch, s.nx, s.ny, cols1_);
        conv1_.noalias() = cols1_ * conv1_w(w);
        conv1_.rowwise() += conv1_b(w);
        if (s.conv_activation == ConvActivation::kRelu) {
            conv1_ = conv1_.cwiseMax(Scalar(0));
        }
        pool(batch);
        im2col(pooled_, batch, s.pooled_nx(), s.pooled_ny(), cols2_);
        conv2_.noalias() = cols2_ * conv2_w(w);
        conv2_.rowwise() += conv2_b(w);
        if (s.conv_activation == ConvActivation::kRelu) {
            conv2_ = conv2_.cwiseMax(Scalar(0));
        }
        // conv2_ is row-major (batch·pcells × F2): each sample's block is its flattened vector.
        const Eigen::Map<const Mat<Scalar>> flat(conv2_.data(), batch, s.flat_size());
        hidden_.noalias() = flat * dense1_w(w);
        hidden_.rowwise() += dense1_b(w);
        hidden_ = hidden_.cwiseMax(Scalar(0));
        logits_.noalias() = hidden_ * dense2_w(w);
        logits_.rowwise() += dense2_b(w);
        probs_ = logits_.unaryExpr([](Scalar z) { return Scalar(1) / (Scalar(1) + std::exp(-z)); });
        return probs_;
    }

    /// Loss of the last forward pass and its gradient w.r.t. all weights.
    double backward(const Vec<Scalar>& w, const std::vector<const LabelArray*>& labels, double pos_weight,
                    Vec<Scalar>& grad) {
        const auto& s = spec_;
        const int batch = batch_;
        const double norm = 1.0 / (static_cast<double>(batch) * s.outputs());
        grad.resize(layout_.total);  // every block is assigned below

        double loss = 0.0;
        dlogits_.resize(batch, s.outputs());
        for (int b = 0; b < batch; ++b) {
            const std::uint8_t* y = labels[b]->data();
            for (int o = 0; o < s.outputs(); ++o) {
                const double p = static_cast<double>(probs_(b, o));
                const bool clamped = p < kProbClamp || p > 1.0 - kProbClamp;
                const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
                double d;
                if (y[o]) {
                    loss -= pos_weight * std::log(pc);
                    d = clamped ? 0.0 : pos_weight * (p - 1.0);
                } else {
                    loss -= std::log(1.0 - pc);
                    d = clamped ? 0.0 : p;
                }
                dlogits_(b, o) = static_cast<Scalar>(d * norm);
            }
        }

        // dense2
        grad_block(grad, layout_.dense2_w, s.hidden(), s.outputs()).noalias() = hidden_.transpose() * dlogits_;
        grad.segment(layout_.dense2_b, s.outputs()) = dlogits_.colwise().sum().transpose();
        dhidden_.noalias() = dlogits_ * dense2_w(w).transpose();
        dhidden_ = (hidden_.array() > Scalar(0)).select(dhidden_, Scalar(0));

        // dense1
        const Eigen::Map<const Mat<Scalar>> flat(conv2_.data(), batch, s.flat_size());
        grad_block(grad, layout_.dense1_w, s.flat_size(), s.hidden()).noalias() = flat.transpose() * dhidden_;
        grad.segment(layout_.dense1_b, s.hidden()) = dhidden_.colwise().sum().transpose();
        dconv2_.resize(static_cast<Eigen::Index>(batch) * s.pooled_cells(), s.filters2);
        Eigen::Map<Mat<Scalar>>(dconv2_.data(), batch, s.flat_size()).noalias() = dhidden_ * dense1_w(w).transpose();
        if (s.conv_activation == ConvActivation::kRelu) {
            dconv2_ = (conv2_.array() > Scalar(0)).select(dconv2_, Scalar(0));
        }

        // conv2
        grad_block(grad, layout_.conv2_w, 4 * s.filters1, s.filters2).noalias() = cols2_.transpose() * dconv2_;
        grad.segment(layout_.conv2_b, s.filters2) = dconv2_.colwise().sum().transpose();
        dcols2_.noalias() = dconv2_ * conv2_w(w).transpose();
        col2im(dcols2_, batch, s.pooled_nx(), s.pooled_ny(), s.filters1, dpooled_);

        // pool: route to the argmax
        dconv1_.setZero(static_cast<Eigen::Index>(batch) * s.cells(), s.filters1);
        for (Eigen::Index r = 0; r < dpooled_.rows(); ++r) {
            for (Eigen::Index f = 0; f < dpooled_.cols(); ++f) {
                dconv1_(argmax_(r, f), f) += dpooled_(r, f);
            }
        }
        if (s.conv_activation == ConvActivation::kRelu) {
            dconv1_ = (conv1_.array() > Scalar(0)).select(dconv1_, Scalar(0));
        }

        // conv1
        grad_block(grad, layout_.conv1_w, 4 * s.channels, s.filters1).noalias() = cols1_.transpose() * dconv1_;
        grad.segment(layout_.conv1_b, s.filters1) = dconv1_.colwise().sum().transpose();
        return loss * norm;
    }

    const Layout& layout() const { return layout_; }

private:
    using ConstMap = Eigen::Map<const Mat<Scalar>>;
    using ConstRowMap = Eigen::Map<const RowVec<Scalar>>;

    ConstMap conv1_w(const Vec<Scalar>& w) const {
        return ConstMap(w.data() + layout_.conv1_w, 4 * spec_.channels, spec_.filters1);
    }
    ConstRowMap conv1_b(const Vec<Scalar>& w) const { return ConstRowMap(w.data() + layout_.conv1_b, spec_.filters1); }
    ConstMap conv2_w(const Vec<Scalar>& w) const {
        return ConstMap(w.data() + layout_.conv2_w, 4 * spec_.filters1, spec_.filters2);
    }
    ConstRowMap conv2_b(const Vec<Scalar>& w) const { return ConstRowMap(w.data() + layout_.conv2_b, spec_.filters2); }
    ConstMap dense1_w(const Vec<Scalar>& w) const {
        return ConstMap(w.data() + layout_.dense1_w, spec_.flat_size(), spec_.hidden());
    }
    ConstRowMap dense1_b(const Vec<Scalar>& w) const { return ConstRowMap(w.data() + layout_.dense1_b, spec_.hidden()); }
    ConstMap dense2_w(const Vec<Scalar>& w) const {
        return ConstMap(w.data() + layout_.dense2_w, spec_.hidden(), spec_.outputs());
    }
    ConstRowMap dense2_b(const Vec<Scalar>& w) const {
        return ConstRowMap(w.data() + layout_.dense2_b, spec_.outputs());
    }

    static Eigen::Map<Mat<Scalar>> grad_block(Vec<Scalar>& g, Eigen::Index offset, Eigen::Index rows,
                                              Eigen::Index cols) {
        return Eigen::Map<Mat<Scalar>>(g.data() + offset, rows, cols);
    }

    void pool(int batch) {
        const auto& s = spec_;
        const int px = s.pooled_nx();
        const int py = s.pooled_ny();
        pooled_.resize(static_cast<Eigen::Index>(batch) * px * py, s.filters1);
        argmax_.resize(pooled_.rows(), pooled_.cols());
        for (int b = 0; b < batch; ++b) {
            const Eigen::Index in_base = static_cast<Eigen::Index>(b) * s.cells();
            const Eigen::Index out_base = static_cast<Eigen::Index>(b) * px * py;
            for (int i = 0; i < px; ++i) {
                for (int j = 0; j < py; ++j) {
                    const Eigen::Index out_row = out_base + i * py + j;
                    for (int f = 0; f < s.filters1; ++f) {
                        Eigen::Index best_row = in_base + (2 * i) * s.ny + 2 * j;
                        Scalar best = conv1_(best_row, f);
                        for (int dx = 0; dx < 2; ++dx) {
                            for (int dy = 0; dy < 2; ++dy) {
                                const int x = 2 * i + dx;
                                const int y = 2 * j + dy;
                                if (x < s.nx && y < s.ny) {
                                    const Eigen::Index r = in_base + x * s.ny + y;
                                    if (conv1_(r, f) > best) {
                                        best = conv1_(r, f);
                                        best_row = r;
                                    }
                                }
                            }
                        }
                        pooled_(out_row, f) = best;
                        argmax_(out_row, f) = best_row;
                    }
                }
            }
        }
    }

    CnnSpec spec_;
    Layout layout_;
    int batch_ = 0;
    Mat<Scalar> cols1_, conv1_, pooled_, cols2_, conv2_, hidden_, logits_, probs_;
    Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax_;
    Mat<Scalar> dlogits_, dhidden_, dconv2_, dcols2_, dpooled_, dconv1_;
};

void check_input(const CnnSpec& spec, const GridArrayd& input) {
    if (input.rows() != spec.cells() || input.cols() != spec.channels) {
        throw std::invalid_argument("cnn: input shape " + std::to_string(input.rows()) + "×" +
                                    std::to_string(input.cols()) + " does not match spec " +
                                    std::to_string(spec.cells()) + "×" + std::to_string(spec.channels));
    }
    if (!input.allFinite()) {
        throw std::invalid_argument("cnn: non-finite input");
    }
}

void check_weights(const TrainedModel& m) {
    m.spec.validate();
    if (m.weights.size() != m.spec.parameter_count()) {
        throw std::invalid_argument("cnn: weight vector length does not match spec");
    }
}

}  // namespace

Eigen::VectorXd init_weights(const CnnSpec& spec, std::uint64_t seed) {
    spec.validate();
    const Layout l(spec);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(l.total);
    Rng rng(seed);
    auto fill = [&](Eigen::Index offset, Eigen::Index fan_in, Eigen::Index fan_out) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (Eigen::Index i = 0; i < fan_in * fan_out; ++i) {
            w[offset + i] = rng.uniform(-limit, limit);
        }
    };
    fill(l.conv1_w, 4LL * spec.channels, spec.filters1);
    fill(l.conv2_w, 4LL * spec.filters1, spec.filters2);
    fill(l.dense1_w, spec.flat_size(), spec.hidden());
    fill(l.dense2_w, spec.hidden(), spec.outputs());
    return w;
}

GridArrayd forward(const TrainedModel& model, const GridArrayd& input) {
    check_weights(model);
    check_input(model.spec, input);
    Network<double> net(model.spec);
    const Mat<double> x = input;
    const auto& p = net.forward(model.weights, x, 1);
    return Eigen::Map<const GridArrayd>(p.data(), model.spec.nx, model.spec.ny);
}

LossGrad loss_and_grad(const TrainedModel& model, std::span<const GridArrayd> inputs,
                       std::span<const LabelArray> labels, double pos_weight) {
    check_weights(model);
    if (inputs.empty() || inputs.size() != labels.size()) {
        throw std::invalid_argument("loss_and_grad: need a non-empty batch with one label grid per input");
    }
    const auto& s = model.spec;
    const int batch = static_cast<int>(inputs.size());
    Mat<double> x(static_cast<Eigen::Index>(batch) * s.cells(), s.channels);
    std::vector<const LabelArray*> ys;
    for (int b = 0; b < batch; ++b) {
        check_input(s, inputs[b]);
        if (labels[b].size() != s.outputs()) {
            throw std::invalid_argument("loss_and_grad: label grid shape mismatch");
        }
        x.middleRows(static_cast<Eigen::Index>(b) * s.cells(), s.cells()) = inputs[b];
        ys.push_back(&labels[b]);
    }
    Network<double> net(s);
    net.forward(model.weights, x, batch);
    LossGrad out;
    out.loss = net.backward(model.weights, ys, pos_weight, out.grad);
    return out;
}

namespace {

template <typename Scalar>
struct BatchBuffer {
    Mat<double> raw;
    Mat<Scalar> x;
    std::vector<const LabelArray*> labels;

    void gather(const SampleSet& data, std::span<const std::size_t> ids) {
        const int cells = data.cells();
        raw.resize(static_cast<Eigen::Index>(ids.size()) * cells, data.channels());
        labels.clear();
        for (std::size_t b = 0; b < ids.size(); ++b) {
            data.input(ids[b], raw.middleRows(static_cast<Eigen::Index>(b) * cells, cells));
            labels.push_back(&data.label(ids[b]));
        }
        x = raw.template cast<Scalar>();
    }
};

/// Probabilities for `ids`, one row per sample, in chunks of `batch`.
template <typename Scalar>
Mat<double> predict_weights(const CnnSpec& spec, const Eigen::VectorXd& weights, const SampleSet& data,
                            std::span<const std::size_t> ids, int batch) {
    Network<Scalar> net(spec);
    const Vec<Scalar> w = weights.cast<Scalar>();
    Mat<double> out(static_cast<Eigen::Index>(ids.size()), spec.outputs());
    BatchBuffer<Scalar> buf;
    for (std::size_t start = 0; start < ids.size(); start += batch) {
        const std::size_t n = std::min<std::size_t>(batch, ids.size() - start);
        buf.gather(data, ids.subspan(start, n));
        out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) =
            net.forward(w, buf.x, static_cast<int>(n)).template cast<double>();
    }
    return out;
}

template <typename Scalar>
Eigen::VectorXd fit_impl(const SampleSet& data, std::span<const std::size_t> indices, const CnnSpec& spec,
                         const TrainConfig& cfg, double pos_weight, int epochs,
                         const std::function<void(int, double, const Eigen::VectorXd&)>& on_epoch) {
    Vec<Scalar> w = init_weights(spec, cfg.seed).cast<Scalar>();
    Vec<Scalar> velocity = Vec<Scalar>::Zero(w.size());
    Vec<Scalar> grad;
    const auto momentum = static_cast<Scalar>(cfg.momentum);
    const auto lr = static_cast<Scalar>(cfg.learning_rate);
    const auto decay = static_cast<Scalar>(cfg.weight_decay);
    Network<Scalar> net(spec);
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(indices.begin(), indices.end());
    BatchBuffer<Scalar> buf;
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - start);
            buf.gather(data, std::span<const std::size_t>(order).subspan(start, n));
            net.forward(w, buf.x, static_cast<int>(n));
            loss_sum += net.backward(w, buf.labels, pos_weight, grad);
            for (Eigen::Index i = 0; i < w.size(); ++i) {
                velocity[i] = momentum * velocity[i] - lr * (grad[i] + decay * w[i]);
                w[i] += velocity[i];
            }
            ++batches;
        }
        if (on_epoch) {
            on_epoch(epoch, batches ? loss_sum / static_cast<double>(batches) : 0.0, w.template cast<double>());
        }
    }
    return w.template cast<double>();
}

double auto_pos_weight(const SampleSet& data, std::span<const std::size_t> ids) {
    double pos = 0.0;
    double total = 0.0;
    for (auto i : ids) {
        const auto& y = data.label(i);
        pos += static_cast<double>(y.cast<int>().sum());
        total += static_cast<double>(y.size());
    }
    if (pos == 0.0) {
        throw std::runtime_error("train: no positive labels in the training data");
    }
    return std::max(1.0, (total - pos) / pos);
}

/// Root-mean-square of each input channel; the network sees inputs divided by it.
Eigen::RowVectorXd channel_scale(const SampleSet& data) {
    const int c = data.channels();
    Eigen::RowVectorXd sum_sq = Eigen::RowVectorXd::Zero(c);
    GridArrayd buf(data.cells(), c);
    const std::size_t stride = std::max<std::size_t>(1, data.size() / 2000);
    std::size_t n = 0;
    for (std::size_t i = 0; i < data.size(); i += stride, ++n) {
        data.input(i, buf);
        sum_sq += buf.array().square().matrix().colwise().sum();
    }
    Eigen::RowVectorXd scale(c);
    for (int j = 0; j < c; ++j) {
        const double rms = std::sqrt(sum_sq[j] / (static_cast<double>(n) * data.cells()));
        scale[j] = rms > 1e-9 ? 1.0 / rms : 1.0;
    }
    return scale;
}

/// Folds a per-channel input scale into the first convolution so the model
/// consumes raw inputs.
void fold_input_scale(const CnnSpec& spec, const Eigen::RowVectorXd& scale, Eigen::VectorXd& w) {
    const Layout l(spec);
    Eigen::Map<Mat<double>> conv1(w.data() + l.conv1_w, 4 * spec.channels, spec.filters1);
    for (int tap = 0; tap < 4; ++tap) {
        for (int c = 0; c < spec.channels; ++c) {
            conv1.row(tap * spec.channels + c) *= scale[c];
        }
    }
}

/// counts[t] accumulates the confusion at threshold_grid[t].
void accumulate_confusion(const Mat<double>& probs, const SampleSet& data, std::span<const std::size_t> ids,
                          const std::vector<double>& thresholds, std::vector<ConfusionCounts>& counts) {
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        const std::uint8_t* y = data.label(ids[static_cast<std::size_t>(r)]).data();
        for (Eigen::Index o = 0; o < probs.cols(); ++o) {
            const double p = probs(r, o);
            for (std::size_t t = 0; t < thresholds.size(); ++t) {
                const bool pos = p >= thresholds[t];
                counts[t].tp += pos && y[o];
                counts[t].fp += pos && !y[o];
                counts[t].fn += !pos && y[o];
            }
        }
    }
}

}  // namespace

Eigen::VectorXd fit(const SampleSet& data, std::span<const std::size_t> indices, const CnnSpec& spec,
                    const TrainConfig& cfg, double pos_weight, int epochs,
                    const std::function<void(int, double, const Eigen::VectorXd&)>& on_epoch) {
    spec.validate();
    cfg.validate();
    if (data.cells() != spec.cells() || data.channels() != spec.channels) {
        throw std::invalid_argument("fit: sample shape does not match spec");
    }
    if (cfg.single_precision) {
        return fit_impl<float>(data, indices, spec, cfg, pos_weight, epochs, on_epoch);
    }
    return fit_impl<double>(data, indices, spec, cfg, pos_weight, epochs, on_epoch);
}

TrainedModel train(const SampleSet& data, const CnnSpec& spec, const TrainConfig& cfg, TrainReport* report) {
    spec.validate();
    cfg.validate();
    if (data.size() == 0) {
        throw std::runtime_error("train: empty training data");
    }
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), 0);
    const double pos_weight = cfg.pos_weight > 0.0 ? cfg.pos_weight : auto_pos_weight(data, all);
    if (cfg.pos_weight > 0.0) {
        auto_pos_weight(data, all);  // still rejects label sets without positives
    }

    const ScaledSamples scaled(data, channel_scale(data));
    const auto& thresholds = cfg.threshold_grid;
    // f1_sum[e][t]: validation F1 after e+1 epochs at threshold t, summed over folds.
    std::vector<std::vector<double>> f1_sum(cfg.epochs, std::vector<double>(thresholds.size(), 0.0));

    const int folds = std::min<int>(cfg.folds, static_cast<int>(data.size()));
    if (folds >= 2) {
        // Contiguous blocks, so overlapping windows rarely straddle train and validation.
        for (int k = 0; k < folds; ++k) {
            const std::size_t lo = data.size() * k / folds;
            const std::size_t hi = data.size() * (k + 1) / folds;
            std::vector<std::size_t> fit_ids, val_ids;
            for (std::size_t i = 0; i < data.size(); ++i) {
                (i >= lo && i < hi ? val_ids : fit_ids).push_back(i);
            }
            fit(scaled, fit_ids, spec, cfg, pos_weight, cfg.epochs,
                [&](int epoch, double, const Eigen::VectorXd& w) {
                    const auto probs = cfg.single_precision
                        ? predict_weights<float>(spec, w, scaled, val_ids, std::max(cfg.batch_size, 64))
                        : predict_weights<double>(spec, w, scaled, val_ids, std::max(cfg.batch_size, 64));
                    std::vector<ConfusionCounts> counts(thresholds.size());
                    accumulate_confusion(probs, scaled, val_ids, thresholds, counts);
                    for (std::size_t t = 0; t < thresholds.size(); ++t) {
                        f1_sum[epoch - 1][t] += metrics_from_counts(counts[t]).f1;
                    }
                });
        }
    }

    int best_epochs = cfg.epochs;
    std::size_t best_t = 0;
    double best_f1 = -1.0;
    if (folds >= 2) {
        for (int e = 0; e < cfg.epochs; ++e) {
            for (std::size_t t = 0; t < thresholds.size(); ++t) {
                if (f1_sum[e][t] > best_f1) {
                    best_f1 = f1_sum[e][t];
                    best_epochs = e + 1;
                    best_t = t;
                }
            }
        }
        best_f1 /= folds;
    }

    std::vector<double> epoch_loss;
    Eigen::VectorXd w = fit(scaled, all, spec, cfg, pos_weight, best_epochs,
                            [&](int, double loss, const Eigen::VectorXd&) { epoch_loss.push_back(loss); });

    if (folds < 2) {
        // No held-out data: pick the threshold on the training fit.
        const auto probs = predict_weights<double>(spec, w, scaled, all, std::max(cfg.batch_size, 64));
        std::vector<ConfusionCounts> counts(thresholds.size());
        accumulate_confusion(probs, scaled, all, thresholds, counts);
        for (std::size_t t = 0; t < thresholds.size(); ++t) {
            const double f1 = metrics_from_counts(counts[t]).f1;
            if (f1 > best_f1) {
                best_f1 = f1;
                best_t = t;
            }
        }
    }
    fold_input_scale(spec, channel_scale(data), w);

    TrainedModel model;
    model.spec = spec;
    model.weights = std::move(w);
    model.threshold = thresholds[best_t];
    model.train_manifest = {{"train_config", to_json(cfg)},
                            {"spec", to_json(spec)},
                            {"samples", data.size()},
                            {"pos_weight", pos_weight},
                            {"chosen_epochs", best_epochs},
                            {"validation_f1", best_f1}};
    if (report) {
        *report = {best_epochs, model.threshold, best_f1, pos_weight, std::move(epoch_loss)};
    }
    return model;
}

GridArrayd predict(const TrainedModel& model, const SampleSet& data, std::span<const std::size_t> ids, int batch) {
    check_weights(model);
    if (data.cells() != model.spec.cells() || data.channels() != model.spec.channels) {
        throw std::invalid_argument("predict: sample shape does not match spec");
    }
    if (batch < 1) {
        throw std::invalid_argument("predict: batch must be >= 1");
    }
    return predict_weights<double>(model.spec, model.weights, data, ids, batch);
}

std::vector<CellIndex> detect(const TrainedModel& model, const GridArrayd& input) {
    const GridArrayd p = forward(model, input);
    std::vector<CellIndex> out;
    for (int x = 0; x < model.spec.nx; ++x) {
        for (int y = 0; y < model.spec.ny; ++y) {
            if (p(x, y) >= model.threshold) {
                out.push_back({x, y});
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr char kMagic[8] = {'C', 'R', 'O', 'M', 'E', 'C', 'N', 'N'};
constexpr std::uint32_t kModelVersion = 1;

static_assert(std::endian::native == std::endian::little, "model files are little-endian");

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) {
        throw std::runtime_error("model file truncated");
    }
    return v;
}

std::filesystem::path manifest_path(const std::filesystem::path& p) { return p.string() + ".json"; }

}  // namespace

void save_model(const std::filesystem::path& path, const TrainedModel& model) {
    check_weights(model);
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kModelVersion);
    put<std::int32_t>(out, model.spec.nx);
    put<std::int32_t>(out, model.spec.ny);
    put<std::int32_t>(out, model.spec.channels);
    put<std::int32_t>(out, model.spec.filters1);
    put<std::int32_t>(out, model.spec.filters2);
    put<std::int32_t>(out, static_cast<std::int32_t>(model.spec.conv_activation));
    put<double>(out, model.threshold);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(model.weights.size()));
    out.write(reinterpret_cast<const char*>(model.weights.data()),
              static_cast<std::streamsize>(model.weights.size() * sizeof(double)));
    std::ofstream(manifest_path(path), std::ios::binary) << model.train_manifest.dump(2) << '\n';
}

TrainedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open model " + path.string());
    }
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || !std::equal(magic, magic + 8, kMagic)) {
        throw std::runtime_error(path.string() + ": not a model file");
    }
    if (const auto v = get<std::uint32_t>(in); v != kModelVersion) {
        throw std::runtime_error(path.string() + ": unsupported model version " + std::to_string(v));
    }
    TrainedModel m;
    m.spec.nx = get<std::int32_t>(in);
    m.spec.ny = get<std::int32_t>(in);
    m.spec.channels = get<std::int32_t>(in);
    m.spec.filters1 = get<std::int32_t>(in);
    m.spec.filters2 = get<std::int32_t>(in);
    m.spec.conv_activation = static_cast<ConvActivation>(get<std::int32_t>(in));
    m.threshold = get<double>(in);
    const auto n = get<std::uint64_t>(in);
    m.spec.validate();
    if (static_cast<std::int64_t>(n) != m.spec.parameter_count()) {
        throw std::runtime_error(path.string() + ": weight count does not match the stored spec");
    }
    m.weights.resize(static_cast<Eigen::Index>(n));
    in.read(reinterpret_cast<char*>(m.weights.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) {
        throw std::runtime_error(path.string() + ": truncated weights");
    }
    if (std::ifstream mf(manifest_path(path)); mf) {
        m.train_manifest = nlohmann::json::parse(mf);
    }
    return m;
}

nlohmann::json to_json(const CnnSpec& s) {
    return {{"nx", s.nx},
            {"ny", s.ny},
            {"channels", s.channels},
            {"filters1", s.filters1},
            {"filters2", s.filters2},
            {"conv_activation", s.conv_activation == ConvActivation::kRelu ? "relu" : "linear"}};
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"momentum", c.momentum},
            {"weight_decay", c.weight_decay},
            {"pos_weight", c.pos_weight},
            {"threshold_grid", c.threshold_grid},
            {"folds", c.folds},
            {"seed", c.seed},
            {"precision", c.single_precision ? "float" : "double"}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& d) {
    TrainConfig c = d;
    try {
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.momentum = j.value("momentum", c.momentum);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.pos_weight = j.value("pos_weight", c.pos_weight);
        if (j.contains("threshold_grid")) {
            c.threshold_grid = j.at("threshold_grid").get<std::vector<double>>();
        }
        c.folds = j.value("folds", c.folds);
        c.seed = j.value("seed", c.seed);
        if (j.contains("precision")) {
            const auto p = j.at("precision").get<std::string>();
            if (p != "float" && p != "double") {
                throw ConfigError("cnn.precision: expected 'float' or 'double', got '" + p + "'");
            }
            c.single_precision = p == "float";
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("cnn: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace crome
