#include <cmath>
#include <filesystem>
#include <random>

#include "crome/cnn.hpp"
#include "crome/metrics.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace crome;
using namespace fixture;

namespace {

/// Inputs: channel 0 is 1 on "incident" cells and 0 elsewhere, the remaining
/// channels are noise-free copies; labels mark exactly those cells.
MemorySamples separable_stream(const CnnSpec& s, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> cell(0, s.cells() - 1);
    MemorySamples out;
    for (int i = 0; i < n; ++i) {
        GridArrayd x = GridArrayd::Zero(s.cells(), s.channels);
        LabelArray y = LabelArray::Zero(s.nx, s.ny);
        const int c = cell(rng);
        x.row(c).setOnes();
        y.data()[c] = 1;
        out.add(x, y);
    }
    return out;
}

}  // namespace

TEST_CASE("zero weights give exactly one half everywhere") {
    const auto s = small_spec(5, 6, 3, 4);
    TrainedModel m{s, Eigen::VectorXd::Zero(s.parameter_count()), 0.5};
    std::mt19937_64 rng(1);
    const auto p = forward(m, random_input(s, rng));
    CHECK(p.rows() == 5);
    CHECK(p.cols() == 6);
    CHECK((p.array() == 0.5).all());

    m.threshold = 0.5;
    CHECK(detect(m, random_input(s, rng)).size() == 30);
    m.threshold = std::nextafter(1.0, 0.0);
    CHECK(detect(m, random_input(s, rng)).empty());
}

TEST_CASE("forward matches a hand-rolled implementation") {
    std::mt19937_64 rng(3);
    for (auto act : {ConvActivation::kLinear, ConvActivation::kRelu}) {
        for (const auto& [nx, ny, c, f] : {std::array{4, 4, 1, 2}, std::array{5, 7, 3, 3}, std::array{6, 4, 2, 5}}) {
            auto s = small_spec(nx, ny, c, f);
            s.conv_activation = act;
            const TrainedModel m{s, init_weights(s, rng()), 0.5};
            TrainedModel mb = m;
            std::normal_distribution<double> n(0, 0.1);
            for (Eigen::Index i = 0; i < mb.weights.size(); ++i) mb.weights[i] += n(rng);  // non-zero biases too
            for (const auto* model : {&m, static_cast<const TrainedModel*>(&mb)}) {
                const auto x = random_input(s, rng);
                const auto got = forward(*model, x);
                const auto want = oracle::forward(s, model->weights, x);
                for (int i = 0; i < s.cells(); ++i) CHECK(std::abs(got.data()[i] - want[i]) <= 1e-10);
            }
        }
    }
}

TEST_CASE("layer shapes for random grid sizes") {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 20; ++i) {
        const int nx = 4 + static_cast<int>(rng() % 9), ny = 4 + static_cast<int>(rng() % 9);
        const auto s = small_spec(nx, ny, 2, 2);
        CHECK(s.pooled_nx() == (nx + 1) / 2);
        CHECK(s.pooled_ny() == (ny + 1) / 2);
        CHECK(s.flat_size() == s.pooled_nx() * s.pooled_ny() * 2);
        const TrainedModel m{s, init_weights(s, 1), 0.5};
        const auto p = forward(m, random_input(s, rng));
        CHECK(p.rows() == nx);
        CHECK(p.cols() == ny);
        CHECK((p.array() > 0).all());
        CHECK((p.array() < 1).all());
    }
    CHECK_THROWS(small_spec(3, 8, 1, 1).validate());
}

TEST_CASE("forward rejects bad inputs") {
    const auto s = small_spec(4, 4, 2, 2);
    const TrainedModel m{s, init_weights(s, 1), 0.5};
    CHECK_THROWS_AS(forward(m, GridArrayd::Zero(16, 3)), std::invalid_argument);
    GridArrayd x = GridArrayd::Zero(16, 2);
    x(3, 1) = std::nan("");
    CHECK_THROWS_AS(forward(m, x), std::invalid_argument);
    TrainedModel bad = m;
    bad.weights.conservativeResize(bad.weights.size() - 1);
    CHECK_THROWS_AS(forward(bad, GridArrayd::Zero(16, 2)), std::invalid_argument);
}

TEST_CASE("loss values") {
    const auto s = small_spec(4, 4, 2, 2);
    TrainedModel m{s, Eigen::VectorXd::Zero(s.parameter_count()), 0.5};
    std::mt19937_64 rng(5);
    std::vector<GridArrayd> xs{random_input(s, rng), random_input(s, rng)};
    LabelArray y(4, 4);
    for (int i = 0; i < 16; ++i) y.data()[i] = i % 2;
    std::vector<LabelArray> ys{y, y};
    CHECK(loss_and_grad(m, xs, ys, 1.0).loss == doctest::Approx(std::log(2.0)).epsilon(1e-14));

    // Confident, correct output biases.
    const std::size_t d2b = s.parameter_count() - s.outputs();
    for (int i = 0; i < 16; ++i) m.weights[d2b + i] = y.data()[i] ? 40.0 : -40.0;
    CHECK(loss_and_grad(m, xs, ys, 3.0).loss <= 1e-10);
}

TEST_CASE("analytic gradients match central differences") {
    for (auto act : {ConvActivation::kLinear, ConvActivation::kRelu}) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            std::mt19937_64 rng(seed);
            auto s = small_spec(4, 4, 2, 2);
            s.conv_activation = act;
            TrainedModel m{s, init_weights(s, seed), 0.5};
            std::normal_distribution<double> n(0, 0.05);
            for (Eigen::Index i = 0; i < m.weights.size(); ++i) m.weights[i] += n(rng);
            std::vector<GridArrayd> xs{random_input(s, rng), random_input(s, rng), random_input(s, rng)};
            std::vector<LabelArray> ys{random_labels(s, rng), random_labels(s, rng), random_labels(s, rng)};
            CHECK(max_rel_grad_error(m, xs, ys, 2.5) <= 1e-4);
        }
    }
    // Odd grid sizes exercise the padded pooling edge.
    std::mt19937_64 rng(99);
    const auto s = small_spec(5, 7, 3, 2);
    TrainedModel m{s, init_weights(s, 7), 0.5};
    std::vector<GridArrayd> xs{random_input(s, rng)};
    std::vector<LabelArray> ys{random_labels(s, rng)};
    CHECK(max_rel_grad_error(m, xs, ys, 1.0) <= 1e-4);
}

TEST_CASE("training on a separable stream") {
    const auto s = small_spec(4, 4, 2, 8);
    const auto data = separable_stream(s, 600, 1);
    TrainConfig cfg;
    cfg.epochs = 12;
    cfg.folds = 3;
    cfg.learning_rate = 0.05;
    TrainReport rep;
    const auto m = train(data, s, cfg, &rep);
    CHECK(rep.validation_f1 >= 0.95);
    REQUIRE(rep.epoch_loss.size() >= 5);
    for (int e = 1; e < 5; ++e) CHECK(rep.epoch_loss[e] < rep.epoch_loss[e - 1]);
    CHECK(std::find(cfg.threshold_grid.begin(), cfg.threshold_grid.end(), m.threshold) != cfg.threshold_grid.end());

    // Deterministic given the seed.
    const auto again = train(data, s, cfg);
    CHECK((again.weights.array() == m.weights.array()).all());
    CHECK(again.threshold == m.threshold);

    // detect agrees with the metrics module on held-out samples.
    const auto test = separable_stream(s, 100, 2);
    std::vector<LabelGrid> pred, truth;
    std::vector<std::size_t> ids(test.size());
    std::iota(ids.begin(), ids.end(), 0);
    const auto probs = predict(m, test, ids);
    ConfusionCounts direct;
    for (std::size_t i = 0; i < test.size(); ++i) {
        GridArrayd x(s.cells(), s.channels);
        test.input(i, x);
        LabelArray p = LabelArray::Zero(s.nx, s.ny);
        for (const auto& c : detect(m, x)) p(c.x, c.y) = 1;
        for (int k = 0; k < s.cells(); ++k) {
            CHECK((probs(i, k) >= m.threshold) == (p.data()[k] == 1));
            const bool lab = test.label(i).data()[k];
            direct.tp += p.data()[k] && lab;
            direct.fp += p.data()[k] && !lab;
            direct.fn += !p.data()[k] && lab;
        }
        pred.push_back({TimeBin{static_cast<std::int64_t>(i), 5, 0}, p});
        truth.push_back({TimeBin{static_cast<std::int64_t>(i), 5, 0}, test.label(i)});
    }
    CHECK(classification_metrics(pred, truth).f1 == metrics_from_counts(direct).f1);
    CHECK(metrics_from_counts(direct).f1 >= 0.9);
}

TEST_CASE("shuffled labels do not beat the positive-rate baseline") {
    const auto s = small_spec(4, 4, 2, 4);
    const auto clean = separable_stream(s, 400, 3);
    std::vector<std::size_t> perm(clean.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(8));
    MemorySamples shuffled;
    double positives = 0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        GridArrayd x(s.cells(), s.channels);
        clean.input(i, x);
        shuffled.add(x, clean.label(perm[i]));
        positives += clean.label(perm[i]).cast<double>().sum();
    }
    TrainConfig cfg;
    cfg.epochs = 6;
    TrainReport rep;
    train(shuffled, s, cfg, &rep);
    const double rate = positives / (clean.size() * s.cells());
    const double baseline = 2 * rate / (1 + rate);  // F1 of flagging every cell
    CHECK(rep.validation_f1 <= baseline + 0.05);
}

TEST_CASE("training needs positives") {
    const auto s = small_spec(4, 4, 1, 2);
    MemorySamples data;
    for (int i = 0; i < 10; ++i) data.add(GridArrayd::Zero(16, 1), LabelArray::Zero(4, 4));
    CHECK_THROWS(train(data, s, TrainConfig{}));
}

TEST_CASE("float and double training agree closely") {
    const auto s = small_spec(4, 4, 2, 4);
    const auto data = separable_stream(s, 200, 4);
    std::vector<std::size_t> ids(data.size());
    std::iota(ids.begin(), ids.end(), 0);
    TrainConfig f, d;
    d.single_precision = false;
    const auto wf = fit(data, ids, s, f, 5.0, 2);
    const auto wd = fit(data, ids, s, d, 5.0, 2);
    CHECK((wf - wd).cwiseAbs().maxCoeff() <= 1e-3);
}

TEST_CASE("model save and load round trip") {
    const auto s = small_spec(4, 5, 2, 3);
    TrainedModel m{s, init_weights(s, 9), 0.35, {{"note", "x"}}};
    const auto path = std::filesystem::temp_directory_path() / "crome_test_model.bin";
    save_model(path, m);
    const auto back = load_model(path);
    CHECK(back.spec == s);
    CHECK(back.threshold == 0.35);
    CHECK((back.weights.array() == m.weights.array()).all());
    CHECK(back.train_manifest.at("note") == "x");
}

TEST_CASE("train config json") {
    TrainConfig c;
    c.epochs = 7;
    c.single_precision = false;
    c.weight_decay = 3e-3;
    const auto back = train_config_from_json(to_json(c));
    CHECK(back.epochs == 7);
    CHECK_FALSE(back.single_precision);
    CHECK(back.weight_decay == 3e-3);
    CHECK(back.threshold_grid == c.threshold_grid);
    CHECK_THROWS_AS(train_config_from_json({{"precision", "half"}}), ConfigError);
    CHECK_THROWS_AS(train_config_from_json({{"epochs", 0}}), ConfigError);
    CHECK_THROWS_AS(train_config_from_json({{"threshold_grid", {0.5, 1.0}}}), ConfigError);
}
