#pragma once

// Small CNN fixtures shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "crome/cnn.hpp"

namespace fixture {

using namespace crome;

inline GridArrayd random_input(const CnnSpec& s, std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    GridArrayd x(s.cells(), s.channels);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    return x;
}

inline LabelArray random_labels(const CnnSpec& s, std::mt19937_64& rng, double p = 0.5) {
    std::bernoulli_distribution b(p);
    LabelArray y(s.nx, s.ny);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = b(rng);
    return y;
}

inline CnnSpec small_spec(int nx, int ny, int channels, int filters) {
    CnnSpec s;
    s.nx = nx;
    s.ny = ny;
    s.channels = channels;
    s.filters1 = s.filters2 = filters;
    return s;
}

/// Worst relative error of the analytic gradient against central differences
/// (h = 1e-5); the denominator is floored at 1e-7 so vanishing components do
/// not blow up the ratio.
inline double max_rel_grad_error(const TrainedModel& m, const std::vector<GridArrayd>& xs, const std::vector<LabelArray>& ys,
                          double pos_weight) {
    const auto lg = loss_and_grad(m, xs, ys, pos_weight);
    double worst = 0.0;
    TrainedModel p = m;
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < m.weights.size(); ++i) {
        p.weights[i] = m.weights[i] + h;
        const double up = loss_and_grad(p, xs, ys, pos_weight).loss;
        p.weights[i] = m.weights[i] - h;
        const double dn = loss_and_grad(p, xs, ys, pos_weight).loss;
        p.weights[i] = m.weights[i];
        const double fd = (up - dn) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(lg.grad[i]), 1e-7});
        worst = std::max(worst, std::abs(fd - lg.grad[i]) / denom);
    }
    return worst;
}

}  // namespace fixture
