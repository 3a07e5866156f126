// Acceptance run: one PASS/FAIL line per criterion.
//
//   crome_acceptance <work_dir> [--reuse]
//
// Criteria 5-8 run real sweeps on the default synthetic scenario under
// <work_dir>; --reuse keeps models from an earlier run of the same build.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "crome/experiment.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace crome;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string num(double v, int digits = 4) {
    std::ostringstream os;
    os.precision(digits);
    os << v;
    return os.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const LatLon kSw{36.0, -87.0};
constexpr Timestamp kT0 = 1567296000;  // 2019-09-01

Outcome metric_consistency() {
    // 112 true positives, 238 false positives, 88 false negatives: P = 0.32, R = 0.56.
    std::vector<int> pred, truth;
    for (int i = 0; i < 112; ++i) pred.push_back(1), truth.push_back(1);
    for (int i = 0; i < 238; ++i) pred.push_back(1), truth.push_back(0);
    for (int i = 0; i < 88; ++i) pred.push_back(0), truth.push_back(1);
    while (pred.size() % 16) pred.push_back(0), truth.push_back(0);
    std::vector<LabelGrid> p, t;
    for (std::size_t w = 0; w < pred.size() / 16; ++w) {
        LabelArray a(4, 4), b(4, 4);
        for (int k = 0; k < 16; ++k) {
            a.data()[k] = static_cast<std::uint8_t>(pred[w * 16 + k]);
            b.data()[k] = static_cast<std::uint8_t>(truth[w * 16 + k]);
        }
        const TimeBin bin{static_cast<std::int64_t>(w), 5, kT0};
        p.push_back({bin, a});
        t.push_back({bin, b});
    }
    const auto m = classification_metrics(p, t);
    return {std::abs(m.f1 - 0.4068) <= 0.005 && std::abs(m.precision - 0.32) < 1e-12 && std::abs(m.recall - 0.56) < 1e-12,
            "P " + num(m.precision) + ", R " + num(m.recall) + ", F1 " + num(m.f1, 6) + " (0.4068 +- 0.005)"};
}

Outcome gradient_check() {
    double worst = 0.0;
    int runs = 0;
    for (auto act : {ConvActivation::kLinear, ConvActivation::kRelu}) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            std::mt19937_64 rng(1000 + seed);
            auto s = fixture::small_spec(4, 4, 2, 2);
            s.conv_activation = act;
            TrainedModel m{s, init_weights(s, seed), 0.5};
            std::normal_distribution<double> n(0, 0.05);
            for (Eigen::Index i = 0; i < m.weights.size(); ++i) m.weights[i] += n(rng);
            std::vector<GridArrayd> xs{fixture::random_input(s, rng), fixture::random_input(s, rng)};
            std::vector<LabelArray> ys{fixture::random_labels(s, rng), fixture::random_labels(s, rng)};
            worst = std::max(worst, fixture::max_rel_grad_error(m, xs, ys, 3.0));
            ++runs;
        }
    }
    return {worst <= 1e-4, "max relative error " + num(worst, 3) + " over " + std::to_string(runs) +
                               " seeded networks (<= 1e-4)"};
}

Outcome archive_oracle() {
    const std::vector<double> eps{0.05, 5, 1};
    int equal = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(5000 + seed);
        std::uniform_real_distribution<double> f1(0, 1), dt(-30, -5), ds(-5, -1);
        std::vector<std::vector<double>> pts;
        EpsilonArchive a(eps);
        for (std::size_t i = 0; i < 200; ++i) {
            pts.push_back({f1(rng), dt(rng), ds(rng)});
            a.insert(pts.back(), i);
        }
        std::set<oracle::Box> got;
        for (const auto& m : a.members()) got.insert(m.box);
        equal += got == oracle::eps_nondominated_boxes(pts, eps);
    }
    return {equal == 100, std::to_string(equal) + "/100 sets equal the brute-force box set"};
}

Outcome label_match_oracle() {
    std::mt19937_64 rng(77);
    int label_ok = 0, label_total = 0, match_ok = 0;
    const MatchRule rule;
    for (int inst = 0; inst < 50; ++inst) {
        const int nx = 1 + static_cast<int>(rng() % 20), ny = 1 + static_cast<int>(rng() % 20);
        const auto g = make_grid(region_from_extent(kSw, nx, ny), 1.0);
        std::uniform_real_distribution<double> e(0, nx), n(0, ny);
        std::uniform_int_distribution<Timestamp> t(0, 6 * 3600);
        std::vector<Incident> incs;
        for (int i = 0, k = static_cast<int>(rng() % 51); i < k; ++i) {
            const auto p = unproject(g.origin, {e(rng), n(rng)});
            incs.push_back({"i" + std::to_string(i), kT0 + t(rng), p.lat, p.lon});
        }
        std::stable_sort(incs.begin(), incs.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
        std::vector<Report> reports;
        for (int i = 0, k = static_cast<int>(rng() % 201); i < k; ++i) {
            const auto p = unproject(g.origin, {e(rng), n(rng)});
            reports.push_back({"r" + std::to_string(i), kT0 + t(rng), p.lat, p.lon, 1 + static_cast<int>(rng() % 10)});
        }
        // Detections: every cell with a report in the 30 minutes before the window end.
        std::vector<Detection> dets;
        for (std::int64_t b = 0; b < 6 * 12; b += 1 + static_cast<std::int64_t>(rng() % 6)) {
            const TimeBin bin{b, 5, kT0};
            Detection d{bin, {}};
            for (const auto& r : reports) {
                if (r.time >= bin.end() - 1800 && r.time < bin.end()) d.cells.push_back(locate(g, r.lat, r.lon));
            }
            std::sort(d.cells.begin(), d.cells.end(),
                      [&](const auto& a, const auto& c) { return linear_index(g, a) < linear_index(g, c); });
            d.cells.erase(std::unique(d.cells.begin(), d.cells.end()), d.cells.end());
            if (!d.cells.empty()) dets.push_back(d);
            const bool same = label_window(incs, g, bin, rule).values == oracle::labels(incs, g, bin, rule);
            ++label_total;
            label_ok += same;
        }
        const auto got = match_detections(dets, incs, g, rule);
        const auto want = oracle::matches(dets, incs, g, rule);
        bool same = got.size() == want.size();
        for (std::size_t i = 0; same && i < got.size(); ++i) {
            same = got[i].incident_id == want[i].incident_id &&
                   got[i].detection_bin.index == want[i].detection_bin.index &&
                   got[i].detection_cell == want[i].detection_cell && got[i].distance_km == want[i].distance_km &&
                   got[i].lead_minutes == want[i].lead_minutes;
        }
        match_ok += same;
    }
    return {label_ok == label_total && match_ok == 50,
            "labels " + std::to_string(label_ok) + "/" + std::to_string(label_total) + " windows, matches " +
                std::to_string(match_ok) + "/50 instances"};
}

Outcome geodesic_accuracy() {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> lat(36.0, 36.3), lon(-87.0, -86.6);
    double worst = 0.0;
    bool symmetric = true, triangle = true;
    for (int i = 0; i < 1000; ++i) {
        const LatLon a{lat(rng), lon(rng)}, b{lat(rng), lon(rng)};
        worst = std::max(worst, std::abs(geodesic_km(a, b) - oracle::haversine_km(a.lat, a.lon, b.lat, b.lon)));
        symmetric = symmetric && geodesic_km(a, b) == geodesic_km(b, a);
        const LatLon c{lat(rng), lon(rng)};
        triangle = triangle && geodesic_km(a, c) <= geodesic_km(a, b) + geodesic_km(b, c) + 1e-12;
    }
    return {worst <= 1e-6 && symmetric && triangle, "max |error| " + num(worst, 3) + " km over 1000 pairs, symmetric " +
                                                        (symmetric ? "yes" : "no") + ", triangle inequality " +
                                                        (triangle ? "yes" : "no")};
}

const Candidate* find(const std::vector<Candidate>& cs, const std::string& det, double ds, double dt) {
    for (const auto& c : cs)
        if (c.detector == det && c.delta_s_km == ds && c.delta_t_min == dt) return &c;
    return nullptr;
}

/// Default scenario, Δs ∈ {1, 3, 5} at Δt = 5 over every rotation.
std::vector<Candidate> trend_sweep(const fs::path& dir, bool reuse) {
    RunConfig cfg;
    cfg.delta_s_km = {1, 3, 5};
    cfg.delta_t_min = {5};
    cfg.output_dir = dir;
    return run_sweep(cfg, {!reuse, false}).candidates;
}

Outcome separation(const std::vector<Candidate>& cs) {
    const auto* cnn = find(cs, "cnn", 1, 5);
    const auto* bf = find(cs, "bf", 1, 5);
    if (!cnn || !bf) return {false, "missing candidates at (1 km, 5 min)"};
    const double gap = cnn->f1 - bf->f1;
    return {gap >= 0.05, "CNN F1 " + num(cnn->f1) + " vs BF " + num(bf->f1) + ", gap " + num(gap, 3) +
                             " (>= 0.05; mean over rotations)"};
}

Outcome trend(const std::vector<Candidate>& cs) {
    const auto *c1 = find(cs, "cnn", 1, 5), *c3 = find(cs, "cnn", 3, 5), *c5 = find(cs, "cnn", 5, 5);
    if (!c1 || !c3 || !c5) return {false, "missing CNN candidates"};
    const bool ok = c3->f1 <= c5->f1 + 0.02 && c1->f1 <= c3->f1 + 0.02;
    return {ok, "CNN F1 at 5/3/1 km: " + num(c5->f1) + " / " + num(c3->f1) + " / " + num(c1->f1) +
                    " (no rise > 0.02 as cells shrink)"};
}

Outcome early(const std::vector<Candidate>& cs) {
    const Candidate* best = nullptr;
    for (const auto& c : cs)
        if (c.detector == "cnn" && (!best || c.f1 > best->f1)) best = &c;
    if (!best) return {false, "no CNN candidate"};
    const double pct = best->metrics.early_pred_pct;
    return {pct >= 30.0, "best CNN (" + num(best->delta_s_km) + " km, F1 " + num(best->f1) + ") matches " + num(pct) +
                             "% of incidents early (>= 30%)"};
}

Outcome determinism(const fs::path& dir) {
    RunConfig cfg;
    cfg.delta_s_km = {3, 5};
    cfg.delta_t_min = {15, 30};
    cfg.output_dir = dir;
    const SweepOptions fresh{true, true};
    run_sweep(cfg, fresh);
    const std::string files[] = {"candidates.csv", "pareto.json", "manifest.json"};
    std::vector<std::string> first;
    for (const auto& f : files) first.push_back(slurp(dir / f));
    run_sweep(cfg, fresh);
    std::string differ;
    for (std::size_t i = 0; i < first.size(); ++i)
        if (slurp(dir / files[i]) != first[i]) differ += " " + files[i];
    const bool ok = differ.empty() && !first[0].empty() && !first[1].empty();
    return {ok, ok ? "two retrained sweeps give identical candidates.csv and pareto.json"
                   : "differs:" + (differ.empty() ? std::string(" (empty output)") : differ)};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: crome_acceptance <work_dir> [--reuse]\n";
        return 2;
    }
    const fs::path work = argv[1];
    const bool reuse = argc > 2 && std::string(argv[2]) == "--reuse";
    fs::create_directories(work);

    int failures = 0;
    auto report = [&](int id, const std::string& name, const std::function<Outcome()>& f) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail << " ["
                  << num(secs, 3) << " s]" << std::endl;
    };

    report(1, "metric consistency", metric_consistency);
    report(2, "gradient correctness", gradient_check);
    report(3, "epsilon-archive oracle", archive_oracle);
    report(4, "label/matching oracle", label_match_oracle);

    std::vector<Candidate> cands;
    std::string sweep_error;
    const auto t_sweep = std::chrono::steady_clock::now();
    try {
        cands = trend_sweep(work / "trend", reuse);
    } catch (const std::exception& e) {
        sweep_error = e.what();
    }
    std::cout << "sweep for criteria 5-7 took "
              << num(std::chrono::duration<double>(std::chrono::steady_clock::now() - t_sweep).count(), 4) << " s"
              << std::endl;
    auto on_sweep = [&](auto f) {
        return [&, f] { return sweep_error.empty() ? f(cands) : Outcome{false, "sweep failed: " + sweep_error}; };
    };
    report(5, "synthetic separation", on_sweep(separation));
    report(6, "F1 trend over cell size", on_sweep(trend));
    report(7, "early detection", on_sweep(early));
    report(8, "determinism", [&] { return determinism(work / "determinism"); });
    report(9, "geodesic accuracy", geodesic_accuracy);

    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
