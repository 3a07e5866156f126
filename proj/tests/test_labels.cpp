#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "crome/labels.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace crome;

namespace {

const LatLon kSw{36.0, -87.0};
constexpr Timestamp kT0 = 1567296000;

Incident incident_at(const GridSpec& g, const std::string& id, Timestamp t, double e, double n) {
    const auto p = unproject(g.origin, {e, n});
    return {id, t, p.lat, p.lon};
}

}  // namespace

TEST_CASE("label_window examples") {
    const auto g = make_grid(region_from_extent(kSw, 8.0, 8.0), 1.0);
    const MatchRule rule;
    const auto bin = bin_time(kT0 + 3600, 5, kT0);
    const Timestamp t = bin.end();

    CHECK(label_window({}, g, bin, rule).values.isZero());

    const auto c = cell_center(g, {3, 3});
    const std::vector<Incident> one{{"i", t, c.lat, c.lon}};
    const auto lab = label_window(one, g, bin, rule).values;
    CHECK(lab(3, 3) == 1);
    // Neighbouring centres are 1 km away; diagonal ones √2 km.
    int positives = 0;
    for (int x = 0; x < g.nx; ++x)
        for (int y = 0; y < g.ny; ++y) {
            positives += lab(x, y);
            const bool near = geodesic_km(cell_center(g, {x, y}), c) <= 1.0;
            CHECK(lab(x, y) == (near ? 1 : 0));
        }
    CHECK(positives >= 1);

    const std::vector<Incident> after{{"i", t + 3600 + 1, c.lat, c.lon}};
    CHECK(label_window(after, g, bin, rule).values.isZero());
    const std::vector<Incident> edge{{"i", t + 3600, c.lat, c.lon}};
    CHECK(label_window(edge, g, bin, rule).values(3, 3) == 1);
    const std::vector<Incident> before{{"i", t - 3600 - 1, c.lat, c.lon}};
    CHECK(label_window(before, g, bin, rule).values.isZero());
}

TEST_CASE("label_window agrees with the all-pairs oracle") {
    std::mt19937_64 rng(101);
    for (int inst = 0; inst < 50; ++inst) {
        const int nx = 1 + static_cast<int>(rng() % 20), ny = 1 + static_cast<int>(rng() % 20);
        const double cell = 0.5 + (rng() % 4) * 0.5;
        const auto g = make_grid(region_from_extent(kSw, nx * cell, ny * cell), cell);
        MatchRule rule{static_cast<double>(rng() % 90), static_cast<double>(rng() % 90), 0.3 + (rng() % 30) * 0.1};
        std::vector<Incident> incs;
        const int n = static_cast<int>(rng() % 51);
        std::uniform_real_distribution<double> e(-1.0, nx * cell + 1.0), nn(-1.0, ny * cell + 1.0);
        for (int i = 0; i < n; ++i) {
            incs.push_back(incident_at(g, "i" + std::to_string(i), kT0 + static_cast<Timestamp>(rng() % (6 * 3600)), e(rng), nn(rng)));
        }
        std::stable_sort(incs.begin(), incs.end(), [](const Incident& a, const Incident& b) { return a.time < b.time; });
        for (int w = 0; w < 5; ++w) {
            const auto bin = bin_time(kT0 + static_cast<Timestamp>(rng() % (6 * 3600)), 5, kT0);
            CHECK((label_window(incs, g, bin, rule).values.array() == oracle::labels(incs, g, bin, rule).array()).all());
        }
    }
}

TEST_CASE("labels are monotone in the rule") {
    std::mt19937_64 rng(77);
    const auto g = make_grid(region_from_extent(kSw, 10.0, 10.0), 1.0);
    std::vector<Incident> incs;
    for (int i = 0; i < 30; ++i) {
        incs.push_back(incident_at(g, "i" + std::to_string(i), kT0 + static_cast<Timestamp>(rng() % 20000),
                                   (rng() % 1000) / 100.0, (rng() % 1000) / 100.0));
    }
    std::stable_sort(incs.begin(), incs.end(), [](const Incident& a, const Incident& b) { return a.time < b.time; });
    const auto bin = bin_time(kT0 + 10000, 5, kT0);
    const MatchRule base{30, 30, 1.0};
    const auto l0 = label_window(incs, g, bin, base).values;
    for (const MatchRule wider : {MatchRule{60, 30, 1.0}, MatchRule{30, 60, 1.0}, MatchRule{30, 30, 2.0}}) {
        const auto l1 = label_window(incs, g, bin, wider).values;
        CHECK((l1.array() >= l0.array()).all());
    }
}

TEST_CASE("match_detections examples") {
    const auto g = make_grid(region_from_extent(kSw, 8.0, 8.0), 1.0);
    const MatchRule rule;
    const auto c = cell_center(g, {2, 2});
    const Timestamp t_inc = kT0 + 7200;
    const std::vector<Incident> incs{{"i1", t_inc, c.lat, c.lon}};
    CHECK(match_detections({}, incs, g, rule).empty());

    const auto bin10 = bin_time(t_inc - 600 - 300, 5, kT0);  // ends 10 min before the incident
    const std::vector<Detection> one{{bin10, {{2, 2}}}};
    const auto m = match_detections(one, incs, g, rule);
    REQUIRE(m.size() == 1);
    CHECK(m[0].lead_minutes == 10.0);
    CHECK(m[0].distance_km == doctest::Approx(0.0).epsilon(1e-9));

    // Two detections bracketing the incident: the earlier wins.
    const auto later = bin_time(t_inc + 1200, 5, kT0);
    const std::vector<Detection> two{{later, {{2, 2}}}, {bin10, {{6, 6}, {2, 2}}}};
    const auto m2 = match_detections(two, incs, g, rule);
    REQUIRE(m2.size() == 1);
    CHECK(m2[0].detection_bin.index == bin10.index);
    CHECK(m2[0].detection_cell == CellIndex{2, 2});
    CHECK(m2[0].lead_minutes == 10.0);

    // Out of radius: no match.
    const std::vector<Detection> far{{bin10, {{6, 6}}}};
    CHECK(match_detections(far, incs, g, rule).empty());
}

TEST_CASE("match_detections agrees with the all-pairs oracle") {
    std::mt19937_64 rng(202);
    for (int inst = 0; inst < 50; ++inst) {
        const int nx = 1 + static_cast<int>(rng() % 20), ny = 1 + static_cast<int>(rng() % 20);
        const auto g = make_grid(region_from_extent(kSw, nx * 1.0, ny * 1.0), 1.0);
        const MatchRule rule{static_cast<double>(rng() % 90), static_cast<double>(rng() % 90), 0.5 + (rng() % 20) * 0.1};
        std::vector<Incident> incs;
        for (int i = 0, n = static_cast<int>(rng() % 11); i < n; ++i) {
            incs.push_back(incident_at(g, "i" + std::to_string(i), kT0 + static_cast<Timestamp>(rng() % 14400),
                                       (rng() % 1000) / 1000.0 * nx, (rng() % 1000) / 1000.0 * ny));
        }
        std::vector<Detection> dets;
        for (int d = 0, n = static_cast<int>(rng() % 11); d < n; ++d) {
            Detection det{bin_time(kT0 + static_cast<Timestamp>(rng() % 14400), 5, kT0), {}};
            for (int k = 0, m = 1 + static_cast<int>(rng() % 8); k < m; ++k) {
                det.cells.push_back({static_cast<int>(rng() % nx), static_cast<int>(rng() % ny)});
            }
            dets.push_back(det);
        }
        const auto got = match_detections(dets, incs, g, rule);
        const auto want = oracle::matches(dets, incs, g, rule);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].incident_id == want[i].incident_id);
            CHECK(got[i].detection_bin.index == want[i].detection_bin.index);
            CHECK(got[i].detection_cell == want[i].detection_cell);
            CHECK(got[i].distance_km == want[i].distance_km);
            CHECK(got[i].lead_minutes == want[i].lead_minutes);
            // Matches satisfy the labelling predicate.
            const auto inc = std::find_if(incs.begin(), incs.end(),
                                          [&](const Incident& x) { return x.id == got[i].incident_id; });
            REQUIRE(inc != incs.end());
            CHECK(rule.in_time(got[i].detection_bin.end(), inc->time));
            CHECK(rule.in_space(got[i].distance_km));
        }
    }
}

TEST_CASE("label and match csv writers") {
    const auto dir = std::filesystem::temp_directory_path() / "crome_test_labels";
    std::filesystem::create_directories(dir);
    const auto g = make_grid(region_from_extent(kSw, 2.0, 2.0), 1.0);
    std::vector<LabelGrid> labs{{bin_time(kT0, 5, kT0), LabelArray::Zero(2, 2)}};
    labs[0].values(1, 0) = 1;
    write_labels_csv(dir / "l.csv", labs);
    std::ifstream in(dir / "l.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "end_bin,x,y,label");
    int ones = 0;
    while (std::getline(in, line)) ones += line.back() == '1';
    CHECK(ones == 1);
    CHECK_THROWS(write_matches_csv(dir / "missing" / "m.csv", {}));
}
