#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "crome/experiment.hpp"
#include "crome/report.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace crome;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("crome_test_" + name);
    fs::remove_all(dir);
    return dir;
}

/// 20 days straddling a month boundary (two rotations), tiny network, two grids
/// of which the coarser one is too small for the CNN.
nlohmann::json small_config(const fs::path& out) {
    return {{"data", {{"synth", {{"start", "2019-09-20T00:00:00Z"}, {"duration_days", 20}}}}},
            {"grid", {{"delta_s_km", {5, 10}}}},
            {"time", {{"delta_t_min", {10, 30}}, {"t_prime_min", 30}}},
            {"cnn", {{"filters", 2}, {"epochs", 2}, {"folds", 2}}},
            {"output", {{"dir", out.string()}}},
            {"seed", 11}};
}

const SweepOptions kQuiet{false, true};

}  // namespace

TEST_CASE("config sections and errors") {
    const auto c = run_config_from_json(small_config("x"));
    CHECK(c.delta_s_km == std::vector<double>{5, 10});
    CHECK(c.train.epochs == 2);
    CHECK(c.scenario.seed == 11);
    CHECK(c.train.seed == 11);

    auto with = [](nlohmann::json j, const std::string& section, const std::string& key) {
        j[section][key] = 1;
        return j;
    };
    for (const char* section : {"grid", "time", "labels", "cnn", "bf", "objectives", "sweep", "output", "data"}) {
        try {
            run_config_from_json(with(small_config("x"), section, "bogus"));
            FAIL("accepted an unknown key in " << section);
        } catch (const ConfigError& e) {
            const std::string msg = e.what();
            CHECK(msg.find(section) != std::string::npos);
            CHECK(msg.find("bogus") != std::string::npos);
        }
    }
    auto top = small_config("x");
    top["extra"] = 1;
    CHECK_THROWS_AS(run_config_from_json(top), ConfigError);

    auto bad_tprime = small_config("x");
    bad_tprime["time"]["delta_t_min"] = {20};
    try {
        run_config_from_json(bad_tprime);
        FAIL("accepted T' = 30 with a 20 minute step");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("t_prime_min") != std::string::npos);
    }
    auto bad_type = small_config("x");
    bad_type["cnn"]["epochs"] = "many";
    CHECK_THROWS_AS(run_config_from_json(bad_type), ConfigError);
    auto bad_det = small_config("x");
    bad_det["sweep"] = {{"detectors", {"svm"}}};
    CHECK_THROWS_AS(run_config_from_json(bad_det), ConfigError);
}

TEST_CASE("config json round trip and seeds") {
    auto c = run_config_from_json(small_config("out"));
    c.labels.delta_km = 1.5;
    c.conv_activation = ConvActivation::kRelu;
    const auto j = to_json(c);
    CHECK(to_json(run_config_from_json(j)) == j);

    override_seed(c, 99);
    CHECK(c.seed == 99);
    CHECK(c.scenario.seed == 99);
    CHECK(c.train.seed == 99);

    auto own = small_config("x");
    own["cnn"]["seed"] = 5;
    const auto c2 = run_config_from_json(own);
    CHECK(c2.train.seed == 5);
    CHECK(c2.scenario.seed == 11);
}

TEST_CASE("rotation split keeps test incidents out of training labels") {
    auto cfg = run_config_from_json(small_config("x"));
    const auto data = load_data(cfg);
    const Discretization d(data, cfg, 5.0, 10);
    CHECK(d.window_length() == 3);
    const auto rots = monthly_rotations(data.start, data.end);
    REQUIRE(rots.size() == 2);
    const auto split = make_split(d, data.dataset, rots[1], cfg.labels);
    CHECK(split.test_bins.size() + split.train_bins.size() == static_cast<std::size_t>(d.frames().size()));
    for (auto b : split.test_bins) {
        const auto start = d.window_end(b) - 600;
        CHECK(start >= rots[1].test_start);
        CHECK(start < rots[1].test_end);
    }
    for (const auto& inc : split.test_incidents) {
        CHECK(inc.time >= rots[1].test_start);
        CHECK(inc.time < rots[1].test_end);
    }
    // Training labels equal labels computed from the non-test incidents alone.
    std::vector<Incident> outside;
    for (const auto& inc : data.dataset.incidents)
        if (inc.time < rots[1].test_start || inc.time >= rots[1].test_end) outside.push_back(inc);
    for (std::size_t i = 0; i < split.train_bins.size(); i += 97) {
        const auto b = split.train_bins[i];
        const TimeBin bin = d.frames().bin(b);
        CHECK(oracle::labels(outside, d.grid(), bin, cfg.labels) == split.train_labels[i]);
    }
}

TEST_CASE("sweep writes a consistent, resumable, deterministic run") {
    const auto dir = scratch("sweep");
    const auto cfg = run_config_from_json(small_config(dir));
    const auto res = run_sweep(cfg, kQuiet);

    for (const char* f : {"candidates.csv", "pareto.json", "manifest.json", "summary.json",
                          "rotations/r0/candidates.csv", "rotations/r1/pareto.json"}) {
        CHECK_MESSAGE(fs::exists(dir / f), f);
    }
    // 10 km cells give a 2x2 grid: the CNN is skipped there with a diagnostic.
    REQUIRE(res.diagnostics.size() == 2);
    CHECK(res.diagnostics[0].find("cnn skipped") != std::string::npos);
    CHECK(res.candidates.size() == 2 * 2 + 2);

    // The archive holds exactly the epsilon-nondominated boxes of the CNN candidates.
    std::vector<std::vector<double>> pts;
    for (const auto& c : res.candidates)
        if (c.detector == "cnn") pts.push_back(objectives(c, cfg.objectives));
    const std::vector<double> eps(res.epsilons.begin(), res.epsilons.end());
    std::set<oracle::Box> got;
    for (auto i : res.archive) {
        CHECK(res.candidates[i].detector == "cnn");
        got.insert(eps_box(objectives(res.candidates[i], cfg.objectives), eps));
    }
    CHECK(got == oracle::eps_nondominated_boxes(pts, eps));

    std::vector<bool> flags;
    const auto back = read_candidates_csv(dir / "candidates.csv", &flags);
    REQUIRE(back.size() == res.candidates.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].f1 == res.candidates[i].f1);
        CHECK(back[i].metrics.early_pred_pct == res.candidates[i].metrics.early_pred_pct);
        const bool member = std::find(res.archive.begin(), res.archive.end(), i) != res.archive.end();
        CHECK(flags[i] == member);
    }

    const auto csv = slurp(dir / "candidates.csv");
    const auto pareto = slurp(dir / "pareto.json");

    // Rerun reuses every stored model and reproduces the outputs.
    run_sweep(cfg, kQuiet);
    const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
    for (const auto& r : summary.at("runs")) CHECK(r.at("reused").get<bool>());
    CHECK(slurp(dir / "candidates.csv") == csv);
    CHECK(slurp(dir / "pareto.json") == pareto);

    // Retraining from scratch is bitwise identical.
    run_sweep(cfg, {true, true});
    CHECK(slurp(dir / "candidates.csv") == csv);
    CHECK(slurp(dir / "pareto.json") == pareto);

    ReportFiles files;
    const auto table = write_report(dir, &files);
    CHECK(fs::exists(files.fig2a));
    CHECK(fs::exists(files.fig2b));
    CHECK(fs::exists(files.fig3));
    CHECK(fs::exists(files.table));
    CHECK(table.find("Best Early Pred %") != std::string::npos);

    // A tampered archive flag is caught.
    std::ofstream(dir / "pareto.json") << R"({"members": []})";
    if (!res.archive.empty()) CHECK_THROWS(write_report(dir));
    fs::remove_all(dir);
}

TEST_CASE("stored model from another network is rejected") {
    const auto dir = scratch("mismatch");
    auto j = small_config(dir);
    j["grid"]["delta_s_km"] = {5};
    j["time"]["delta_t_min"] = {30};
    j["sweep"] = {{"detectors", {"cnn"}}, {"rotations", {0}}};
    run_sweep(run_config_from_json(j), kQuiet);
    j["cnn"]["filters"] = 3;
    CHECK_THROWS(run_sweep(run_config_from_json(j), kQuiet));
    CHECK_NOTHROW(run_sweep(run_config_from_json(j), {true, true}));
    j["sweep"]["rotations"] = {5};
    CHECK_THROWS_AS(run_sweep(run_config_from_json(j), kQuiet), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("table rows pick per-detector bests") {
    auto cand = [](const char* det, double ds, double pct, std::optional<double> dist, std::optional<double> lead) {
        Candidate c;
        c.detector = det;
        c.delta_s_km = ds;
        c.delta_t_min = 5;
        c.metrics.early_pred_pct = pct;
        c.metrics.avg_distance_km = dist;
        c.metrics.avg_early_time_min = lead;
        return c;
    };
    const std::vector<Candidate> cs{cand("cnn", 1, 20, 0.5, 10), cand("cnn", 3, 40, 0.9, 8),
                                    cand("cnn", 5, 40, 0.4, 12), cand("bf", 1, 10, std::nullopt, std::nullopt),
                                    cand("bf", 3, 5, 1.0, 3)};
    const auto rows = select_table_rows(cs);
    // Category-major, detectors in order of first appearance.
    REQUIRE(rows.size() == 6);
    CHECK(rows[0].detector == "cnn");
    CHECK(*rows[0].candidate == 1);  // tie on 40 keeps the earlier one
    CHECK(rows[1].detector == "bf");
    CHECK(*rows[1].candidate == 3);
    CHECK(*rows[2].candidate == 2);
    CHECK(*rows[3].candidate == 4);  // the bf candidate without matches is skipped
    CHECK(*rows[4].candidate == 2);
    CHECK(*rows[5].candidate == 4);
    CHECK_FALSE(format_table(cs, rows).empty());
}

TEST_CASE("report on a directory without candidates fails") {
    const auto dir = scratch("empty");
    fs::create_directories(dir);
    CHECK_THROWS(write_report(dir));
    fs::remove_all(dir);
}
