#include <filesystem>
#include <fstream>
#include <sstream>

#include "crome/core_data.hpp"
#include "crome/synth.hpp"
#include "doctest.h"

using namespace crome;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("crome_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

const BoundingBox kRegion{36.0, 36.4, -87.1, -86.5};

}  // namespace

TEST_CASE("iso8601 round trip") {
    CHECK(parse_iso8601("1970-01-01T00:00:00Z") == 0);
    CHECK(parse_iso8601("2019-09-01T00:00:00Z") == 1567296000);
    CHECK(format_iso8601(1567296000) == "2019-09-01T00:00:00Z");
    CHECK(parse_iso8601("2020-02-29T12:34:56Z") == days_from_civil(2020, 2, 29) * kSecondsPerDay + 12 * 3600 + 34 * 60 + 56);
    CHECK_THROWS(parse_iso8601("2019-13-01T00:00:00Z"));
    CHECK_THROWS(parse_iso8601("yesterday"));
}

TEST_CASE("duplicate report ids keep the earliest record") {
    const auto dir = scratch("dedup");
    write_file(dir / "r.csv",
               "id,time,lat,lon,reliability\n"
               "w1,2019-09-01T10:05:00Z,36.1,-86.8,5\n"
               "w1,2019-09-01T10:00:00Z,36.1,-86.8,7\n");
    write_file(dir / "i.csv", "id,time,lat,lon\n");
    LoadSummary sum;
    const auto ds = load_dataset({dir / "r.csv", dir / "i.csv", {}, {}}, kRegion, &sum);
    REQUIRE(ds.reports.size() == 1);
    CHECK(ds.reports[0].time == parse_iso8601("2019-09-01T10:00:00Z"));
    CHECK(ds.reports[0].reliability == 7);
    CHECK(sum.reports.duplicates == 1);
}

TEST_CASE("empty reports file loads") {
    const auto dir = scratch("empty");
    write_file(dir / "r.csv", "id,time,lat,lon,reliability\n");
    write_file(dir / "i.csv", "id,time,lat,lon\ni1,2019-09-01T10:00:00Z,36.2,-86.8\n");
    const auto ds = load_dataset({dir / "r.csv", dir / "i.csv", {}, {}}, kRegion);
    CHECK(ds.reports.empty());
    CHECK(ds.incidents.size() == 1);
}

TEST_CASE("bad row in a five-row fixture names file, line and field") {
    const auto dir = scratch("bad");
    write_file(dir / "r.csv",
               "id,time,lat,lon,reliability\n"
               "a,2019-09-01T10:00:00Z,36.1,-86.8,5\n"
               "b,2019-09-01T10:01:00Z,36.1,-86.8,10\n"
               "c,2019-09-01T10:02:00Z,36.1,-86.8,11\n"
               "d,2019-09-01T10:03:00Z,36.1,-86.8,1\n"
               "e,2019-09-01T10:04:00Z,36.1,-86.8,3\n");
    write_file(dir / "i.csv", "id,time,lat,lon\n");
    try {
        load_dataset({dir / "r.csv", dir / "i.csv", {}, {}}, kRegion);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(e.field() == "reliability");
        CHECK(e.line() == 4);
        CHECK(e.file().find("r.csv") != std::string::npos);
    }
}

TEST_CASE("malformed values are rejected") {
    const auto dir = scratch("malformed");
    write_file(dir / "i.csv", "id,time,lat,lon\n");
    write_file(dir / "r.csv", "id,time,lat,lon,reliability\nx,2019-09-01T10:00:00Z,abc,-86.8,5\n");
    CHECK_THROWS_AS(load_dataset({dir / "r.csv", dir / "i.csv", {}, {}}, kRegion), DataError);
    write_file(dir / "r.csv", "id,time,lat,lon,reliability\nx,2019-09-01T10:00:00Z,95,-86.8,5\n");
    LoadSummary sum;
    CHECK(load_dataset({dir / "r.csv", dir / "i.csv", {}, {}}, kRegion, &sum).reports.empty());
    CHECK(sum.reports.out_of_region == 1);
    write_file(dir / "r.csv", "id,when,lat,lon,reliability\n");
    CHECK_THROWS_AS(load_dataset({dir / "r.csv", dir / "i.csv", {}, {}}, kRegion), DataError);
}

TEST_CASE("out-of-region rows are dropped and counted; sort is stable") {
    const auto dir = scratch("region");
    write_file(dir / "r.csv",
               "id,time,lat,lon,reliability\n"
               "late,2019-09-01T11:00:00Z,36.1,-86.8,5\n"
               "far,2019-09-01T10:00:00Z,40.0,-86.8,5\n"
               "p,2019-09-01T10:30:00Z,36.1,-86.8,2\n"
               "q,2019-09-01T10:30:00Z,36.1,-86.8,3\n");
    write_file(dir / "i.csv", "id,time,lat,lon\n");
    LoadSummary sum;
    const auto ds = load_dataset({dir / "r.csv", dir / "i.csv", {}, {}}, kRegion, &sum);
    REQUIRE(ds.reports.size() == 3);
    CHECK(ds.reports[0].id == "p");
    CHECK(ds.reports[1].id == "q");
    CHECK(ds.reports[2].id == "late");
    CHECK(sum.reports.out_of_region == 1);
    CHECK(sum.reports.rows == 4);
}

TEST_CASE("write then load is idempotent") {
    auto cfg = default_scenario();
    cfg.duration_days = 3;
    const auto s = generate(cfg);
    const auto a = scratch("idem_a"), b = scratch("idem_b");
    const DatasetPaths pa{a / "r.csv", a / "i.csv", a / "t.csv", a / "w.csv"};
    const DatasetPaths pb{b / "r.csv", b / "i.csv", b / "t.csv", b / "w.csv"};
    write_dataset(s.dataset, pa);
    const auto once = load_dataset(pa, cfg.region);
    write_dataset(once, pb);
    for (const char* f : {"r.csv", "i.csv", "t.csv", "w.csv"}) {
        CHECK(slurp(a / f) == slurp(b / f));
    }
    const auto twice = load_dataset(pb, cfg.region);
    CHECK(twice.reports.size() == s.dataset.reports.size());
    CHECK(twice.incidents.size() == s.dataset.incidents.size());
    CHECK(twice.traffic.size() == s.dataset.traffic.size());
    CHECK(twice.weather.size() == s.dataset.weather.size());
}

TEST_CASE("filter_time identity, empty and argument check") {
    auto cfg = default_scenario();
    cfg.duration_days = 2;
    const auto ds = generate(cfg).dataset;
    const auto all = filter_time(ds, cfg.start, cfg.end());
    CHECK(all.reports.size() == ds.reports.size());
    CHECK(all.incidents.size() == ds.incidents.size());
    CHECK(all.traffic.size() == ds.traffic.size());
    const auto none = filter_time(ds, cfg.end() + 10, cfg.end() + 20);
    CHECK(none.reports.empty());
    CHECK(none.incidents.empty());
    CHECK_THROWS_AS(filter_time(ds, 5, 5), std::invalid_argument);
}

TEST_CASE("monthly rotations partition a four-month fixture") {
    auto cfg = default_scenario();
    const auto ds = generate(cfg).dataset;
    const auto rots = monthly_rotations(cfg.start, cfg.end());
    REQUIRE(rots.size() == 4);
    CHECK(rots.front().test_start == cfg.start);
    CHECK(rots.back().test_end == cfg.end());
    CHECK(rots[1].test_start == parse_iso8601("2019-10-01T00:00:00Z"));
    std::size_t reports = 0, incidents = 0;
    for (std::size_t i = 0; i < rots.size(); ++i) {
        if (i > 0) CHECK(rots[i].test_start == rots[i - 1].test_end);
        const auto part = filter_time(ds, rots[i].test_start, rots[i].test_end);
        reports += part.reports.size();
        incidents += part.incidents.size();
    }
    // Disjoint, contiguous blocks: every record lands in exactly one test split.
    CHECK(reports == ds.reports.size());
    CHECK(incidents == ds.incidents.size());
}

TEST_CASE("format_number round trips") {
    for (double v : {0.1, 1.0, 5.0, 0.40727272727272729, -3.25, 1e-300, 123456789.125}) {
        CHECK(std::stod(format_number(v)) == v);
    }
    CHECK(format_number(5.0) == "5");
    CHECK(format_number(0.5) == "0.5");
}
