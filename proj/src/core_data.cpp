#include "crome/core_data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_set>

namespace crome {

DataError::DataError(const std::string& file, std::size_t line, const std::string& field, const std::string& what)
    : std::runtime_error(file + ":" + std::to_string(line) + ": field '" + field + "': " + what),
      file_(file),
      line_(line),
      field_(field) {}

std::int64_t days_from_civil(int year, unsigned month, unsigned day) {
    // Howard Hinnant's days_from_civil.
    year -= month <= 2 ? 1 : 0;
    const int era = (year >= 0 ? year : year - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(year - era * 400);
    const unsigned doy = (153 * (month + (month > 2 ? -3 : 9)) + 2) / 5 + day - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

namespace {

struct CivilDate {
    int year;
    unsigned month;
    unsigned day;
};

CivilDate civil_from_days(std::int64_t z) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp < 10 ? mp + 3 : mp - 9;
    return {static_cast<int>(y + (m <= 2 ? 1 : 0)), m, d};
}

bool parse_uint(std::string_view s, unsigned& out) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

unsigned days_in_month(int year, unsigned month) {
    static constexpr std::array<unsigned, 12> kDays{31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    const bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    return month == 2 && leap ? 29 : kDays[month - 1];
}

}  // namespace

Timestamp parse_iso8601(std::string_view text) {
    // YYYY-MM-DDTHH:MM:SSZ
    if (text.size() != 20 || text[4] != '-' || text[7] != '-' || text[10] != 'T' || text[13] != ':' ||
        text[16] != ':' || text[19] != 'Z') {
        throw std::invalid_argument("expected YYYY-MM-DDTHH:MM:SSZ, got '" + std::string(text) + "'");
    }
    unsigned y, mo, d, h, mi, s;
    if (!parse_uint(text.substr(0, 4), y) || !parse_uint(text.substr(5, 2), mo) || !parse_uint(text.substr(8, 2), d) ||
        !parse_uint(text.substr(11, 2), h) || !parse_uint(text.substr(14, 2), mi) ||
        !parse_uint(text.substr(17, 2), s)) {
        throw std::invalid_argument("non-numeric timestamp component in '" + std::string(text) + "'");
    }
    if (mo < 1 || mo > 12 || d < 1 || d > days_in_month(static_cast<int>(y), mo) || h > 23 || mi > 59 || s > 59) {
        throw std::invalid_argument("timestamp component out of range in '" + std::string(text) + "'");
    }
    return days_from_civil(static_cast<int>(y), mo, d) * kSecondsPerDay + h * 3600 + mi * 60 + s;
}

std::string format_iso8601(Timestamp t) {
    std::int64_t days = t / kSecondsPerDay;
    std::int64_t rem = t % kSecondsPerDay;
    if (rem < 0) {
        rem += kSecondsPerDay;
        --days;
    }
    const auto date = civil_from_days(days);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", date.year, date.month, date.day,
                  static_cast<int>(rem / 3600), static_cast<int>(rem / 60 % 60), static_cast<int>(rem % 60));
    return buf;
}

std::string format_number(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

/// Row-oriented CSV reader with fixed header and per-field error reporting.
class CsvReader {
public:
    CsvReader(const std::filesystem::path& path, std::string_view expected_header)
        : file_(path.string()), in_(path) {
        if (!in_) {
            throw DataError(file_, 0, "-", "cannot open file");
        }
        std::string header;
        if (!std::getline(in_, header)) {
            throw DataError(file_, 1, "header", "missing header, expected '" + std::string(expected_header) + "'");
        }
        strip_cr(header);
        if (header != expected_header) {
            throw DataError(file_, 1, "header",
                            "expected '" + std::string(expected_header) + "', got '" + header + "'");
        }
        columns_ = split_commas(expected_header);
        names_.assign(columns_.begin(), columns_.end());
        line_no_ = 1;
    }

    bool next() {
        while (std::getline(in_, line_)) {
            ++line_no_;
            strip_cr(line_);
            if (line_.empty()) {
                continue;
            }
            fields_ = split_commas(line_);
            if (fields_.size() != names_.size()) {
                throw DataError(file_, line_no_, "-",
                                "expected " + std::to_string(names_.size()) + " fields, got " +
                                    std::to_string(fields_.size()));
            }
            return true;
        }
        return false;
    }

    std::string text(std::size_t i) const {
        if (fields_[i].empty()) {
            fail(i, "empty value");
        }
        return std::string(fields_[i]);
    }

    double real(std::size_t i) const {
        double v = 0.0;
        const auto f = fields_[i];
        auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
        if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
            fail(i, "not a finite decimal number: '" + std::string(f) + "'");
        }
        return v;
    }

    long integer(std::size_t i) const {
        long v = 0;
        const auto f = fields_[i];
        auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
        if (ec != std::errc() || ptr != f.data() + f.size()) {
            fail(i, "not an integer: '" + std::string(f) + "'");
        }
        return v;
    }

    Timestamp time(std::size_t i) const {
        try {
            return parse_iso8601(fields_[i]);
        } catch (const std::invalid_argument& e) {
            fail(i, e.what());
        }
    }

    [[noreturn]] void fail(std::size_t i, const std::string& what) const {
        throw DataError(file_, line_no_, names_[i], what);
    }

private:
    static void strip_cr(std::string& s) {
        if (!s.empty() && s.back() == '\r') {
            s.pop_back();
        }
    }

    std::string file_;
    std::ifstream in_;
    std::string line_;
    std::size_t line_no_ = 0;
    std::vector<std::string_view> columns_;
    std::vector<std::string> names_;
    std::vector<std::string_view> fields_;
};

constexpr std::string_view kReportHeader = "id,time,lat,lon,reliability";
constexpr std::string_view kIncidentHeader = "id,time,lat,lon";
constexpr std::string_view kTrafficHeader = "segment_id,time,speed,reference_speed,lat,lon";
constexpr std::string_view kWeatherHeader = "station_id,time,precipitation,lat,lon";

bool valid_coordinate(double lat, double lon) {
    return lat >= -90.0 && lat <= 90.0 && lon >= -180.0 && lon <= 180.0;
}

template <typename Record, typename KeyFn>
std::vector<Record> sort_and_dedup(std::vector<Record> rows, KeyFn key, SourceSummary& summary) {
    std::stable_sort(rows.begin(), rows.end(), [](const Record& a, const Record& b) { return a.time < b.time; });
    std::unordered_set<std::string> seen;
    std::vector<Record> out;
    out.reserve(rows.size());
    for (auto& r : rows) {
        if (seen.insert(key(r)).second) {
            out.push_back(std::move(r));
        } else {
            ++summary.duplicates;
        }
    }
    summary.kept = out.size();
    return out;
}

void log_summary(const std::string& name, const SourceSummary& s) {
    if (s.duplicates > 0 || s.out_of_region > 0) {
        std::clog << "load: " << name << ": " << s.rows << " rows, " << s.kept << " kept, " << s.duplicates
                  << " duplicates, " << s.out_of_region << " outside region\n";
    }
}

}  // namespace

Dataset load_dataset(const DatasetPaths& paths, const BoundingBox& region, LoadSummary* summary) {
    if (!(region.lat_min < region.lat_max) || !(region.lon_min < region.lon_max)) {
        throw std::invalid_argument("load_dataset: degenerate region");
    }
    LoadSummary local;
    Dataset ds;
    ds.region = region;

    auto accept = [&](double lat, double lon, SourceSummary& s) {
        ++s.rows;
        if (!valid_coordinate(lat, lon) || !region.contains(lat, lon)) {
            ++s.out_of_region;
            return false;
        }
        return true;
    };

    {
        CsvReader csv(paths.reports, kReportHeader);
        std::vector<Report> rows;
        while (csv.next()) {
            Report r{csv.text(0), csv.time(1), csv.real(2), csv.real(3), 0};
            const long rel = csv.integer(4);
            if (rel < 1 || rel > 10) {
                csv.fail(4, "reliability " + std::to_string(rel) + " outside [1, 10]");
            }
            r.reliability = static_cast<int>(rel);
            if (accept(r.lat, r.lon, local.reports)) {
                rows.push_back(std::move(r));
            }
        }
        ds.reports = sort_and_dedup(std::move(rows), [](const Report& r) { return r.id; }, local.reports);
    }
    {
        CsvReader csv(paths.incidents, kIncidentHeader);
        std::vector<Incident> rows;
        while (csv.next()) {
            Incident r{csv.text(0), csv.time(1), csv.real(2), csv.real(3)};
            if (accept(r.lat, r.lon, local.incidents)) {
                rows.push_back(std::move(r));
            }
        }
        ds.incidents = sort_and_dedup(std::move(rows), [](const Incident& r) { return r.id; }, local.incidents);
    }
    if (!paths.traffic.empty()) {
        CsvReader csv(paths.traffic, kTrafficHeader);
        std::vector<TrafficObservation> rows;
        while (csv.next()) {
            TrafficObservation r{csv.text(0), csv.time(1), csv.real(2), csv.real(3), csv.real(4), csv.real(5)};
            if (r.speed < 0.0) {
                csv.fail(2, "negative speed");
            }
            if (r.reference_speed <= 0.0) {
                csv.fail(3, "reference_speed must be positive");
            }
            if (accept(r.lat, r.lon, local.traffic)) {
                rows.push_back(std::move(r));
            }
        }
        ds.traffic = sort_and_dedup(
            std::move(rows),
            [](const TrafficObservation& r) { return r.segment_id + '@' + std::to_string(r.time); }, local.traffic);
    }
    if (!paths.weather.empty()) {
        CsvReader csv(paths.weather, kWeatherHeader);
        std::vector<WeatherObservation> rows;
        while (csv.next()) {
            WeatherObservation r{csv.text(0), csv.time(1), csv.real(2), csv.real(3), csv.real(4)};
            if (r.precipitation < 0.0) {
                csv.fail(2, "negative precipitation");
            }
            if (accept(r.lat, r.lon, local.weather)) {
                rows.push_back(std::move(r));
            }
        }
        ds.weather = sort_and_dedup(
            std::move(rows),
            [](const WeatherObservation& r) { return r.station_id + '@' + std::to_string(r.time); }, local.weather);
    }

    log_summary("reports", local.reports);
    log_summary("incidents", local.incidents);
    log_summary("traffic", local.traffic);
    log_summary("weather", local.weather);
    if (summary) {
        *summary = local;
    }
    return ds;
}

void normalize(Dataset& ds) {
    SourceSummary ignored;
    ds.reports = sort_and_dedup(std::move(ds.reports), [](const Report& r) { return r.id; }, ignored);
    ds.incidents = sort_and_dedup(std::move(ds.incidents), [](const Incident& r) { return r.id; }, ignored);
    ds.traffic = sort_and_dedup(
        std::move(ds.traffic),
        [](const TrafficObservation& r) { return r.segment_id + '@' + std::to_string(r.time); }, ignored);
    ds.weather = sort_and_dedup(
        std::move(ds.weather),
        [](const WeatherObservation& r) { return r.station_id + '@' + std::to_string(r.time); }, ignored);
}

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path());
    }
    std::ofstream out(p, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + p.string());
    }
    return out;
}

}  // namespace

void write_dataset(const Dataset& ds, const DatasetPaths& paths) {
    {
        auto out = open_out(paths.reports);
        out << kReportHeader << '\n';
        for (const auto& r : ds.reports) {
            out << r.id << ',' << format_iso8601(r.time) << ',' << format_number(r.lat) << ','
                << format_number(r.lon) << ',' << r.reliability << '\n';
        }
    }
    {
        auto out = open_out(paths.incidents);
        out << kIncidentHeader << '\n';
        for (const auto& r : ds.incidents) {
            out << r.id << ',' << format_iso8601(r.time) << ',' << format_number(r.lat) << ','
                << format_number(r.lon) << '\n';
        }
    }
    if (!paths.traffic.empty()) {
        auto out = open_out(paths.traffic);
        out << kTrafficHeader << '\n';
        for (const auto& r : ds.traffic) {
            out << r.segment_id << ',' << format_iso8601(r.time) << ',' << format_number(r.speed) << ','
                << format_number(r.reference_speed) << ',' << format_number(r.lat) << ',' << format_number(r.lon)
                << '\n';
        }
    }
    if (!paths.weather.empty()) {
        auto out = open_out(paths.weather);
        out << kWeatherHeader << '\n';
        for (const auto& r : ds.weather) {
            out << r.station_id << ',' << format_iso8601(r.time) << ',' << format_number(r.precipitation) << ','
                << format_number(r.lat) << ',' << format_number(r.lon) << '\n';
        }
    }
}

namespace {

template <typename Record>
std::vector<Record> slice(const std::vector<Record>& rows, Timestamp start, Timestamp end) {
    auto lo = std::lower_bound(rows.begin(), rows.end(), start,
                               [](const Record& r, Timestamp t) { return r.time < t; });
    auto hi = std::lower_bound(lo, rows.end(), end, [](const Record& r, Timestamp t) { return r.time < t; });
    return {lo, hi};
}

}  // namespace

Dataset filter_time(const Dataset& ds, Timestamp start, Timestamp end) {
    if (start >= end) {
        throw std::invalid_argument("filter_time: start must precede end");
    }
    Dataset out;
    out.region = ds.region;
    out.reports = slice(ds.reports, start, end);
    out.incidents = slice(ds.incidents, start, end);
    out.traffic = slice(ds.traffic, start, end);
    out.weather = slice(ds.weather, start, end);
    return out;
}

std::vector<Rotation> monthly_rotations(Timestamp start, Timestamp end) {
    if (start >= end) {
        throw std::invalid_argument("monthly_rotations: start must precede end");
    }
    std::int64_t days = start / kSecondsPerDay - (start % kSecondsPerDay < 0 ? 1 : 0);
    auto date = civil_from_days(days);
    std::vector<Rotation> out;
    Timestamp block_start = start;
    while (block_start < end) {
        unsigned next_month = date.month == 12 ? 1 : date.month + 1;
        int next_year = date.month == 12 ? date.year + 1 : date.year;
        const Timestamp month_end = days_from_civil(next_year, next_month, 1) * kSecondsPerDay;
        out.push_back({block_start, std::min(month_end, end)});
        block_start = month_end;
        date = {next_year, next_month, 1};
    }
    return out;
}

}  // namespace crome
