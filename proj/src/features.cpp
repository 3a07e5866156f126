#include "crome/features.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iostream>
#include <limits>

#include "json.hpp"

namespace crome {

const std::array<std::string, kFeatureCount>& feature_names() {
    static const std::array<std::string, kFeatureCount> kNames{"volume", "sum_reliability", "mean_reliability",
                                                               "congestion", "precipitation"};
    return kNames;
}

namespace {

int try_locate(const GridSpec& spec, double lat, double lon) {
    try {
        return linear_index(spec, locate(spec, lat, lon));
    } catch (const OutOfGrid&) {
        return -1;
    }
}

/// Index of the last entry with time <= t, or -1.
std::ptrdiff_t last_at_or_before(const std::vector<Timestamp>& times, Timestamp t) {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    return static_cast<std::ptrdiff_t>(it - times.begin()) - 1;
}

}  // namespace

FrameBuilder::FrameBuilder(const Dataset& ds, const GridSpec& spec) : spec_(spec) {
    reports_.reserve(ds.reports.size());
    for (const auto& r : ds.reports) {
        const int cell = try_locate(spec, r.lat, r.lon);
        if (cell < 0) {
            ++reports_outside_grid_;
            continue;
        }
        reports_.push_back({r.time, cell, r.reliability});
    }
    if (reports_outside_grid_ > 0) {
        std::clog << "featurize: dropped " << reports_outside_grid_ << " reports outside the grid\n";
    }

    segments_per_cell_.assign(spec.cell_count(), 0);
    std::unordered_map<std::string, int> segment_ids;
    for (const auto& obs : ds.traffic) {
        auto [it, inserted] = segment_ids.try_emplace(obs.segment_id, static_cast<int>(segments_.size()));
        if (inserted) {
            segments_.emplace_back();
            const int cell = try_locate(spec, obs.lat, obs.lon);
            segment_cell_.push_back(cell);
            if (cell >= 0) {
                ++segments_per_cell_[cell];
            }
        }
        auto& s = segments_[it->second];
        s.times.push_back(obs.time);
        s.values.push_back(std::max(0.0, (obs.reference_speed - obs.speed) / obs.reference_speed));
    }

    std::unordered_map<std::string, int> station_ids;
    std::vector<LatLon> station_pos;
    for (const auto& obs : ds.weather) {
        auto [it, inserted] = station_ids.try_emplace(obs.station_id, static_cast<int>(stations_.size()));
        if (inserted) {
            stations_.emplace_back();
            station_pos.push_back({obs.lat, obs.lon});
        }
        stations_[it->second].times.push_back(obs.time);
        stations_[it->second].values.push_back(obs.precipitation);
    }
    nearest_station_.assign(spec.cell_count(), -1);
    for (int c = 0; c < spec.cell_count(); ++c) {
        const LatLon center = cell_center(spec, cell_at(spec, c));
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < station_pos.size(); ++s) {
            const double d = geodesic_km(center, station_pos[s]);
            if (d < best) {
                best = d;
                nearest_station_[c] = static_cast<int>(s);
            }
        }
    }
}

FrameTensor FrameBuilder::build(const TimeBin& bin) const {
    FrameTensor frame{bin, GridArrayd::Zero(spec_.cell_count(), kFeatureCount)};
    auto& v = frame.values;
    const Timestamp start = bin.start();
    const Timestamp end = bin.end();

    auto lo = std::lower_bound(reports_.begin(), reports_.end(), start,
                               [](const Located& r, Timestamp t) { return r.time < t; });
    for (auto it = lo; it != reports_.end() && it->time < end; ++it) {
        v(it->cell, kVolume) += 1.0;
        v(it->cell, kSumReliability) += it->reliability;
    }
    for (int c = 0; c < spec_.cell_count(); ++c) {
        if (v(c, kVolume) > 0.0) {
            v(c, kMeanReliability) = v(c, kSumReliability) / v(c, kVolume);
        }
    }

    for (std::size_t s = 0; s < segments_.size(); ++s) {
        const int cell = segment_cell_[s];
        if (cell < 0) {
            continue;
        }
        const auto i = last_at_or_before(segments_[s].times, end);
        if (i >= 0 && segments_[s].times[i] >= end - kTrafficStalenessSeconds) {
            v(cell, kCongestion) += segments_[s].values[i];
        }
    }
    for (int c = 0; c < spec_.cell_count(); ++c) {
        if (segments_per_cell_[c] > 0) {
            v(c, kCongestion) /= segments_per_cell_[c];
        }
        const int station = nearest_station_[c];
        if (station >= 0) {
            const auto i = last_at_or_before(stations_[station].times, end);
            if (i >= 0) {
                v(c, kPrecipitation) = stations_[station].values[i];
            }
        }
    }
    return frame;
}

FrameTensor build_frame(const Dataset& ds, const GridSpec& spec, const TimeBin& bin) {
    return FrameBuilder(ds, spec).build(bin);
}

FrameStore::FrameStore(const Dataset& ds, const GridSpec& spec, int step_minutes, Timestamp epoch_start,
                       std::int64_t bin_count)
    : spec_(spec), step_(step_minutes), epoch_(epoch_start), zero_(GridArrayd::Zero(spec.cell_count(), kFeatureCount)) {
    if (step_minutes <= 0) {
        throw std::invalid_argument("FrameStore: step must be positive");
    }
    const FrameBuilder builder(ds, spec);
    frames_.reserve(static_cast<std::size_t>(bin_count));
    for (std::int64_t i = 0; i < bin_count; ++i) {
        frames_.push_back(builder.build(bin(i)).values);
    }
}

const GridArrayd& FrameStore::frame(std::int64_t index) const {
    if (index < 0) {
        return zero_;
    }
    if (index >= size()) {
        throw std::out_of_range("FrameStore: bin " + std::to_string(index) + " not built");
    }
    return frames_[static_cast<std::size_t>(index)];
}

int window_length(int t_prime_minutes, int step_minutes) {
    if (step_minutes <= 0 || t_prime_minutes <= 0 || t_prime_minutes % step_minutes != 0) {
        throw std::invalid_argument("window length T' = " + std::to_string(t_prime_minutes) +
                                    " min is not a positive multiple of the step " + std::to_string(step_minutes) +
                                    " min");
    }
    return t_prime_minutes / step_minutes;
}

Window build_window(const FrameStore& store, const TimeBin& end_bin, int t_prime_minutes) {
    if (end_bin.step_minutes != store.step_minutes()) {
        throw std::invalid_argument("build_window: bin step does not match the frame store");
    }
    const int k = window_length(t_prime_minutes, store.step_minutes());
    Window win;
    win.end_bin = end_bin;
    win.feature_names.assign(feature_names().begin(), feature_names().end());
    for (int j = 0; j < k; ++j) {
        win.frames.push_back(store.frame(end_bin.index - k + 1 + j));
    }
    return win;
}

GridArrayd to_input(const Window& win) {
    if (win.frames.empty()) {
        throw std::invalid_argument("to_input: empty window");
    }
    const auto cells = win.frames.front().rows();
    const auto nf = win.frames.front().cols();
    GridArrayd out(cells, nf * win.length());
    for (int j = 0; j < win.length(); ++j) {
        out.middleCols(j * nf, nf) = win.frames[j];
    }
    return out;
}

void write_window_tensor(const std::filesystem::path& path, const Window& win, const GridSpec& spec) {
    const GridArrayd input = to_input(win);
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    static_assert(std::endian::native == std::endian::little, "tensor dump assumes a little-endian host");
    out.write(reinterpret_cast<const char*>(input.data()),
              static_cast<std::streamsize>(input.size() * sizeof(double)));

    nlohmann::json meta;
    meta["nx"] = spec.nx;
    meta["ny"] = spec.ny;
    meta["channels"] = input.cols();
    meta["end_bin"] = win.end_bin.index;
    meta["feature_names"] = win.feature_names;
    std::ofstream(path.string() + ".json") << meta.dump(2) << '\n';
}

}  // namespace crome
