#pragma once

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "crome/core_data.hpp"
#include "crome/grid.hpp"

namespace crome {

/// Dense (cells × channels) array; row = linear cell index (x-major), so the
/// row-major storage is the (N_x, N_y, C) tensor in C order.
template <typename Scalar>
using GridArray = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using GridArrayd = GridArray<double>;

enum Feature : int { kVolume = 0, kSumReliability, kMeanReliability, kCongestion, kPrecipitation };
constexpr int kFeatureCount = 5;
const std::array<std::string, kFeatureCount>& feature_names();

/// Observations older than this are treated as free flow.
constexpr Timestamp kTrafficStalenessSeconds = 30 * kSecondsPerMinute;

struct FrameTensor {
    TimeBin bin;
    GridArrayd values;  // (nx·ny) × kFeatureCount
};

struct Window {
    TimeBin end_bin;
    std::vector<GridArrayd> frames;  // oldest first
    std::vector<std::string> feature_names;

    int length() const { return static_cast<int>(frames.size()); }
};

/// Indexes a dataset against one grid so frames can be built per bin without
/// rescanning all records.
class FrameBuilder {
public:
    FrameBuilder(const Dataset& ds, const GridSpec& spec);

    FrameTensor build(const TimeBin& bin) const;

    std::size_t reports_outside_grid() const { return reports_outside_grid_; }

private:
    struct Located {
        Timestamp time;
        int cell;
        int reliability;
    };
    struct Series {
        std::vector<Timestamp> times;
        std::vector<double> values;
    };

    GridSpec spec_;
    std::vector<Located> reports_;             // time-sorted, in-grid only
    std::vector<Series> segments_;             // congestion per segment
    std::vector<int> segment_cell_;            // cell of each segment centroid
    std::vector<int> segments_per_cell_;
    std::vector<Series> stations_;             // precipitation per station
    std::vector<int> nearest_station_;         // per cell, -1 if no stations
    std::size_t reports_outside_grid_ = 0;
};

FrameTensor build_frame(const Dataset& ds, const GridSpec& spec, const TimeBin& bin);

/// Frames for bins [0, bin_count) of one (grid, step, epoch) discretization.
class FrameStore {
public:
    FrameStore(const Dataset& ds, const GridSpec& spec, int step_minutes, Timestamp epoch_start,
               std::int64_t bin_count);

    const GridSpec& grid() const { return spec_; }
    int step_minutes() const { return step_; }
    Timestamp epoch_start() const { return epoch_; }
    std::int64_t size() const { return static_cast<std::int64_t>(frames_.size()); }
    TimeBin bin(std::int64_t index) const { return {index, step_, epoch_}; }

    /// Frame values; bins before the epoch are all-zero.
    const GridArrayd& frame(std::int64_t index) const;

    /// Writes the stacked input for the window of `k` frames ending at
    /// `end_index` into `out` (cells × k·kFeatureCount). Equivalent to
    /// to_input(build_window(...)) without copying the frames twice.
    template <typename Derived>
    void stack_input(std::int64_t end_index, int k, Eigen::MatrixBase<Derived>& out) const {
        for (int j = 0; j < k; ++j) {
            const auto& f = frame(end_index - k + 1 + j);
            out.middleCols(j * kFeatureCount, kFeatureCount) = f.template cast<typename Derived::Scalar>();
        }
    }

private:
    GridSpec spec_;
    int step_;
    Timestamp epoch_;
    std::vector<GridArrayd> frames_;
    GridArrayd zero_;
};

/// Number of frames per window; throws when T′ is not a multiple of Δt.
int window_length(int t_prime_minutes, int step_minutes);

Window build_window(const FrameStore& store, const TimeBin& end_bin, int t_prime_minutes);

/// Stacks frames along the channel axis, oldest first (frame-major, then feature).
GridArrayd to_input(const Window& win);

/// Raw little-endian float64 dump of to_input(win) plus a JSON sidecar
/// `<path>.json` with {nx, ny, channels, end_bin, feature_names}.
void write_window_tensor(const std::filesystem::path& path, const Window& win, const GridSpec& spec);

}  // namespace crome
