#include "crome/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace crome {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

namespace {

void check_keys(const nlohmann::json& j, const std::string& section, std::initializer_list<const char*> keys) {
    if (!j.is_object()) {
        throw ConfigError(section + ": expected an object");
    }
    for (const auto& [k, v] : j.items()) {
        if (std::none_of(keys.begin(), keys.end(), [&](const char* key) { return k == key; })) {
            throw ConfigError(section + ": unknown key '" + k + "'");
        }
    }
}

BoundingBox region_from_json(const nlohmann::json& r) {
    return {r.at("lat_min").get<double>(), r.at("lat_max").get<double>(), r.at("lon_min").get<double>(),
            r.at("lon_max").get<double>()};
}

nlohmann::json region_to_json(const BoundingBox& r) {
    return {{"lat_min", r.lat_min}, {"lat_max", r.lat_max}, {"lon_min", r.lon_min}, {"lon_max", r.lon_max}};
}

/// Runs `f`, turning json type errors into ConfigError for `section`.
template <typename F>
void in_section(const std::string& section, F&& f) {
    try {
        f();
    } catch (const ConfigError&) {
        throw;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(section + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(section + ": " + e.what());
    }
}

}  // namespace

void RunConfig::validate() const {
    if (data_dir && data_dir->empty()) {
        throw ConfigError("data.dir: must not be empty");
    }
    if (!data_dir) {
        scenario.validate();
    }
    if (delta_s_km.empty()) {
        throw ConfigError("grid.delta_s_km: must not be empty");
    }
    for (double s : delta_s_km) {
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw ConfigError("grid.delta_s_km: cell sizes must be positive");
        }
    }
    if (delta_t_min.empty()) {
        throw ConfigError("time.delta_t_min: must not be empty");
    }
    for (int t : delta_t_min) {
        if (t <= 0) {
            throw ConfigError("time.delta_t_min: steps must be positive");
        }
        if (t_prime_min <= 0 || t_prime_min % t != 0) {
            throw ConfigError("time.t_prime_min: " + std::to_string(t_prime_min) + " is not a positive multiple of " +
                              std::to_string(t));
        }
    }
    try {
        labels.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("labels: ") + e.what());
    }
    train.validate();
    if (filters < 1) {
        throw ConfigError("cnn.filters: must be >= 1");
    }
    if (train_stride < 1) {
        throw ConfigError("cnn.train_stride: must be >= 1");
    }
    bf.validate();
    bf_calibration.validate();
    objectives.validate();
    if (detectors.empty()) {
        throw ConfigError("sweep.detectors: must not be empty");
    }
    for (const auto& d : detectors) {
        if (d != "cnn" && d != "bf") {
            throw ConfigError("sweep.detectors: unknown detector '" + d + "' (cnn, bf)");
        }
    }
    for (int r : rotations) {
        if (r < 0) {
            throw ConfigError("sweep.rotations: indices must be >= 0");
        }
    }
    if (output_dir.empty()) {
        throw ConfigError("output.dir: must not be empty");
    }
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    check_keys(j, "config", {"data", "grid", "time", "labels", "cnn", "bf", "objectives", "sweep", "output", "seed"});
    RunConfig c;
    in_section("seed", [&] {
        c.seed = j.value("seed", c.seed);
    });
    c.scenario.seed = c.seed;
    c.train.seed = c.seed;

    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, "data", {"dir", "synth"});
        if (d.contains("dir") && d.contains("synth")) {
            throw ConfigError("data: give either 'dir' or 'synth', not both");
        }
        in_section("data", [&] {
            if (d.contains("dir")) {
                c.data_dir = d.at("dir").get<std::string>();
            }
        });
        if (d.contains("synth")) {
            c.scenario = scenario_from_json(d.at("synth"), c.scenario);
        }
    }
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        check_keys(g, "grid", {"region", "delta_s_km"});
        in_section("grid", [&] {
            if (g.contains("region")) c.region = region_from_json(g.at("region"));
            if (g.contains("delta_s_km")) c.delta_s_km = g.at("delta_s_km").get<std::vector<double>>();
        });
    }
    if (j.contains("time")) {
        const auto& t = j.at("time");
        check_keys(t, "time", {"delta_t_min", "t_prime_min", "epoch"});
        in_section("time", [&] {
            if (t.contains("delta_t_min")) c.delta_t_min = t.at("delta_t_min").get<std::vector<int>>();
            c.t_prime_min = t.value("t_prime_min", c.t_prime_min);
            if (t.contains("epoch") && !t.at("epoch").is_null()) {
                c.epoch = parse_iso8601(t.at("epoch").get<std::string>());
            }
        });
    }
    if (j.contains("labels")) {
        const auto& l = j.at("labels");
        check_keys(l, "labels", {"alpha_minutes", "beta_minutes", "delta_km"});
        in_section("labels", [&] {
            c.labels.alpha_minutes = l.value("alpha_minutes", c.labels.alpha_minutes);
            c.labels.beta_minutes = l.value("beta_minutes", c.labels.beta_minutes);
            c.labels.delta_km = l.value("delta_km", c.labels.delta_km);
        });
    }
    if (j.contains("cnn")) {
        const auto& n = j.at("cnn");
        check_keys(n, "cnn",
                   {"filters", "paper_arch", "conv_activation", "train_stride", "epochs", "batch_size",
                    "learning_rate", "momentum", "weight_decay", "pos_weight", "threshold_grid", "folds", "seed", "precision"});
        in_section("cnn", [&] {
            c.filters = n.value("filters", c.filters);
            if (n.value("paper_arch", false)) {
                c.filters = CnnSpec::kPaperFilters;
            }
            if (n.contains("conv_activation")) {
                const auto a = n.at("conv_activation").get<std::string>();
                if (a == "linear") {
                    c.conv_activation = ConvActivation::kLinear;
                } else if (a == "relu") {
                    c.conv_activation = ConvActivation::kRelu;
                } else {
                    throw ConfigError("cnn.conv_activation: expected 'linear' or 'relu', got '" + a + "'");
                }
            }
            c.train_stride = n.value("train_stride", c.train_stride);
            nlohmann::json train = n;
            for (const char* k : {"filters", "paper_arch", "conv_activation", "train_stride"}) {
                train.erase(k);
            }
            c.train = train_config_from_json(train, c.train);
        });
    }
    if (j.contains("bf")) {
        const auto& b = j.at("bf");
        check_keys(b, "bf", {"prior", "reliability_floor", "reliability_ceiling", "threshold", "prior_grid",
                             "threshold_grid"});
        in_section("bf", [&] {
            if (b.contains("prior_grid")) c.bf_calibration.prior_grid = b.at("prior_grid").get<std::vector<double>>();
            if (b.contains("threshold_grid")) {
                c.bf_calibration.threshold_grid = b.at("threshold_grid").get<std::vector<double>>();
            }
            nlohmann::json cfg = b;
            cfg.erase("prior_grid");
            cfg.erase("threshold_grid");
            c.bf = bf_config_from_json(cfg, c.bf);
        });
    }
    if (j.contains("objectives")) {
        const auto& o = j.at("objectives");
        check_keys(o, "objectives", {"gammas", "z1", "z2", "epsilons"});
        c.objectives = objective_config_from_json(o, c.objectives);
    }
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        check_keys(s, "sweep", {"detectors", "rotations"});
        in_section("sweep", [&] {
            if (s.contains("detectors")) c.detectors = s.at("detectors").get<std::vector<std::string>>();
            if (s.contains("rotations")) c.rotations = s.at("rotations").get<std::vector<int>>();
        });
    }
    if (j.contains("output")) {
        const auto& o = j.at("output");
        check_keys(o, "output", {"dir"});
        in_section("output", [&] {
            if (o.contains("dir")) c.output_dir = o.at("dir").get<std::string>();
        });
    }
    c.validate();
    return c;
}

nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json data = nlohmann::json::object();
    if (c.data_dir) {
        data["dir"] = c.data_dir->generic_string();
    } else {
        data["synth"] = to_json(c.scenario);
    }
    nlohmann::json grid = {{"delta_s_km", c.delta_s_km}};
    if (c.region) {
        grid["region"] = region_to_json(*c.region);
    }
    nlohmann::json time = {{"delta_t_min", c.delta_t_min}, {"t_prime_min", c.t_prime_min}};
    time["epoch"] = c.epoch ? nlohmann::json(format_iso8601(*c.epoch)) : nlohmann::json(nullptr);
    nlohmann::json cnn = to_json(c.train);
    cnn["filters"] = c.filters;
    cnn["conv_activation"] = c.conv_activation == ConvActivation::kRelu ? "relu" : "linear";
    cnn["train_stride"] = c.train_stride;
    nlohmann::json bf = to_json(c.bf);
    bf["prior_grid"] = c.bf_calibration.prior_grid;
    bf["threshold_grid"] = c.bf_calibration.threshold_grid;
    return {{"data", data},
            {"grid", grid},
            {"time", time},
            {"labels",
             {{"alpha_minutes", c.labels.alpha_minutes},
              {"beta_minutes", c.labels.beta_minutes},
              {"delta_km", c.labels.delta_km}}},
            {"cnn", cnn},
            {"bf", bf},
            {"objectives", to_json(c.objectives)},
            {"sweep", {{"detectors", c.detectors}, {"rotations", c.rotations}}},
            {"output", {{"dir", c.output_dir.generic_string()}}},
            {"seed", c.seed}};
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

void override_seed(RunConfig& cfg, std::uint64_t seed) {
    cfg.seed = seed;
    cfg.scenario.seed = seed;
    cfg.train.seed = seed;
}

// ---------------------------------------------------------------------------
// Data

LoadedData load_data_dir(const fs::path& dir) {
    const fs::path meta_path = dir / "dataset.json";
    std::ifstream in(meta_path);
    if (!in) {
        throw std::runtime_error("missing " + meta_path.string());
    }
    const auto meta = nlohmann::json::parse(in);
    DatasetPaths paths{dir / meta.at("reports").get<std::string>(), dir / meta.at("incidents").get<std::string>(),
                       {}, {}};
    if (meta.contains("traffic")) paths.traffic = dir / meta.at("traffic").get<std::string>();
    if (meta.contains("weather")) paths.weather = dir / meta.at("weather").get<std::string>();
    LoadedData out;
    out.dataset = load_dataset(paths, region_from_json(meta.at("region")));
    out.start = parse_iso8601(meta.at("start").get<std::string>());
    out.end = parse_iso8601(meta.at("end").get<std::string>());
    if (out.start >= out.end) {
        throw std::runtime_error(meta_path.string() + ": start must precede end");
    }
    return out;
}

LoadedData load_data(const RunConfig& cfg) {
    if (cfg.data_dir) {
        return load_data_dir(*cfg.data_dir);
    }
    Scenario s = generate(cfg.scenario);
    return {std::move(s.dataset), s.start, s.end};
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t dataset_fingerprint(const Dataset& ds) {
    std::uint64_t h = fnv1a("dataset");
    auto add = [&](const std::string& s) { h = fnv1a(s + '\n', h); };
    for (const auto& r : ds.reports) {
        add(r.id + ',' + std::to_string(r.time) + ',' + format_number(r.lat) + ',' + format_number(r.lon) + ',' +
            std::to_string(r.reliability));
    }
    for (const auto& i : ds.incidents) {
        add(i.id + ',' + std::to_string(i.time) + ',' + format_number(i.lat) + ',' + format_number(i.lon));
    }
    for (const auto& t : ds.traffic) {
        add(t.segment_id + ',' + std::to_string(t.time) + ',' + format_number(t.speed) + ',' +
            format_number(t.reference_speed));
    }
    for (const auto& w : ds.weather) {
        add(w.station_id + ',' + std::to_string(w.time) + ',' + format_number(w.precipitation));
    }
    return h;
}

// ---------------------------------------------------------------------------
// Discretization and splits

Discretization::Discretization(const LoadedData& data, const RunConfig& cfg, double delta_s_km, int delta_t_min)
    : grid_(make_grid(cfg.region.value_or(data.dataset.region), delta_s_km)),
      delta_s_(delta_s_km),
      step_(delta_t_min),
      k_(crome::window_length(cfg.t_prime_min, delta_t_min)),
      t_prime_(cfg.t_prime_min),
      reports_(data.dataset, grid_) {
    const Timestamp epoch = cfg.epoch.value_or(data.start);
    const Timestamp step = static_cast<Timestamp>(delta_t_min) * kSecondsPerMinute;
    const std::int64_t bins = data.end > epoch ? (data.end - epoch + step - 1) / step : 0;
    frames_ = std::make_unique<FrameStore>(data.dataset, grid_, delta_t_min, epoch, bins);
}

Timestamp Discretization::window_end(std::int64_t end_bin) const { return frames_->bin(end_bin).end(); }

Timestamp Discretization::window_start(std::int64_t end_bin) const {
    return window_end(end_bin) - static_cast<Timestamp>(t_prime_) * kSecondsPerMinute;
}

RotationSplit make_split(const Discretization& d, const Dataset& ds, const Rotation& rot, const MatchRule& rule) {
    RotationSplit s;
    s.rotation = rot;
    std::vector<Incident> train_incidents;
    for (const auto& i : ds.incidents) {
        (i.time >= rot.test_start && i.time < rot.test_end ? s.test_incidents : train_incidents).push_back(i);
    }
    for (std::int64_t b = 0; b < d.frames().size(); ++b) {
        const TimeBin bin = d.frames().bin(b);
        const bool test = bin.start() >= rot.test_start && bin.start() < rot.test_end;
        if (test) {
            s.test_bins.push_back(b);
            s.test_labels.push_back(label_window(s.test_incidents, d.grid(), bin, rule).values);
        } else {
            s.train_bins.push_back(b);
            s.train_labels.push_back(label_window(train_incidents, d.grid(), bin, rule).values);
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Detectors

GridArrayd CnnDetector::probabilities(std::span<const std::int64_t> end_bins) const {
    const WindowSamples samples(d_.frames(), d_.window_length(),
                                std::vector<std::int64_t>(end_bins.begin(), end_bins.end()),
                                std::vector<LabelArray>(end_bins.size()));
    std::vector<std::size_t> ids(end_bins.size());
    std::iota(ids.begin(), ids.end(), 0);
    return predict(model_, samples, ids);
}

GridArrayd BfDetector::probabilities(std::span<const std::int64_t> end_bins) const {
    GridArrayd out(static_cast<Eigen::Index>(end_bins.size()), d_.grid().cell_count());
    for (std::size_t w = 0; w < end_bins.size(); ++w) {
        const auto cells = d_.reports().window(d_.window_start(end_bins[w]), d_.window_end(end_bins[w]));
        const GridArrayd p = bf_detect(cells, d_.grid(), cfg_);
        out.row(static_cast<Eigen::Index>(w)) = Eigen::Map<const Eigen::RowVectorXd>(p.data(), p.size());
    }
    return out;
}

CnnSpec cnn_spec(const Discretization& d, const RunConfig& cfg) {
    CnnSpec s;
    s.nx = d.grid().nx;
    s.ny = d.grid().ny;
    s.channels = d.window_length() * kFeatureCount;
    s.filters1 = cfg.filters;
    s.filters2 = cfg.filters;
    s.conv_activation = cfg.conv_activation;
    return s;
}

TrainedModel train_cnn(const Discretization& d, const RotationSplit& split, const RunConfig& cfg,
                       TrainReport* report) {
    std::vector<std::int64_t> bins;
    std::vector<LabelArray> labels;
    for (std::size_t i = 0; i < split.train_bins.size(); i += cfg.train_stride) {
        bins.push_back(split.train_bins[i]);
        labels.push_back(split.train_labels[i]);
    }
    const WindowSamples samples(d.frames(), d.window_length(), std::move(bins), std::move(labels));
    return train(samples, cnn_spec(d, cfg), cfg.train, report);
}

BfCalibrationResult calibrate_bf(const Discretization& d, const RotationSplit& split, const RunConfig& cfg) {
    std::vector<Timestamp> starts, ends;
    for (auto b : split.train_bins) {
        starts.push_back(d.window_start(b));
        ends.push_back(d.window_end(b));
    }
    return calibrate_bf(d.reports(), starts, ends, split.train_labels, cfg.bf, cfg.bf_calibration);
}

Evaluation evaluate(const Detector& det, const Discretization& d, const RotationSplit& split, const MatchRule& rule) {
    const GridArrayd probs = det.probabilities(split.test_bins);
    const double thr = det.threshold();
    const auto& g = d.grid();
    Evaluation ev;
    std::vector<LabelGrid> truth;
    std::vector<Detection> detections;
    for (std::size_t w = 0; w < split.test_bins.size(); ++w) {
        const TimeBin bin = d.frames().bin(split.test_bins[w]);
        LabelGrid pred{bin, LabelArray::Zero(g.nx, g.ny)};
        Detection det_cells{bin, {}};
        for (int c = 0; c < g.cell_count(); ++c) {
            if (probs(static_cast<Eigen::Index>(w), c) >= thr) {
                pred.values.data()[c] = 1;
                det_cells.cells.push_back(cell_at(g, c));
            }
        }
        ev.predictions.push_back(std::move(pred));
        truth.push_back({bin, split.test_labels[w]});
        if (!det_cells.cells.empty()) {
            detections.push_back(std::move(det_cells));
        }
    }
    const auto cls = classification_metrics(ev.predictions, truth);
    ev.matches = match_detections(detections, split.test_incidents, g, rule);
    const auto total = static_cast<std::int64_t>(split.test_incidents.size());
    const auto early = early_metrics(ev.matches, total);
    ev.metrics = make_report(cls, early, static_cast<std::int64_t>(ev.matches.size()), total);
    return ev;
}

MetricsReport aggregate(std::span<const MetricsReport> rs) {
    MetricsReport out;
    if (rs.empty()) {
        return out;
    }
    const double n = static_cast<double>(rs.size());
    double dist = 0.0, early_time = 0.0;
    int n_dist = 0, n_time = 0;
    for (const auto& r : rs) {
        out.f1 += r.f1 / n;
        out.precision += r.precision / n;
        out.recall += r.recall / n;
        out.early_pred_pct += r.early_pred_pct / n;
        if (r.avg_distance_km) {
            dist += *r.avg_distance_km;
            ++n_dist;
        }
        if (r.avg_early_time_min) {
            early_time += *r.avg_early_time_min;
            ++n_time;
        }
        out.counts += r.counts;
        out.matched_incidents += r.matched_incidents;
        out.total_incidents += r.total_incidents;
    }
    if (n_dist) out.avg_distance_km = dist / n_dist;
    if (n_time) out.avg_early_time_min = early_time / n_time;
    return out;
}

// ---------------------------------------------------------------------------
// Outputs

std::string model_ref(const std::string& detector, double delta_s_km, int delta_t_min, int rotation) {
    std::string ref = "models/" + detector + "_s" + format_number(delta_s_km) + "_t" + std::to_string(delta_t_min);
    if (rotation >= 0) {
        ref += "_r" + std::to_string(rotation) + (detector == "cnn" ? ".bin" : ".json");
    }
    return ref;
}

EpsilonArchive build_archive(std::span<const Candidate> cands, const ObjectiveConfig& obj,
                             const std::array<double, 3>& eps) {
    EpsilonArchive archive(std::vector<double>(eps.begin(), eps.end()));
    for (std::size_t i = 0; i < cands.size(); ++i) {
        if (cands[i].detector == "cnn") {
            archive.insert(objectives(cands[i], obj), i);
        }
    }
    return archive;
}

namespace {

std::string opt_number(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

std::vector<std::size_t> archive_indices(const EpsilonArchive& a) {
    std::vector<std::size_t> out;
    for (const auto& m : a.members()) {
        out.push_back(m.tag);
    }
    std::sort(out.begin(), out.end());
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) {
        out.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

constexpr const char* kCandidatesHeader =
    "detector,delta_s_km,delta_t_min,f1,precision,recall,early_pred_pct,avg_distance_km,avg_early_time_min,in_archive";

}  // namespace

void write_candidates_csv(const fs::path& path, std::span<const Candidate> cands, std::span<const std::size_t> archive) {
    std::ostringstream out;
    out << kCandidatesHeader << '\n';
    for (std::size_t i = 0; i < cands.size(); ++i) {
        const auto& c = cands[i];
        const bool in = std::find(archive.begin(), archive.end(), i) != archive.end();
        out << c.detector << ',' << format_number(c.delta_s_km) << ',' << format_number(c.delta_t_min) << ','
            << format_number(c.metrics.f1) << ',' << format_number(c.metrics.precision) << ','
            << format_number(c.metrics.recall) << ',' << format_number(c.metrics.early_pred_pct) << ','
            << opt_number(c.metrics.avg_distance_km) << ',' << opt_number(c.metrics.avg_early_time_min) << ','
            << (in ? 1 : 0) << '\n';
    }
    write_text(path, out.str());
}

std::vector<Candidate> read_candidates_csv(const fs::path& path, std::vector<bool>* in_archive) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("missing " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line != kCandidatesHeader) {
        throw DataError(path.string(), 1, "header", "expected '" + std::string(kCandidatesHeader) + "'");
    }
    std::vector<Candidate> out;
    if (in_archive) in_archive->clear();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 10) {
            throw DataError(path.string(), line_no, "row", "expected 10 fields");
        }
        auto num = [&](std::size_t i, const char* name) {
            try {
                std::size_t used = 0;
                const double v = std::stod(f[i], &used);
                if (used != f[i].size()) throw std::invalid_argument(name);
                return v;
            } catch (const std::exception&) {
                throw DataError(path.string(), line_no, name, "not a number: '" + f[i] + "'");
            }
        };
        Candidate c;
        c.detector = f[0];
        c.delta_s_km = num(1, "delta_s_km");
        c.delta_t_min = num(2, "delta_t_min");
        c.metrics.f1 = c.f1 = num(3, "f1");
        c.metrics.precision = num(4, "precision");
        c.metrics.recall = num(5, "recall");
        c.metrics.early_pred_pct = num(6, "early_pred_pct");
        if (!f[7].empty()) c.metrics.avg_distance_km = num(7, "avg_distance_km");
        if (!f[8].empty()) c.metrics.avg_early_time_min = num(8, "avg_early_time_min");
        if (f[9] != "0" && f[9] != "1") {
            throw DataError(path.string(), line_no, "in_archive", "expected 0 or 1");
        }
        if (in_archive) in_archive->push_back(f[9] == "1");
        out.push_back(std::move(c));
    }
    return out;
}

nlohmann::json pareto_json(std::span<const Candidate> cands, const EpsilonArchive& archive,
                           const ObjectiveConfig& obj) {
    nlohmann::json members = nlohmann::json::array();
    for (auto i : archive_indices(archive)) {
        const auto& m = *std::find_if(archive.members().begin(), archive.members().end(),
                                      [&](const auto& mm) { return mm.tag == i; });
        const auto& c = cands[i];
        members.push_back({{"detector", c.detector},
                           {"delta_s_km", c.delta_s_km},
                           {"delta_t_min", c.delta_t_min},
                           {"f1", c.f1},
                           {"objectives", m.v},
                           {"box", m.box},
                           {"model_ref", c.model_ref},
                           {"scalarized", scalarize(c, obj)}});
    }
    return {{"epsilons", archive.epsilons()},
            {"gammas", obj.gammas},
            {"z1", transform_name(obj.z1)},
            {"z2", transform_name(obj.z2)},
            {"sign_convention", "all objectives maximized: (gamma1*f1, -gamma2*z1(dt), -gamma3*z2(ds))"},
            {"members", members}};
}

// ---------------------------------------------------------------------------
// Sweep

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

nlohmann::json metrics_document(const MetricsReport& m, const std::string& fingerprint) {
    auto j = to_json(m);
    j["fingerprint"] = fingerprint;
    return j;
}

}  // namespace

SweepResult run_sweep(const RunConfig& cfg, const SweepOptions& opts) {
    cfg.validate();
    const fs::path out = cfg.output_dir;
    fs::create_directories(out);
    auto log = [&](const std::string& msg) {
        if (!opts.quiet) std::clog << "[sweep] " << msg << std::endl;
    };

    const auto t_load = Clock::now();
    const LoadedData data = load_data(cfg);
    const std::string data_fp = hex64(dataset_fingerprint(data.dataset));
    const auto config_json = to_json(cfg);
    const std::string config_fp = hex64(fnv1a(config_json.dump()));
    log("dataset " + data_fp + ": " + std::to_string(data.dataset.reports.size()) + " reports, " +
        std::to_string(data.dataset.incidents.size()) + " incidents (" + format_number(seconds_since(t_load)) + " s)");

    const auto all_rotations = monthly_rotations(data.start, data.end);
    std::vector<int> rot_ids = cfg.rotations;
    if (rot_ids.empty()) {
        for (int i = 0; i < static_cast<int>(all_rotations.size()); ++i) rot_ids.push_back(i);
    }
    for (int r : rot_ids) {
        if (r >= static_cast<int>(all_rotations.size())) {
            throw ConfigError("sweep.rotations: index " + std::to_string(r) + " but the data has only " +
                              std::to_string(all_rotations.size()) + " months");
        }
    }

    std::vector<double> ds_values = cfg.delta_s_km;
    std::sort(ds_values.begin(), ds_values.end());
    ds_values.erase(std::unique(ds_values.begin(), ds_values.end()), ds_values.end());
    std::vector<int> dt_values = cfg.delta_t_min;
    std::sort(dt_values.begin(), dt_values.end());
    dt_values.erase(std::unique(dt_values.begin(), dt_values.end()), dt_values.end());
    std::vector<std::string> dets;
    for (const char* d : {"cnn", "bf"}) {
        if (std::find(cfg.detectors.begin(), cfg.detectors.end(), d) != cfg.detectors.end()) dets.push_back(d);
    }

    const std::vector<double> dt_as_double(dt_values.begin(), dt_values.end());
    const auto eps = cfg.objectives.epsilons.value_or(default_epsilons(cfg.objectives, dt_as_double, ds_values));

    nlohmann::json rotations_json = nlohmann::json::array();
    for (int r : rot_ids) {
        rotations_json.push_back({{"index", r},
                                  {"test_start", format_iso8601(all_rotations[r].test_start)},
                                  {"test_end", format_iso8601(all_rotations[r].test_end)}});
    }
    write_json(out / "manifest.json", {{"tool", "crome"},
                                       {"version", kToolVersion},
                                       {"config", config_json},
                                       {"config_fingerprint", config_fp},
                                       {"data_fingerprint", data_fp},
                                       {"seeds", {{"scenario", cfg.scenario.seed}, {"cnn", cfg.train.seed}}},
                                       {"rotations", rotations_json},
                                       {"epsilons", eps}});

    SweepResult result;
    result.epsilons = eps;
    std::map<int, std::vector<Candidate>> per_rotation;
    nlohmann::json runs = nlohmann::json::array();

    for (double s : ds_values) {
        for (int t : dt_values) {
            const auto t_disc = Clock::now();
            const Discretization d(data, cfg, s, t);
            log("grid ds=" + format_number(s) + " km dt=" + std::to_string(t) + " min: " +
                std::to_string(d.grid().nx) + "x" + std::to_string(d.grid().ny) + " cells, " +
                std::to_string(d.frames().size()) + " bins (" + format_number(seconds_since(t_disc)) + " s)");
            const bool cnn_ok = d.grid().nx >= 4 && d.grid().ny >= 4;
            std::map<std::string, std::vector<MetricsReport>> metrics_by_det;
            for (const auto& det : dets) {
                if (det == "cnn" && !cnn_ok) {
                    const std::string msg = "cnn skipped at ds=" + format_number(s) + " km, dt=" + std::to_string(t) +
                                            " min: grid " + std::to_string(d.grid().nx) + "x" +
                                            std::to_string(d.grid().ny) + " is smaller than 4x4";
                    result.diagnostics.push_back(msg);
                    log(msg);
                }
            }
            for (int r : rot_ids) {
                const RotationSplit split = make_split(d, data.dataset, all_rotations[r], cfg.labels);
                const std::string fp = hex64(fnv1a(std::to_string(r) + format_number(s) + std::to_string(t),
                                                   fnv1a(config_fp + data_fp)));
                for (const auto& det : dets) {
                    if (det == "cnn" && !cnn_ok) continue;
                    const std::string ref = model_ref(det, s, t, r);
                    const fs::path model_path = out / ref;
                    const bool reuse = !opts.overwrite && fs::exists(model_path);
                    nlohmann::json run = {{"detector", det}, {"delta_s_km", s}, {"delta_t_min", t},
                                          {"rotation", r}, {"model_ref", ref}, {"reused", reuse}};
                    const auto t0 = Clock::now();
                    std::unique_ptr<Detector> detector;
                    if (det == "cnn") {
                        TrainedModel model;
                        if (reuse) {
                            model = load_model(model_path);
                            if (!(model.spec == cnn_spec(d, cfg))) {
                                throw std::runtime_error(model_path.string() +
                                                         ": stored network does not match this configuration; "
                                                         "rerun with --overwrite");
                            }
                        } else {
                            TrainReport rep;
                            model = train_cnn(d, split, cfg, &rep);
                            model.train_manifest["fingerprint"] = fp;
                            model.train_manifest["data_fingerprint"] = data_fp;
                            model.train_manifest["rotation"] = r;
                            save_model(model_path, model);
                            run["chosen_epochs"] = rep.chosen_epochs;
                            run["validation_f1"] = rep.validation_f1;
                            run["pos_weight"] = rep.pos_weight;
                            run["epoch_loss"] = rep.epoch_loss;
                        }
                        run["threshold"] = model.threshold;
                        detector = std::make_unique<CnnDetector>(std::move(model), d);
                    } else {
                        BfConfig bf;
                        if (reuse) {
                            std::ifstream in(model_path);
                            bf = bf_config_from_json(nlohmann::json::parse(in).at("config"));
                        } else {
                            const auto cal = crome::calibrate_bf(d, split, cfg);
                            bf = cal.config;
                            write_json(model_path, {{"config", to_json(bf)},
                                                    {"train_f1", cal.train_f1},
                                                    {"fingerprint", fp},
                                                    {"data_fingerprint", data_fp}});
                            run["train_f1"] = cal.train_f1;
                        }
                        run["threshold"] = bf.threshold;
                        run["prior"] = bf.prior;
                        detector = std::make_unique<BfDetector>(bf, d);
                    }
                    const auto t_fit = seconds_since(t0);
                    const auto ev = evaluate(*detector, d, split, cfg.labels);
                    run["fit_seconds"] = t_fit;
                    run["eval_seconds"] = seconds_since(t0) - t_fit;
                    const std::string stem = det + "_s" + format_number(s) + "_t" + std::to_string(t);
                    const fs::path rot_dir = out / "rotations" / ("r" + std::to_string(r));
                    write_json(rot_dir / "metrics" / (stem + ".json"), metrics_document(ev.metrics, fp));
                    fs::create_directories(rot_dir / "matches");
                    write_matches_csv(rot_dir / "matches" / (stem + ".csv"), ev.matches);

                    Candidate c{det, s, static_cast<double>(t), ev.metrics.f1, ref, ev.metrics};
                    per_rotation[r].push_back(c);
                    metrics_by_det[det].push_back(ev.metrics);
                    run["f1"] = ev.metrics.f1;
                    log(det + " ds=" + format_number(s) + " dt=" + std::to_string(t) + " r" + std::to_string(r) +
                        ": F1 " + format_number(ev.metrics.f1) + ", early " + format_number(ev.metrics.early_pred_pct) +
                        "% (" + format_number(std::round(seconds_since(t0) * 10) / 10) + " s" +
                        (reuse ? ", reused" : "") + ")");
                    runs.push_back(std::move(run));
                }
            }
            for (const auto& det : dets) {
                if (!metrics_by_det.count(det)) continue;
                const auto m = aggregate(metrics_by_det[det]);
                result.candidates.push_back({det, s, static_cast<double>(t), m.f1, model_ref(det, s, t, -1), m});
            }
        }
    }

    for (const auto& [r, cands] : per_rotation) {
        const auto archive = build_archive(cands, cfg.objectives, eps);
        const fs::path rot_dir = out / "rotations" / ("r" + std::to_string(r));
        write_candidates_csv(rot_dir / "candidates.csv", cands, archive_indices(archive));
        write_json(rot_dir / "pareto.json", pareto_json(cands, archive, cfg.objectives));
    }
    const auto archive = build_archive(result.candidates, cfg.objectives, eps);
    result.archive = archive_indices(archive);
    write_candidates_csv(out / "candidates.csv", result.candidates, result.archive);
    write_json(out / "pareto.json", pareto_json(result.candidates, archive, cfg.objectives));
    write_json(out / "summary.json", {{"runs", runs}, {"diagnostics", result.diagnostics}});
    return result;
}

}  // namespace crome
