// crome: simulate, featurize, train, evaluate and sweep incident detectors.
//
// Exit codes: 0 success, 1 user error (bad config, missing input), 2 internal error.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "crome/experiment.hpp"
#include "crome/report.hpp"

namespace fs = std::filesystem;
using namespace crome;

namespace {

struct UserError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool overwrite = false;
    bool paper_arch = false;
};

RunConfig resolve(const Globals& g) {
    RunConfig cfg;
    if (!g.config.empty()) {
        if (!fs::exists(g.config)) {
            throw UserError("config file not found: " + g.config);
        }
        cfg = load_run_config(g.config);
    }
    if (g.seed) override_seed(cfg, *g.seed);
    if (!g.out.empty()) cfg.output_dir = g.out;
    if (g.paper_arch) cfg.filters = CnnSpec::kPaperFilters;
    cfg.validate();
    if (cfg.data_dir && !fs::exists(*cfg.data_dir / "dataset.json")) {
        throw UserError("dataset not found: " + (*cfg.data_dir / "dataset.json").string());
    }
    return cfg;
}

struct PointArgs {
    double delta_s = 0.0;
    int delta_t = 0;
    int rotation = 0;
};

void add_point_options(CLI::App* cmd, PointArgs& p) {
    cmd->add_option("--delta-s", p.delta_s, "cell size in km (default: first configured)");
    cmd->add_option("--delta-t", p.delta_t, "step in minutes (default: first configured)");
    cmd->add_option("--rotation", p.rotation, "test-month index")->check(CLI::NonNegativeNumber);
}

void fill_point(PointArgs& p, const RunConfig& cfg) {
    if (p.delta_s <= 0.0) p.delta_s = cfg.delta_s_km.front();
    if (p.delta_t <= 0) p.delta_t = cfg.delta_t_min.front();
    if (cfg.t_prime_min % p.delta_t != 0) {
        throw ConfigError("time.t_prime_min: " + std::to_string(cfg.t_prime_min) + " is not a multiple of --delta-t " +
                          std::to_string(p.delta_t));
    }
}

Rotation rotation_at(const LoadedData& data, int index) {
    const auto rots = monthly_rotations(data.start, data.end);
    if (index >= static_cast<int>(rots.size())) {
        throw UserError("--rotation " + std::to_string(index) + " but the data has " + std::to_string(rots.size()) +
                        " months");
    }
    return rots[index];
}

int cmd_simulate(const Globals& g) {
    RunConfig cfg = resolve(g);
    const fs::path dir = g.out.empty() ? cfg.output_dir / "data" : fs::path(g.out);
    if (fs::exists(dir / "dataset.json") && !g.overwrite) {
        std::cout << dir.string() << " already holds a dataset; pass --overwrite to regenerate\n";
        return 0;
    }
    const Scenario s = generate(cfg.scenario);
    write_scenario(dir, s);
    std::ofstream(dir / "scenario.json", std::ios::binary) << to_json(cfg.scenario).dump(2) << '\n';
    std::cout << "wrote " << s.dataset.reports.size() << " reports, " << s.dataset.incidents.size() << " incidents, "
              << s.dataset.traffic.size() << " traffic and " << s.dataset.weather.size() << " weather rows to "
              << dir.string() << '\n';
    return 0;
}

int cmd_featurize(const Globals& g, PointArgs p, const std::string& from, const std::string& to) {
    const RunConfig cfg = resolve(g);
    fill_point(p, cfg);
    const LoadedData data = load_data(cfg);
    const Discretization d(data, cfg, p.delta_s, p.delta_t);
    const Timestamp lo = from.empty() ? data.start : parse_iso8601(from);
    const Timestamp hi = to.empty() ? lo + kSecondsPerDay : parse_iso8601(to);
    if (lo >= hi) {
        throw UserError("--from must precede --to");
    }
    const fs::path dir = cfg.output_dir / "features" / ("s" + format_number(p.delta_s) + "_t" + std::to_string(p.delta_t));
    if (fs::exists(dir) && !g.overwrite) {
        std::cout << dir.string() << " exists; pass --overwrite to rebuild\n";
        return 0;
    }
    std::vector<LabelGrid> labels;
    std::size_t n = 0;
    for (std::int64_t b = 0; b < d.frames().size(); ++b) {
        const TimeBin bin = d.frames().bin(b);
        if (bin.start() < lo || bin.start() >= hi) continue;
        const Window w = build_window(d.frames(), bin, cfg.t_prime_min);
        write_window_tensor(dir / "windows" / (std::to_string(b) + ".bin"), w, d.grid());
        labels.push_back(label_window(data.dataset.incidents, d.grid(), bin, cfg.labels));
        ++n;
    }
    write_labels_csv(dir / "labels.csv", labels);
    std::cout << "wrote " << n << " windows (" << d.grid().nx << "x" << d.grid().ny << " cells, "
              << d.window_length() * kFeatureCount << " channels) to " << dir.string() << '\n';
    return 0;
}

int cmd_train(const Globals& g, PointArgs p) {
    const RunConfig cfg = resolve(g);
    fill_point(p, cfg);
    const LoadedData data = load_data(cfg);
    const Discretization d(data, cfg, p.delta_s, p.delta_t);
    const RotationSplit split = make_split(d, data.dataset, rotation_at(data, p.rotation), cfg.labels);
    for (const auto& det : cfg.detectors) {
        const fs::path path = cfg.output_dir / model_ref(det, p.delta_s, p.delta_t, p.rotation);
        if (fs::exists(path) && !g.overwrite) {
            std::cout << path.string() << " exists; pass --overwrite to retrain\n";
            continue;
        }
        if (det == "cnn") {
            if (d.grid().nx < 4 || d.grid().ny < 4) {
                throw UserError("grid " + std::to_string(d.grid().nx) + "x" + std::to_string(d.grid().ny) +
                                " is too small for the CNN (needs 4x4)");
            }
            TrainReport rep;
            auto model = train_cnn(d, split, cfg, &rep);
            model.train_manifest["data_fingerprint"] = hex64(dataset_fingerprint(data.dataset));
            save_model(path, model);
            std::cout << "cnn: " << rep.chosen_epochs << " epochs, threshold " << rep.chosen_threshold
                      << ", validation F1 " << rep.validation_f1 << " -> " << path.string() << '\n';
        } else {
            const auto cal = calibrate_bf(d, split, cfg);
            fs::create_directories(path.parent_path());
            std::ofstream(path, std::ios::binary)
                << nlohmann::json{{"config", to_json(cal.config)}, {"train_f1", cal.train_f1}}.dump(2) << '\n';
            std::cout << "bf: prior " << cal.config.prior << ", threshold " << cal.config.threshold << ", train F1 "
                      << cal.train_f1 << " -> " << path.string() << '\n';
        }
    }
    return 0;
}

int cmd_eval(const Globals& g, PointArgs p) {
    const RunConfig cfg = resolve(g);
    fill_point(p, cfg);
    const LoadedData data = load_data(cfg);
    const Discretization d(data, cfg, p.delta_s, p.delta_t);
    const RotationSplit split = make_split(d, data.dataset, rotation_at(data, p.rotation), cfg.labels);
    for (const auto& det : cfg.detectors) {
        const fs::path path = cfg.output_dir / model_ref(det, p.delta_s, p.delta_t, p.rotation);
        if (!fs::exists(path)) {
            throw UserError("model not found: " + path.string() + " (run 'crome train' first)");
        }
        std::unique_ptr<Detector> detector;
        if (det == "cnn") {
            detector = std::make_unique<CnnDetector>(load_model(path), d);
        } else {
            std::ifstream in(path);
            detector = std::make_unique<BfDetector>(bf_config_from_json(nlohmann::json::parse(in).at("config")), d);
        }
        const auto ev = evaluate(*detector, d, split, cfg.labels);
        const fs::path metrics_path = cfg.output_dir / "rotations" / ("r" + std::to_string(p.rotation)) / "metrics" /
                                      (det + "_s" + format_number(p.delta_s) + "_t" + std::to_string(p.delta_t) + ".json");
        fs::create_directories(metrics_path.parent_path());
        auto j = to_json(ev.metrics);
        j["fingerprint"] = hex64(fnv1a(to_json(cfg).dump(), dataset_fingerprint(data.dataset)));
        std::ofstream(metrics_path, std::ios::binary) << j.dump(2) << '\n';
        std::cout << det << ": " << j.dump() << '\n';
    }
    return 0;
}

int cmd_sweep(const Globals& g) {
    const RunConfig cfg = resolve(g);
    const auto res = run_sweep(cfg, {g.overwrite, false});
    std::cout << res.candidates.size() << " candidates, " << res.archive.size() << " in the archive; outputs in "
              << cfg.output_dir.string() << '\n';
    for (const auto& d : res.diagnostics) {
        std::cout << "skipped: " << d << '\n';
    }
    return 0;
}

int cmd_report(const Globals& g, const std::string& run_dir_arg, bool normalized) {
    fs::path run_dir = run_dir_arg;
    if (run_dir.empty()) {
        run_dir = g.out.empty() ? (g.config.empty() ? fs::path("run") : load_run_config(g.config).output_dir) : fs::path(g.out);
    }
    if (!fs::exists(run_dir / "candidates.csv")) {
        throw UserError("missing " + (run_dir / "candidates.csv").string());
    }
    std::cout << write_report(run_dir);
    if (normalized) {
        const RunConfig cfg = g.config.empty() ? RunConfig{} : load_run_config(g.config);
        const auto cands = read_candidates_csv(run_dir / "candidates.csv");
        const auto scores = scalarize_normalized(cands, cfg.objectives);
        std::cout << "\nnormalized weighted score (higher is better):\n";
        for (std::size_t i = 0; i < cands.size(); ++i) {
            std::cout << "  " << cands[i].detector << " ds=" << format_number(cands[i].delta_s_km)
                      << " dt=" << format_number(cands[i].delta_t_min) << ": " << format_number(scores[i]) << '\n';
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Crowdsourced incident detection with Pareto model selection"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "JSON run configuration");
    app.add_option("--seed", g.seed, "seed for the scenario and the CNN");
    app.add_option("--out", g.out, "output directory");
    app.add_flag("--overwrite", g.overwrite, "regenerate existing outputs");
    app.add_flag("--paper-arch", g.paper_arch, "use 256 convolution filters");

    auto* simulate = app.add_subcommand("simulate", "generate a synthetic dataset");
    auto* featurize = app.add_subcommand("featurize", "dump window tensors and labels");
    auto* train = app.add_subcommand("train", "train/calibrate detectors for one grid point and rotation");
    auto* eval = app.add_subcommand("eval", "evaluate trained detectors on the rotation's test month");
    auto* sweep = app.add_subcommand("sweep", "train and evaluate the full grid over all rotations");
    auto* report = app.add_subcommand("report", "tables and plot data from a sweep");

    PointArgs feat_p, train_p, eval_p;
    std::string from, to, run_dir;
    bool normalized = false;
    add_point_options(featurize, feat_p);
    featurize->add_option("--from", from, "first bin start (ISO-8601; default: data start)");
    featurize->add_option("--to", to, "end of range (ISO-8601; default: one day after --from)");
    add_point_options(train, train_p);
    add_point_options(eval, eval_p);
    report->add_option("run_dir", run_dir, "sweep output directory (default: --out or the configured output)");
    report->add_flag("--normalized", normalized, "also rank candidates by the normalized weighted score");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*simulate) return cmd_simulate(g);
        if (*featurize) return cmd_featurize(g, feat_p, from, to);
        if (*train) return cmd_train(g, train_p);
        if (*eval) return cmd_eval(g, eval_p);
        if (*sweep) return cmd_sweep(g);
        if (*report) return cmd_report(g, run_dir, normalized);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 1;
    } catch (const UserError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
