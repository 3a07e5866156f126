#include "crome/report.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "crome/core_data.hpp"
#include "crome/experiment.hpp"

namespace crome {

namespace fs = std::filesystem;

std::vector<TableRow> select_table_rows(std::span<const Candidate> cands) {
    std::vector<std::string> detectors;
    for (const auto& c : cands) {
        if (std::find(detectors.begin(), detectors.end(), c.detector) == detectors.end()) {
            detectors.push_back(c.detector);
        }
    }
    // score(c) returns the metric to maximize, or nothing when c lacks it.
    using Score = std::optional<double> (*)(const Candidate&);
    const std::pair<const char*, Score> categories[] = {
        {"Best Early Pred %", [](const Candidate& c) -> std::optional<double> { return c.metrics.early_pred_pct; }},
        {"Best Avg. Distance",
         [](const Candidate& c) -> std::optional<double> {
             if (!c.metrics.avg_distance_km) return std::nullopt;
             return -*c.metrics.avg_distance_km;
         }},
        {"Best Avg. Early Time", [](const Candidate& c) { return c.metrics.avg_early_time_min; }},
    };
    std::vector<TableRow> rows;
    for (const auto& [name, score] : categories) {
        for (const auto& det : detectors) {
            TableRow row{name, det, std::nullopt};
            double best = 0.0;
            for (std::size_t i = 0; i < cands.size(); ++i) {
                if (cands[i].detector != det) continue;
                const auto s = score(cands[i]);
                if (s && (!row.candidate || *s > best)) {
                    best = *s;
                    row.candidate = i;
                }
            }
            rows.push_back(row);
        }
    }
    return rows;
}

namespace {

std::string fixed(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string display_name(const std::string& detector) {
    if (detector == "cnn") return "CROME";
    if (detector == "bf") return "BF";
    return detector;
}

}  // namespace

std::string format_table(std::span<const Candidate> cands, std::span<const TableRow> rows) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-8s %7s %7s %7s %9s %9s %10s %9s %7s\n", "Model", "ds(km)", "dt(min)", "F1 %",
                  "Early %", "Dist(km)", "Early(min)", "Precision", "Recall");
    out << line;
    std::string category;
    for (const auto& row : rows) {
        if (row.category != category) {
            category = row.category;
            out << "-- " << category << " --\n";
        }
        if (!row.candidate) {
            std::snprintf(line, sizeof line, "%-8s %s\n", display_name(row.detector).c_str(), "(no qualifying candidate)");
            out << line;
            continue;
        }
        const auto& c = cands[*row.candidate];
        const auto& m = c.metrics;
        std::snprintf(line, sizeof line, "%-8s %7s %7s %7s %9s %9s %10s %9s %7s\n", display_name(c.detector).c_str(),
                      format_number(c.delta_s_km).c_str(), format_number(c.delta_t_min).c_str(),
                      fixed(100.0 * m.f1).c_str(), fixed(m.early_pred_pct).c_str(),
                      m.avg_distance_km ? fixed(*m.avg_distance_km).c_str() : "-",
                      m.avg_early_time_min ? fixed(*m.avg_early_time_min).c_str() : "-", fixed(m.precision).c_str(),
                      fixed(m.recall).c_str());
        out << line;
    }
    return out.str();
}

std::string write_report(const fs::path& run_dir, ReportFiles* files) {
    const fs::path cand_path = run_dir / "candidates.csv";
    std::vector<bool> in_archive;
    const auto cands = read_candidates_csv(cand_path, &in_archive);

    const fs::path pareto_path = run_dir / "pareto.json";
    if (fs::exists(pareto_path)) {
        std::ifstream in(pareto_path);
        const auto pj = nlohmann::json::parse(in);
        std::multiset<std::tuple<std::string, double, double>> members, flagged;
        for (const auto& m : pj.at("members")) {
            members.insert({m.at("detector").get<std::string>(), m.at("delta_s_km").get<double>(),
                            m.at("delta_t_min").get<double>()});
        }
        for (std::size_t i = 0; i < cands.size(); ++i) {
            if (in_archive[i]) flagged.insert({cands[i].detector, cands[i].delta_s_km, cands[i].delta_t_min});
        }
        if (members != flagged) {
            throw std::runtime_error(cand_path.string() + ": in_archive flags disagree with " + pareto_path.string());
        }
    }

    ReportFiles f{run_dir / "fig2a.csv", run_dir / "fig2b.csv", run_dir / "fig3.csv", run_dir / "report.txt"};

    // Mean F1 per (detector, value), in order of first appearance of the detector and ascending value.
    auto mean_by = [&](auto key) {
        std::map<std::pair<std::string, double>, std::pair<double, int>> acc;
        for (const auto& c : cands) {
            auto& [sum, n] = acc[{c.detector, key(c)}];
            sum += c.metrics.f1;
            ++n;
        }
        return acc;
    };
    auto write_fig2 = [&](const fs::path& path, const char* column, auto key) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << "detector," << column << ",f1\n";
        for (const auto& [k, v] : mean_by(key)) {
            out << k.first << ',' << format_number(k.second) << ',' << format_number(v.first / v.second) << '\n';
        }
    };
    write_fig2(f.fig2a, "delta_s_km", [](const Candidate& c) { return c.delta_s_km; });
    write_fig2(f.fig2b, "delta_t_min", [](const Candidate& c) { return c.delta_t_min; });
    {
        std::ofstream out(f.fig3, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + f.fig3.string());
        out << "delta_s_km,delta_t_min,f1,in_archive,detector\n";
        for (std::size_t i = 0; i < cands.size(); ++i) {
            out << format_number(cands[i].delta_s_km) << ',' << format_number(cands[i].delta_t_min) << ','
                << format_number(cands[i].metrics.f1) << ',' << (in_archive[i] ? 1 : 0) << ',' << cands[i].detector
                << '\n';
        }
    }

    std::string text;
    if (cands.empty()) {
        text = "no candidates\n";
    } else {
        text = format_table(cands, select_table_rows(cands));
        std::size_t members = 0;
        for (bool b : in_archive) members += b;
        text += "\nnon-dominated CNN models: " + std::to_string(members) + " of " + std::to_string(cands.size()) +
                " candidates\n";
        for (std::size_t i = 0; i < cands.size(); ++i) {
            if (in_archive[i]) {
                text += "  ds=" + format_number(cands[i].delta_s_km) + " km, dt=" + format_number(cands[i].delta_t_min) +
                        " min, F1=" + fixed(cands[i].metrics.f1, 4) + "\n";
            }
        }
    }
    std::ofstream(f.table, std::ios::binary) << text;
    if (files) *files = f;
    return text;
}

}  // namespace crome
