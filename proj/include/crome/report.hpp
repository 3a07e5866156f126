#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crome/pareto.hpp"

namespace crome {

/// One row of the early-detection table.
struct TableRow {
    std::string category;  // "Best Early Pred %", "Best Avg. Distance", "Best Avg. Early Time"
    std::string detector;
    std::optional<std::size_t> candidate;  // index into the candidate list; empty when nothing qualifies
};

/// Per detector (in first-appearance order) and category: the candidate with
/// the highest early_pred_pct, the lowest avg_distance_km and the highest
/// avg_early_time_min. Candidates lacking the metric are skipped; ties keep the
/// earlier candidate.
std::vector<TableRow> select_table_rows(std::span<const Candidate> cands);

std::string format_table(std::span<const Candidate> cands, std::span<const TableRow> rows);

struct ReportFiles {
    std::filesystem::path fig2a, fig2b, fig3, table;
};

/// Reads candidates.csv (and checks its archive flags against pareto.json when
/// present) from `run_dir`, then writes fig2a.csv (mean F1 over Δt per
/// detector and Δs), fig2b.csv (mean F1 over Δs per detector and Δt),
/// fig3.csv and report.txt. Returns the table text.
std::string write_report(const std::filesystem::path& run_dir, ReportFiles* files = nullptr);

}  // namespace crome
