#pragma once

// Report files: run JSON, metric history CSV, per-layer selection CSV and
// aggregated sweep CSVs (one row per swept value, mean over seeds).

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sfa/trainer.hpp"

namespace sfa {

enum class SweepAxis { beta, middle_dim, step_size, criterion };

std::string sweep_axis_name(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& name);

struct SweepRow {
    std::string key;  // formatted axis value
    double sort_key = 0.0;
    std::size_t runs = 0;
    double metric_mean = 0.0;
    double metric_std = 0.0;  // population standard deviation over runs
    double trainable_mean = 0.0;
};

std::string report_to_json(const RunReport& report);
/// Throws FormatError on malformed input.
RunReport report_from_json(const std::string& text);
/// Rows are sorted ascending by the axis value (criterion: by name).
std::vector<SweepRow> summarize(std::span<const RunReport> reports, SweepAxis axis);

std::string history_csv(const RunReport& report);
std::string layer_csv(const RunReport& report);
std::string sweep_csv(std::span<const RunReport> reports, SweepAxis axis);

/// Writes <dir>/report.json, history.csv and layers.csv.
void write_run_reports(const std::filesystem::path& dir, const RunReport& report);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace sfa
