#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lnl/harness.hpp"

namespace lnl {

// Five-number summary with Tukey fences. Quartiles interpolate linearly
// between order statistics.
struct BoxStats {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double whisker_low = 0.0;   // smallest value >= q1 - 1.5 IQR
  double whisker_high = 0.0;  // largest value <= q3 + 1.5 IQR
  std::vector<double> outliers;
};

BoxStats box_stats(std::vector<double> values);

struct BoxGroup {
  std::string label;
  std::vector<double> values;
};

// Vertical box plot on a fixed 640x480 canvas, one box per group.
std::string box_plot_svg(const std::string& title, const std::string& y_label, const std::vector<BoxGroup>& groups);

// Writes trials.csv, summary.csv, failures.csv (when any), matrices/,
// histories/ and plots/ under `dir`.
void write_report(const ExperimentSummary& summary, const ExperimentRun& run, const std::filesystem::path& dir);

void write_trials_csv(const std::vector<TrialResult>& results, const std::filesystem::path& path);
void write_summary_csv(const ExperimentSummary& summary, const std::filesystem::path& path);

// Reads trials.csv plus any matrices/<method>_seed<seed>.txt next to it.
std::vector<TrialResult> read_trials_csv(const std::filesystem::path& path);

// Re-aggregates an existing output directory and rewrites summary.csv and
// the plots. Returns the recomputed summary.
ExperimentSummary report_from_directory(const std::filesystem::path& dir);

}  // namespace lnl
