#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace circuitscope {

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct Plot {
  std::string id;  // also the SVG file stem
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
};

// Builds plots from the CSV artifacts in `run_dir` (non-recursive):
//   training_log.csv, behavior_<task>.csv, emergence_<metric>.csv,
//   ratios.csv, stability_<task>.csv, node_counts_<task>.csv.
// Files are visited in name order. Throws no_artifacts when none exist.
std::vector<Plot> collect_plots(const std::filesystem::path& run_dir);

// {"format_version": 1, "plots": [{id, title, x_label, y_label,
//  series: [{name, x: [...], y: [...]}]}]}
std::string plots_to_json(const std::vector<Plot>& plots);

// Static line chart.
std::string render_svg(const Plot& plot);

struct ReportFiles {
  std::filesystem::path plot_data;
  std::vector<std::filesystem::path> charts;
};

// Writes plot_data.json and one SVG per plot into `run_dir/report`.
ReportFiles write_report(const std::filesystem::path& run_dir);

}  // namespace circuitscope
