#pragma once

// Run report: summary tables and a handful of SVG plots built from the
// artifacts a pipeline run leaves behind.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace discl {

/// Required metrics are missing; names the stages whose outputs are absent.
class ReportError : public std::runtime_error {
 public:
  ReportError(std::vector<std::string> missing_stages, const std::string& message)
      : std::runtime_error(message), missing_(std::move(missing_stages)) {}
  const std::vector<std::string>& missing_stages() const noexcept { return missing_; }

 private:
  std::vector<std::string> missing_;
};

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct Bar {
  std::string label;
  double value = 0.0;
  double error = 0.0;
};

/// Line chart; output depends only on the arguments.
std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series);
/// Bar chart with symmetric error whiskers.
std::string svg_bar_plot(const std::string& title, const std::string& y_label, const std::vector<Bar>& bars);

/// Column header of report/summary.csv: one row per (section, key).
inline constexpr const char* kSummaryCsvHeader = "section,key,value";

/// Reads eval/metrics.csv, curriculum/stages.jsonl, spectrum/fidelity.csv and,
/// when present, ablation/summary.csv, and writes into report/:
///   summary.csv, summary.json, accuracy_vs_stage.svg, fidelity_vs_lambda.svg
///   and ablation_bars.svg (only with ablation results).
/// Nothing is written unless every required input is present and parses.
/// Returns the written paths.
std::vector<std::filesystem::path> emit_report(const std::filesystem::path& run_dir);

}  // namespace discl
