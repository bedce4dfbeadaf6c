#pragma once

// Metrics records and their text, CSV, JSON and SVG renderings.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace tdc::report {

inline constexpr int kGameLevels = 4;

struct EvalMetrics {
  std::array<double, kGameLevels> game{};  // mean over images of the per-image GAME(L)
  double rmse = 0.0;
  double mae = 0.0;
  int images = 0;

  friend bool operator==(const EvalMetrics&, const EvalMetrics&) = default;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  // mean total loss over the epoch's steps
  double reg_loss = 0.0;
  double aux_loss = 0.0;
  bool evaluated = false;
  EvalMetrics test;
  double seconds = 0.0;
};

struct MetricsReport {
  std::string run_id;
  std::string config_hash;
  std::string split = "test";
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
  int best_epoch = -1;
  EvalMetrics best;  // metrics of the best-by-GAME(0) evaluation
  double final_train_loss = 0.0;
  double wall_seconds = 0.0;

  // GAME(0) == MAE and GAME non-decreasing in L, for `best` and every
  // evaluated epoch. Returns a description of the first violation or "".
  std::string integrity_error() const;
};

// One row per evaluated epoch.
std::string metrics_csv(const MetricsReport& r);
std::string report_text(const MetricsReport& r, const std::string& title);
std::string to_json(const MetricsReport& r);
MetricsReport from_json(const std::string& text, const std::string& source);

// Writes metrics.csv, report.txt, report.json and loss.svg into dir.
void write_run(const MetricsReport& r, const std::string& title, const std::filesystem::path& dir);
MetricsReport read_run(const std::filesystem::path& dir);

struct Series {
  std::string label;
  std::vector<double> values;
};

// Static line plot, x = index + 1.
std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<Series>& series);
// One bar per label.
std::string bar_plot_svg(const std::string& title, const std::string& y_label,
                         const std::vector<std::string>& labels, const std::vector<double>& values);

// Fixed-width text table; every row has header.size() cells.
std::string text_table(const std::vector<std::string>& header,
                       const std::vector<std::vector<std::string>>& rows);
std::string csv_table(const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows);

std::string fmt(double v, int precision = 4);

}  // namespace tdc::report
