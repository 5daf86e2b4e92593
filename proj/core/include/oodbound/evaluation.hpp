#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "oodbound/boundary.hpp"
#include "oodbound/dataset.hpp"
#include "oodbound/metric_learning.hpp"

namespace oodbound {

inline constexpr std::string_view kReportSchema = "oodbound-report/1";

struct ClassScore {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t gold = 0;
  std::size_t predicted = 0;
  /// False when the class has neither gold items nor predictions; such
  /// classes are left out of every macro average.
  bool counted = true;
};

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;  // known classes and the OOD class
  double f1_ood = 0.0;
  double f1_ind = 0.0;    // known classes only
  std::vector<ClassScore> per_class;  // label_set order, OOD last
};

/// Accuracy and F1 family from parallel label lists. `label_set` lists the
/// known classes; the OOD class is appended when it is not already there.
/// Labels outside the set are rejected.
Metrics confusion_and_f1(std::span<const std::string> predictions,
                         std::span<const std::string> gold,
                         std::span<const std::string> label_set);

struct RunConfig {
  std::vector<double> ratios{0.25, 0.5, 0.75};
  std::size_t runs = 10;
  std::uint64_t seed = 0;
  double train_fraction = 1.0;
  /// Worker threads for independent (ratio, run) cells; 0 means hardware concurrency.
  std::size_t threads = 1;

  void validate() const;
};

struct RunMetrics {
  std::size_t run_index = 0;
  std::vector<std::string> known_labels;
  Metrics metrics;
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single run
};

struct MetricsReport {
  double ratio = 0.0;
  double train_fraction = 1.0;
  std::vector<RunMetrics> per_run;
  Summary accuracy, macro_f1, f1_ood, f1_ind;
};

/// Everything one evaluation invocation produced, in deterministic order.
struct EvaluationReport {
  RunConfig run_config;
  TrainConfig train_config;
  BoundaryParams boundary_params;
  std::vector<MetricsReport> cells;  // ordered by (train_fraction, ratio)
};

Summary summarize(std::span<const double> values);

/// Splits, trains, fits and scores `runs` times per known ratio.
/// Any failing run aborts the whole report.
EvaluationReport run_protocol(const Dataset& train, const Dataset& test, const RunConfig& run_config,
                              const TrainConfig& train_config,
                              const BoundaryParams& boundary_params);

/// run_protocol at every training fraction (ascending), sharing seeds.
std::vector<std::pair<double, EvaluationReport>> train_size_sweep(
    std::span<const double> fractions, const Dataset& train, const Dataset& test,
    const RunConfig& run_config, const TrainConfig& train_config,
    const BoundaryParams& boundary_params);

/// Concatenates sweep points into one report whose cells span all fractions.
EvaluationReport merge_sweep(const std::vector<std::pair<double, EvaluationReport>>& sweep);

enum class ReportFormat { Json, Csv, Markdown };

/// Format from extension: .csv, .md/.markdown, otherwise JSON.
ReportFormat report_format_from_path(const std::filesystem::path& path);

std::string report_to_json(const EvaluationReport& report);
EvaluationReport report_from_json(std::string_view text);
std::string report_to_csv(const EvaluationReport& report);
std::string report_to_markdown(const EvaluationReport& report);

void emit_report(const EvaluationReport& report, const std::filesystem::path& path,
                 ReportFormat format);

}  // namespace oodbound
