#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "discl/classifier.hpp"
#include "discl/data.hpp"
#include "discl/sample.hpp"

namespace discl {

/// Top-1 accuracy per class; classes without test samples are absent.
std::map<int, double> per_class_accuracy(std::span<const int> predictions, std::span<const LabeledImage> test);

struct GroupAccuracy {
  double all = 0.0;
  /// A group with no classes in the test set is absent, not zero.
  std::optional<double> many;
  std::optional<double> medium;
  std::optional<double> few;
};

/// Per-class accuracy averaged within each group; `all` averages every class.
GroupAccuracy groupwise_accuracy(std::span<const int> predictions, std::span<const LabeledImage> test,
                                 const std::map<int, ClassGroup>& group_of_class);
GroupAccuracy groupwise_accuracy(const Classifier& clf, std::span<const LabeledImage> test,
                                 const std::map<int, ClassGroup>& group_of_class);

/// Unweighted mean of per-class F1 over the classes present in `test`.
double macro_f1(std::span<const int> predictions, std::span<const LabeledImage> test);
double macro_f1(const Classifier& clf, std::span<const LabeledImage> test);

/// Mean accuracy of the k worst classes, ties broken by class index.
double worst_k_accuracy(const std::map<int, double>& per_class, int k);
double worst_k_accuracy(const Classifier& clf, std::span<const LabeledImage> test, int k);

struct MetricsReport {
  GroupAccuracy accuracy;
  double macro_f1_id = 0.0;
  std::optional<double> macro_f1_ood;
  std::optional<double> accuracy_ood;
  std::map<int, double> worst_k;
  std::map<int, double> per_class;
};

/// Accuracy and worst-k on the ID test split, macro-F1 on both splits.
MetricsReport evaluate(const Classifier& clf, const DataBundle& bundle, std::span<const int> worst_ks = {});

/// Flat metric name -> value view; absent fields are omitted.
std::map<std::string, double> flatten(const MetricsReport& report);

struct ArmSpec {
  std::string name;
  std::function<MetricsReport(std::uint64_t seed)> run;
};

struct ArmRun {
  std::string arm;
  std::uint64_t seed = 0;
  std::optional<MetricsReport> metrics;
  std::string error;
};

/// Runs every arm for every seed. A failing (arm, seed) is recorded and the
/// battery continues. Results are ordered arm-major regardless of workers.
std::vector<ArmRun> run_ablation_battery(std::span<const ArmSpec> arms, std::span<const std::uint64_t> seeds,
                                         int workers = 1);

struct MetricSummary {
  std::string arm;
  std::string metric;
  double mean = 0.0;
  /// Sample standard deviation (n - 1); 0 for a single run.
  double stddev = 0.0;
  std::size_t n = 0;
};

std::vector<MetricSummary> aggregate(std::span<const ArmRun> runs);
/// Mean of `metric` for `arm`, or nullopt if it never succeeded.
std::optional<MetricSummary> find_summary(std::span<const MetricSummary> summary, const std::string& arm,
                                          const std::string& metric);

/// Columns: arm,seed,metric,value (failures as metric "error").
std::string runs_csv(std::span<const ArmRun> runs);
/// Columns: arm,metric,mean,stddev,n.
std::string summary_csv(std::span<const MetricSummary> summary);

}  // namespace discl
