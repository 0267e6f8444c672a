#include "discl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "discl/io.hpp"
#include "discl/parallel.hpp"

namespace discl {

std::map<int, double> per_class_accuracy(std::span<const int> predictions, std::span<const LabeledImage> test) {
  if (predictions.size() != test.size()) throw std::invalid_argument("prediction count differs from test size");
  std::map<int, std::pair<std::size_t, std::size_t>> tally;  // class -> (correct, total)
  for (std::size_t i = 0; i < test.size(); ++i) {
    auto& [correct, total] = tally[test[i].label];
    correct += predictions[i] == test[i].label ? 1 : 0;
    ++total;
  }
  std::map<int, double> out;
  for (const auto& [cls, ct] : tally) out[cls] = static_cast<double>(ct.first) / static_cast<double>(ct.second);
  return out;
}

GroupAccuracy groupwise_accuracy(std::span<const int> predictions, std::span<const LabeledImage> test,
                                 const std::map<int, ClassGroup>& group_of_class) {
  if (test.empty()) throw std::invalid_argument("groupwise_accuracy: empty test set");
  const auto per_class = per_class_accuracy(predictions, test);
  double all = 0.0;
  std::map<ClassGroup, std::pair<double, int>> sums;
  for (const auto& [cls, acc] : per_class) {
    all += acc;
    const auto it = group_of_class.find(cls);
    if (it == group_of_class.end()) continue;
    sums[it->second].first += acc;
    sums[it->second].second += 1;
  }
  GroupAccuracy out;
  out.all = all / static_cast<double>(per_class.size());
  auto mean_of = [&](ClassGroup g) -> std::optional<double> {
    const auto it = sums.find(g);
    if (it == sums.end()) return std::nullopt;
    return it->second.first / it->second.second;
  };
  out.many = mean_of(ClassGroup::many);
  out.medium = mean_of(ClassGroup::medium);
  out.few = mean_of(ClassGroup::few);
  return out;
}

GroupAccuracy groupwise_accuracy(const Classifier& clf, std::span<const LabeledImage> test,
                                 const std::map<int, ClassGroup>& group_of_class) {
  const auto preds = predict_labels(clf, test);
  return groupwise_accuracy(preds, test, group_of_class);
}

double macro_f1(std::span<const int> predictions, std::span<const LabeledImage> test) {
  if (test.empty()) throw std::invalid_argument("macro_f1: empty test set");
  if (predictions.size() != test.size()) throw std::invalid_argument("prediction count differs from test size");
  std::map<int, std::size_t> tp;
  std::map<int, std::size_t> support;
  std::map<int, std::size_t> predicted;
  for (std::size_t i = 0; i < test.size(); ++i) {
    support[test[i].label] += 1;
    predicted[predictions[i]] += 1;
    if (predictions[i] == test[i].label) tp[test[i].label] += 1;
  }
  double sum = 0.0;
  for (const auto& [cls, n] : support) {
    const double t = static_cast<double>(tp[cls]);
    const double denom = static_cast<double>(n) + static_cast<double>(predicted[cls]);
    sum += denom > 0.0 ? 2.0 * t / denom : 0.0;
  }
  return sum / static_cast<double>(support.size());
}

double macro_f1(const Classifier& clf, std::span<const LabeledImage> test) {
  const auto preds = predict_labels(clf, test);
  return macro_f1(preds, test);
}

double worst_k_accuracy(const std::map<int, double>& per_class, int k) {
  if (k < 1 || k > static_cast<int>(per_class.size())) {
    throw std::invalid_argument("worst_k_accuracy: k must lie in [1, " + std::to_string(per_class.size()) + "]");
  }
  std::vector<std::pair<double, int>> order;
  for (const auto& [cls, acc] : per_class) order.emplace_back(acc, cls);
  std::sort(order.begin(), order.end());
  double sum = 0.0;
  for (int i = 0; i < k; ++i) sum += order[static_cast<std::size_t>(i)].first;
  return sum / k;
}

double worst_k_accuracy(const Classifier& clf, std::span<const LabeledImage> test, int k) {
  const auto preds = predict_labels(clf, test);
  return worst_k_accuracy(per_class_accuracy(preds, test), k);
}

MetricsReport evaluate(const Classifier& clf, const DataBundle& bundle, std::span<const int> worst_ks) {
  MetricsReport report;
  const auto preds = predict_labels(clf, bundle.id_test);
  report.accuracy = groupwise_accuracy(preds, bundle.id_test, bundle.group_of_class);
  report.macro_f1_id = macro_f1(preds, bundle.id_test);
  report.per_class = per_class_accuracy(preds, bundle.id_test);
  for (int k : worst_ks) report.worst_k[k] = worst_k_accuracy(report.per_class, k);
  if (!bundle.ood_test.empty()) {
    const auto ood = predict_labels(clf, bundle.ood_test);
    report.macro_f1_ood = macro_f1(ood, bundle.ood_test);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ood.size(); ++i) correct += ood[i] == bundle.ood_test[i].label ? 1 : 0;
    report.accuracy_ood = static_cast<double>(correct) / static_cast<double>(ood.size());
  }
  return report;
}

std::map<std::string, double> flatten(const MetricsReport& report) {
  std::map<std::string, double> out;
  out["accuracy_all"] = report.accuracy.all;
  if (report.accuracy.many) out["accuracy_many"] = *report.accuracy.many;
  if (report.accuracy.medium) out["accuracy_medium"] = *report.accuracy.medium;
  if (report.accuracy.few) out["accuracy_few"] = *report.accuracy.few;
  out["macro_f1_id"] = report.macro_f1_id;
  if (report.macro_f1_ood) out["macro_f1_ood"] = *report.macro_f1_ood;
  if (report.accuracy_ood) out["accuracy_ood"] = *report.accuracy_ood;
  for (const auto& [k, v] : report.worst_k) out["worst_" + std::to_string(k)] = v;
  return out;
}

std::vector<ArmRun> run_ablation_battery(std::span<const ArmSpec> arms, std::span<const std::uint64_t> seeds,
                                         int workers) {
  std::vector<ArmRun> runs(arms.size() * seeds.size());
  parallel_for(runs.size(), workers, [&](std::size_t i) {
    const auto& arm = arms[i / seeds.size()];
    auto& run = runs[i];
    run.arm = arm.name;
    run.seed = seeds[i % seeds.size()];
    try {
      run.metrics = arm.run(run.seed);
    } catch (const std::exception& e) {
      run.error = e.what();
    }
  });
  return runs;
}

std::vector<MetricSummary> aggregate(std::span<const ArmRun> runs) {
  std::vector<std::string> arm_order;
  std::map<std::string, std::map<std::string, std::vector<double>>> values;
  for (const auto& run : runs) {
    if (std::find(arm_order.begin(), arm_order.end(), run.arm) == arm_order.end()) arm_order.push_back(run.arm);
    if (!run.metrics) continue;
    for (const auto& [name, v] : flatten(*run.metrics)) values[run.arm][name].push_back(v);
  }
  std::vector<MetricSummary> out;
  for (const auto& arm : arm_order) {
    for (const auto& [metric, xs] : values[arm]) {
      MetricSummary s;
      s.arm = arm;
      s.metric = metric;
      s.n = xs.size();
      for (double x : xs) s.mean += x;
      s.mean /= static_cast<double>(xs.size());
      if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
      }
      out.push_back(s);
    }
  }
  return out;
}

std::optional<MetricSummary> find_summary(std::span<const MetricSummary> summary, const std::string& arm,
                                          const std::string& metric) {
  for (const auto& s : summary) {
    if (s.arm == arm && s.metric == metric) return s;
  }
  return std::nullopt;
}

namespace {

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace

std::string runs_csv(std::span<const ArmRun> runs) {
  std::string out = "arm,seed,metric,value\n";
  for (const auto& run : runs) {
    const std::string prefix = csv_field(run.arm) + "," + std::to_string(run.seed) + ",";
    if (!run.metrics) {
      out += prefix + "error," + csv_field(run.error) + "\n";
      continue;
    }
    for (const auto& [name, v] : flatten(*run.metrics)) out += prefix + name + "," + io::format_double(v) + "\n";
  }
  return out;
}

std::string summary_csv(std::span<const MetricSummary> summary) {
  std::string out = "arm,metric,mean,stddev,n\n";
  for (const auto& s : summary) {
    out += csv_field(s.arm) + "," + s.metric + "," + io::format_double(s.mean) + "," + io::format_double(s.stddev) +
           "," + std::to_string(s.n) + "\n";
  }
  return out;
}

}  // namespace discl
