#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "discl/eval.hpp"
#include "discl/random.hpp"

using namespace discl;

namespace {

Dataset balanced_test(int classes, int per_class) {
  Dataset test;
  std::uint32_t index = 0;
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      LabeledImage s;
      s.image = Image(1, 1);
      s.label = c;
      s.sample_id = make_sample_id(Split::id_test, c, index++);
      test.push_back(s);
    }
  }
  return test;
}

// Independent confusion-matrix oracle for macro-F1.
double oracle_macro_f1(const std::vector<int>& pred, const Dataset& test, int classes) {
  std::vector<std::vector<int>> cm(classes, std::vector<int>(classes, 0));
  for (std::size_t i = 0; i < test.size(); ++i) ++cm[test[i].label][pred[i]];
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    int support = 0, predicted = 0;
    for (int j = 0; j < classes; ++j) {
      support += cm[c][j];
      predicted += cm[j][c];
    }
    if (support == 0) continue;
    ++present;
    const double tp = cm[c][c];
    sum += tp == 0 ? 0.0 : 2.0 * tp / (support + predicted);
  }
  return sum / present;
}

std::map<int, ClassGroup> groups10() {
  std::map<int, ClassGroup> g;
  for (int c = 0; c < 10; ++c) g[c] = c < 4 ? ClassGroup::many : c < 7 ? ClassGroup::medium : ClassGroup::few;
  return g;
}

}  // namespace

TEST(GroupwiseAccuracy, PerfectAndManyOnly) {
  const Dataset test = balanced_test(10, 5);
  std::vector<int> pred;
  for (const auto& s : test) pred.push_back(s.label);
  const auto perfect = groupwise_accuracy(pred, test, groups10());
  EXPECT_EQ(perfect.all, 1.0);
  EXPECT_EQ(perfect.many, 1.0);
  EXPECT_EQ(perfect.medium, 1.0);
  EXPECT_EQ(perfect.few, 1.0);
  for (std::size_t i = 0; i < test.size(); ++i) pred[i] = test[i].label < 4 ? test[i].label : 0;
  const auto many_only = groupwise_accuracy(pred, test, groups10());
  EXPECT_EQ(many_only.few, 0.0);
  EXPECT_EQ(many_only.many, 1.0);
  EXPECT_NEAR(many_only.all, 0.4, 1e-12);
}

TEST(GroupwiseAccuracy, UniformRandomNearChance) {
  const Dataset test = balanced_test(10, 50);
  Rng rng(4);
  std::vector<int> pred;
  for (std::size_t i = 0; i < test.size(); ++i) pred.push_back(static_cast<int>(rng.below(10)));
  EXPECT_NEAR(groupwise_accuracy(pred, test, groups10()).all, 0.1, 0.03);
}

TEST(GroupwiseAccuracy, EmptyGroupAbsent) {
  const Dataset test = balanced_test(4, 3);
  std::vector<int> pred(test.size(), 0);
  const auto g = groupwise_accuracy(pred, test, groups10());
  EXPECT_TRUE(g.many.has_value());
  EXPECT_FALSE(g.medium.has_value());
  EXPECT_FALSE(g.few.has_value());
}

TEST(GroupwiseAccuracy, BruteForceAndPermutation) {
  const Dataset test = balanced_test(10, 7);
  Rng rng(8);
  std::vector<int> pred;
  for (const auto& s : test) pred.push_back(rng.bernoulli(0.6) ? s.label : static_cast<int>(rng.below(10)));
  const auto g = groupwise_accuracy(pred, test, groups10());
  std::vector<double> acc(10, 0.0);
  for (std::size_t i = 0; i < test.size(); ++i) acc[test[i].label] += pred[i] == test[i].label ? 1.0 / 7.0 : 0.0;
  double many = 0, medium = 0, few = 0, all = 0;
  for (int c = 0; c < 10; ++c) {
    all += acc[c] / 10;
    (c < 4 ? many : c < 7 ? medium : few) += acc[c] / (c < 4 ? 4 : 3);
  }
  EXPECT_NEAR(g.all, all, 1e-12);
  EXPECT_NEAR(*g.many, many, 1e-12);
  EXPECT_NEAR(*g.medium, medium, 1e-12);
  EXPECT_NEAR(*g.few, few, 1e-12);

  std::vector<std::size_t> order(test.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  Dataset shuffled;
  std::vector<int> shuffled_pred;
  for (std::size_t i : order) {
    shuffled.push_back(test[i]);
    shuffled_pred.push_back(pred[i]);
  }
  const auto h = groupwise_accuracy(shuffled_pred, shuffled, groups10());
  EXPECT_NEAR(h.all, g.all, 1e-12);
  EXPECT_NEAR(*h.few, *g.few, 1e-12);
  EXPECT_NEAR(macro_f1(shuffled_pred, shuffled), macro_f1(pred, test), 1e-12);
}

TEST(MacroF1, Examples) {
  const Dataset test = balanced_test(2, 10);
  std::vector<int> pred;
  for (const auto& s : test) pred.push_back(s.label);
  EXPECT_EQ(macro_f1(pred, test), 1.0);
  std::fill(pred.begin(), pred.end(), 0);
  EXPECT_NEAR(macro_f1(pred, test), (2.0 / 3.0 + 0.0) / 2.0, 1e-12);
  EXPECT_THROW(macro_f1(std::vector<int>{}, Dataset{}), std::invalid_argument);
}

TEST(MacroF1, ConfusionMatrixOracle) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const Dataset test = balanced_test(6, 4 + trial % 5);
    std::vector<int> pred;
    for (const auto& s : test) pred.push_back(rng.bernoulli(0.5) ? s.label : static_cast<int>(rng.below(8)));
    // Predictions of classes absent from the test set count as errors only.
    EXPECT_NEAR(macro_f1(pred, test), oracle_macro_f1(pred, test, 8), 1e-9);
  }
}

TEST(WorstK, Definitions) {
  const std::map<int, double> per{{0, 0.9}, {1, 0.2}, {2, 0.5}, {3, 0.2}};
  EXPECT_NEAR(worst_k_accuracy(per, 4), (0.9 + 0.2 + 0.5 + 0.2) / 4, 1e-12);
  EXPECT_EQ(worst_k_accuracy(per, 1), 0.2);
  double prev = 0.0;
  for (int k = 1; k <= 4; ++k) {
    const double v = worst_k_accuracy(per, k);
    EXPECT_GE(v, prev);
    prev = v;
  }
  EXPECT_THROW(worst_k_accuracy(per, 0), std::invalid_argument);
  EXPECT_THROW(worst_k_accuracy(per, 5), std::invalid_argument);
}

TEST(Battery, FailuresRecordedAndOrdered) {
  std::vector<ArmSpec> arms;
  arms.push_back({"good", [](std::uint64_t seed) {
                    MetricsReport r;
                    r.accuracy.all = static_cast<double>(seed) / 10.0;
                    r.macro_f1_id = 0.5;
                    return r;
                  }});
  arms.push_back({"bad", [](std::uint64_t seed) -> MetricsReport {
                    if (seed == 2) throw std::runtime_error("boom");
                    MetricsReport r;
                    r.accuracy.all = 1.0;
                    return r;
                  }});
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const auto serial = run_ablation_battery(arms, seeds, 1);
  const auto parallel = run_ablation_battery(arms, seeds, 4);
  ASSERT_EQ(serial.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(serial[i].arm, i < 3 ? "good" : "bad");
    EXPECT_EQ(serial[i].seed, seeds[i % 3]);
    EXPECT_EQ(serial[i].arm, parallel[i].arm);
    EXPECT_EQ(serial[i].seed, parallel[i].seed);
    EXPECT_EQ(serial[i].metrics.has_value(), parallel[i].metrics.has_value());
  }
  EXPECT_FALSE(serial[4].metrics.has_value());
  EXPECT_NE(serial[4].error.find("boom"), std::string::npos);
  const std::string csv = runs_csv(serial);
  EXPECT_EQ(csv.rfind("arm,seed,metric,value\n", 0), 0u);
  EXPECT_NE(csv.find("bad,2,error,"), std::string::npos);
}

TEST(Battery, AggregationOracle) {
  Rng rng(12);
  std::vector<ArmRun> runs;
  std::map<std::string, std::vector<double>> values;
  for (const char* arm : {"a", "b"}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      MetricsReport r;
      r.accuracy.all = rng.uniform();
      values[arm].push_back(r.accuracy.all);
      runs.push_back({arm, seed, r, ""});
    }
  }
  runs.push_back({"a", 6, std::nullopt, "failed"});
  const auto summary = aggregate(runs);
  for (const char* arm : {"a", "b"}) {
    const auto s = find_summary(summary, arm, "accuracy_all");
    ASSERT_TRUE(s.has_value());
    const auto& v = values[arm];
    double mean = 0.0;
    for (double x : v) mean += x / 5.0;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean) / 4.0;
    EXPECT_EQ(s->n, 5u);
    EXPECT_NEAR(s->mean, mean, 1e-12);
    EXPECT_NEAR(s->stddev, std::sqrt(var), 1e-12);
  }
  EXPECT_FALSE(find_summary(summary, "c", "accuracy_all").has_value());
  EXPECT_EQ(summary_csv(summary).rfind("arm,metric,mean,stddev,n\n", 0), 0u);
}

TEST(Flatten, OmitsAbsentFields) {
  MetricsReport r;
  r.accuracy.all = 0.5;
  r.accuracy.few = 0.25;
  r.macro_f1_id = 0.4;
  r.worst_k[3] = 0.1;
  const auto flat = flatten(r);
  EXPECT_EQ(flat.at("accuracy_all"), 0.5);
  EXPECT_EQ(flat.at("accuracy_few"), 0.25);
  EXPECT_EQ(flat.count("accuracy_many"), 0u);
  EXPECT_EQ(flat.count("macro_f1_ood"), 0u);
}
