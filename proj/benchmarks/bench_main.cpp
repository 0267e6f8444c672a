#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "discl/classifier.hpp"
#include "discl/data.hpp"
#include "discl/diffusion.hpp"
#include "discl/noise_model.hpp"
#include "discl/random.hpp"
#include "discl/schedule.hpp"
#include "discl/spectrum.hpp"

using namespace discl;

namespace {

const DataBundle& bench_data() {
  static const DataBundle bundle = [] {
    DatasetSpec spec;
    spec.head_count = 100;
    spec.test_per_class = 4;
    spec.seed = 1;
    return make_longtail_dataset(spec);
  }();
  return bundle;
}

}  // namespace

// Guided generation of a batch of images at one guidance level.
static void BM_GenerateGuidedBatch(benchmark::State& state) {
  const auto schedule = VarianceSchedule::linear(200, 1e-4, 0.02);
  const NoiseModel model(NoiseArchitecture{}, 1);
  const auto& data = bench_data().train;
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<GuidedJob> jobs;
  for (std::size_t i = 0; i < n; ++i) jobs.push_back({&data[i].image, Condition::of_class(data[i].label), i + 1});
  GenerationConfig cfg;
  cfg.lambda = GuidanceLevel{0.5};
  for (auto _ : state) benchmark::DoNotOptimize(generate_guided_batch(model, jobs, cfg, schedule));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_GenerateGuidedBatch)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

// One denoising forward pass with both guidance branches.
static void BM_CfgNoise(benchmark::State& state) {
  const NoiseModel model(NoiseArchitecture{}, 2);
  const auto rows = state.range(0);
  Batch z(rows, model.dim());
  Rng rng(3);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  std::vector<Condition> conds(static_cast<std::size_t>(rows), Condition::of_class(1));
  for (auto _ : state) benchmark::DoNotOptimize(cfg_noise(model, z, 100, conds, 3.0));
  state.SetItemsProcessed(state.iterations() * rows);
}
BENCHMARK(BM_CfgNoise)->Arg(1)->Arg(64);

// One classifier training epoch over the long-tail train split.
static void BM_ClassifierEpoch(benchmark::State& state) {
  const auto& data = bench_data().train;
  TrainConfig cfg;
  cfg.seed = 4;
  for (auto _ : state) {
    state.PauseTiming();
    Classifier clf(ClassifierArchitecture{}, 5);
    state.ResumeTiming();
    benchmark::DoNotOptimize(train_epochs(clf, data, cfg, 1));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(data.size()));
}
BENCHMARK(BM_ClassifierEpoch)->Unit(benchmark::kMillisecond);

// Fidelity scoring of the test split against class references.
static void BM_FidelityScores(benchmark::State& state) {
  const auto& data = bench_data().id_test;
  FilterModel filter{Classifier(ClassifierArchitecture{}, 6), nn::RowMat<double>::Ones(10, 32) / std::sqrt(32.0)};
  for (auto _ : state) benchmark::DoNotOptimize(fidelity_scores(filter, data));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(data.size()));
}
BENCHMARK(BM_FidelityScores);

BENCHMARK_MAIN();
