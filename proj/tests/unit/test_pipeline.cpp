#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "discl/pipeline.hpp"

using namespace discl;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ExperimentConfig tiny_config(std::uint64_t seed) {
  auto cfg = preset_config("tiny", Task::longtail);
  cfg.seed = seed;
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("discl_test_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST(Pipeline, StageNames) {
  EXPECT_EQ(all_stages().size(), static_cast<std::size_t>(kStageCount));
  for (Stage s : all_stages()) EXPECT_EQ(parse_stage(to_string(s)), s);
  EXPECT_EQ(to_string(Stage::gen_data), "gen-data");
  EXPECT_THROW(parse_stage("bogus"), std::invalid_argument);
}

TEST(Pipeline, DeterministicAcrossWorkers) {
  const auto cfg = tiny_config(7);
  const auto a = fresh_dir("pipe_a");
  const auto b = fresh_dir("pipe_b");
  const auto ra = run_pipeline(cfg, {a, 1, false});
  const auto rb = run_pipeline(cfg, {b, 3, false});
  EXPECT_EQ(ra.executed.size(), static_cast<std::size_t>(kStageCount));
  EXPECT_EQ(read_file(a / "manifest.txt"), read_file(b / "manifest.txt"));
  for (Stage s : all_stages()) {
    for (const auto& rel : stage_outputs(s)) EXPECT_TRUE(fs::exists(a / rel)) << rel;
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Pipeline, ResumeReexecutesOnlyInvalidatedStage) {
  const auto cfg = tiny_config(8);
  const auto dir = fresh_dir("pipe_resume");
  run_pipeline(cfg, {dir, 2, false});
  const std::string manifest = read_file(dir / "manifest.txt");

  const auto all_reused = run_pipeline(cfg, {dir, 2, true});
  EXPECT_TRUE(all_reused.executed.empty());
  EXPECT_EQ(all_reused.reused.size(), static_cast<std::size_t>(kStageCount));

  fs::remove(dir / "eval" / "metrics.csv");
  const auto resumed = run_pipeline(cfg, {dir, 2, true});
  EXPECT_EQ(resumed.executed, (std::vector<Stage>{Stage::evaluate}));
  EXPECT_EQ(read_file(dir / "manifest.txt"), manifest);

  // A changed curriculum setting invalidates curriculum-train and evaluate only.
  auto changed = cfg;
  changed.strategy = Strategy::specific_to_diverse;
  const auto partial = run_pipeline(changed, {dir, 2, true});
  EXPECT_EQ(partial.executed, (std::vector<Stage>{Stage::curriculum_train, Stage::evaluate}));
  fs::remove_all(dir);
}

TEST(Pipeline, StandaloneStagesNeedPriorArtifacts) {
  const auto cfg = tiny_config(9);
  const auto dir = fresh_dir("pipe_stages");
  try {
    run_stages(cfg, {dir, 1, false}, Stage::curriculum_train, Stage::evaluate);
    FAIL() << "missing prerequisites accepted";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), Stage::gen_data);
  }
  run_stages(cfg, {dir, 1, false}, Stage::gen_data, Stage::train_diffusion);
  const auto rest = run_stages(cfg, {dir, 1, false}, Stage::pretrain_classifier, Stage::evaluate);
  EXPECT_EQ(rest.executed.size(), 6u);
  const auto full = fresh_dir("pipe_stages_full");
  run_pipeline(cfg, {full, 1, false});
  EXPECT_EQ(read_file(dir / "manifest.txt"), read_file(full / "manifest.txt"));
  fs::remove_all(dir);
  fs::remove_all(full);
}

TEST(Ablation, DegenerateArmsCoincide) {
  auto cfg = tiny_config(10);
  cfg.ablation_arms = {"baseline", "scale", "fixed", "text_only"};
  cfg.ablation_scales = {0};
  cfg.ablation_seeds = {1, 2};
  const auto dir = fresh_dir("pipe_ablation");
  run_stages(cfg, {dir, 2, false}, Stage::gen_data, Stage::filter);
  const auto result = run_ablation(cfg, {dir, 2, false});
  EXPECT_EQ(result.metric, "accuracy_few");
  auto metrics_of = [&](const std::string& arm, std::uint64_t seed) {
    for (const auto& r : result.runs) {
      if (r.arm == arm && r.seed == seed) {
        EXPECT_TRUE(r.metrics.has_value()) << arm << ": " << r.error;
        return r.metrics ? flatten(*r.metrics) : std::map<std::string, double>{};
      }
    }
    ADD_FAILURE() << "arm " << arm << " missing";
    return std::map<std::string, double>{};
  };
  const auto arms = expand_ablation_arms(cfg);
  const std::string fixed_zero = arms[1 + 1];
  ASSERT_TRUE(fixed_zero.starts_with("fixed_")) << fixed_zero;
  for (std::uint64_t seed : {1u, 2u}) {
    EXPECT_EQ(metrics_of("scale_0", seed), metrics_of("baseline", seed));
    EXPECT_EQ(metrics_of(fixed_zero, seed), metrics_of("text_only", seed));
  }
  EXPECT_TRUE(result.best_fixed_lambda.has_value());
  EXPECT_TRUE(fs::exists(dir / "ablation" / "runs.csv"));
  EXPECT_TRUE(fs::exists(dir / "ablation" / "summary.csv"));
  EXPECT_TRUE(fs::exists(dir / "ablation" / "manifest.txt"));
  fs::remove_all(dir);
}

TEST(Ablation, ArmExpansion) {
  auto cfg = tiny_config(1);
  cfg.ablation_arms = {"baseline", "fixed", "threshold", "scale"};
  cfg.ablation_thresholds = {0.25, 0.3};
  cfg.ablation_scales = {0, 3};
  const auto arms = expand_ablation_arms(cfg);
  EXPECT_EQ(arms.size(), 1 + cfg.grid.size() + 2 + 2);
  EXPECT_EQ(arms.front(), "baseline");
  EXPECT_EQ(arms.back(), "scale_3");
  EXPECT_TRUE(std::find(arms.begin(), arms.end(), "threshold_0.25") != arms.end());
}
