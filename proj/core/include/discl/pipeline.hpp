#pragma once

// Staged experiment runner. Every stage reads its inputs from the run
// directory and writes its artifacts there; `manifest.txt` records a
// fingerprint and the SHA-256 of every artifact so a resumed run reuses
// completed stages and two runs can be compared hash for hash.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "discl/config.hpp"
#include "discl/eval.hpp"

namespace discl {

enum class Stage {
  gen_data,
  train_diffusion,
  pretrain_classifier,
  identify_hard,
  gen_spectrum,
  filter,
  curriculum_train,
  evaluate,
};

inline constexpr int kStageCount = 8;

std::string to_string(Stage s);
Stage parse_stage(std::string_view name);
const std::vector<Stage>& all_stages();

/// Version string folded into every stage fingerprint.
inline constexpr std::string_view kCodeVersion = "discl-0.1.0";

/// A stage failed; names the stage and the cause.
class StageError : public std::runtime_error {
 public:
  StageError(Stage stage, const std::string& cause)
      : std::runtime_error("stage " + to_string(stage) + " failed: " + cause), stage_(stage) {}
  Stage stage() const noexcept { return stage_; }

 private:
  Stage stage_;
};

struct RunOptions {
  std::filesystem::path run_dir;
  int workers = 1;
  /// Reuse stages whose fingerprint and artifact hashes still match.
  bool resume = false;
};

struct PipelineResult {
  std::filesystem::path run_dir;
  std::vector<Stage> executed;
  std::vector<Stage> reused;
};

/// Runs every stage in order.
PipelineResult run_pipeline(const ExperimentConfig& cfg, const RunOptions& opts);

/// Runs stages first..last. Every stage before `first` must already be
/// complete and intact in the run directory.
PipelineResult run_stages(const ExperimentConfig& cfg, const RunOptions& opts, Stage first, Stage last);

/// Artifact paths (relative to the run directory) a stage writes.
std::vector<std::string> stage_outputs(Stage s);

/// Arm names for the configured ablation families, in battery order.
std::vector<std::string> expand_ablation_arms(const ExperimentConfig& cfg);

struct AblationResult {
  std::vector<ArmRun> runs;
  std::vector<MetricSummary> summary;
  /// Headline metric: accuracy_few (long-tail) or macro_f1_ood (low-quality).
  std::string metric;
  std::optional<double> best_fixed_lambda;
};

/// Runs the ablation battery against completed stages through `filter` and
/// writes ablation/runs.csv, ablation/summary.csv and ablation/manifest.txt.
AblationResult run_ablation(const ExperimentConfig& cfg, const RunOptions& opts);

std::string headline_metric(Task task);

}  // namespace discl
