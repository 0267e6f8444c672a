#pragma once

// Experiment configuration: a flat `key = value` document with dotted keys.
// Presets supply every default; the file overrides individual keys. Unknown
// keys are errors.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "discl/classifier.hpp"
#include "discl/curriculum.hpp"
#include "discl/data.hpp"
#include "discl/diffusion.hpp"
#include "discl/noise_model.hpp"
#include "discl/spectrum.hpp"

namespace discl {

enum class Task { longtail, lowquality };
enum class HardRule { tail, probability };

std::string to_string(Task t);
std::string to_string(HardRule r);

/// Configuration problem tied to one key ("" when not key-specific).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message) : std::runtime_error(message), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

struct ExperimentConfig {
  Task task = Task::longtail;
  /// Name of the preset the defaults came from: longtail, lowquality or tiny.
  std::string preset = "longtail";
  std::uint64_t seed = 0;
  std::string out_dir = "runs/longtail";

  DatasetSpec data;

  int schedule_steps = 200;
  double beta_min = 1e-4;
  double beta_max = 0.02;

  int diffusion_corpus_per_class = 200;
  NoiseArchitecture diffusion_arch;
  int diffusion_epochs = 100;
  int diffusion_batch_size = 64;
  double diffusion_learn_rate = 1e-3;
  double cond_dropout = 0.1;

  double guidance_w = 3.0;
  Sampler sampler = Sampler::ancestral;
  int ddim_steps = 20;

  ClassifierArchitecture classifier_arch;
  int classifier_batch_size = 32;
  double classifier_learn_rate = 1e-2;
  double classifier_momentum = 0.9;
  int pretrain_epochs = 5;

  HardRule hard_rule = HardRule::tail;
  double h_hard = 0.1;

  GuidanceGrid grid = GuidanceGrid::longtail_preset();
  /// Seeds per (hard sample, level), m.
  int seeds_per_level = 8;

  int filter_corpus_per_class = 50;
  int filter_epochs = 10;
  /// Absent means "auto": calibrated as a quantile of clean-render scores.
  std::optional<double> h_filter;
  double filter_quantile = 0.1;

  Strategy strategy = Strategy::diverse_to_specific;
  double fixed_lambda = 0.0;
  int epochs = 30;
  int curriculum_epochs = 24;
  double probe_fraction = 0.1;
  int validation_per_lambda = 16;
  bool rollback_probe = false;
  bool undersample = true;
  double tail_fraction = 0.136;
  int scale = 3;

  std::vector<int> worst_k{1, 3};

  std::vector<std::uint64_t> ablation_seeds{1, 2, 3, 4, 5};
  /// Arm families; see ablation_arm_names().
  std::vector<std::string> ablation_arms;
  std::vector<double> ablation_thresholds{0.23, 0.25, 0.27, 0.30, 0.32};
  std::vector<int> ablation_scales{0, 1, 2, 3, 4, 6};

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Known arm families: baseline, diverse_to_specific, specific_to_diverse,
/// random, all_levels, adaptive, fixed, text_only, threshold, scale.
const std::vector<std::string>& ablation_arm_names();

/// Complete defaults of a preset. Throws ConfigError for an unknown name.
ExperimentConfig preset_config(std::string_view preset, Task task);

/// Throws ConfigError naming the first offending key.
void validate(const ExperimentConfig& cfg);

/// Requires `task` and `seed`; `preset` defaults to the task name.
ExperimentConfig parse_config_text(std::string_view text, std::string_view source_name = "<config>");
ExperimentConfig parse_config(const std::filesystem::path& path);

/// Every key, in a form parse_config_text reads back to an equal config.
std::string serialize_config(const ExperimentConfig& cfg);

/// Serialization without out_dir: the part of the config that determines results.
std::string config_fingerprint_text(const ExperimentConfig& cfg);

CurriculumConfig curriculum_config(const ExperimentConfig& cfg, const std::set<int>& tail_classes);
TrainConfig train_config(const ExperimentConfig& cfg, std::uint64_t seed);
VarianceSchedule make_schedule(const ExperimentConfig& cfg);
/// Architectures with image size and class count taken from the dataset settings.
NoiseArchitecture noise_architecture(const ExperimentConfig& cfg);
ClassifierArchitecture classifier_architecture(const ExperimentConfig& cfg);

}  // namespace discl
