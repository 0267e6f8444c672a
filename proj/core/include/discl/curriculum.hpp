#pragma once

// Stage-wise training over the spectrum: fixed guidance schedules and the
// adaptive schedule that probes which level helps most at each stage.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "discl/classifier.hpp"
#include "discl/sample.hpp"
#include "discl/spectrum.hpp"

namespace discl {

enum class Strategy { diverse_to_specific, specific_to_diverse, random, fixed, all_levels, adaptive };

std::string to_string(Strategy s);
Strategy parse_strategy(std::string_view text);

struct CurriculumConfig {
  Strategy strategy = Strategy::diverse_to_specific;
  GuidanceGrid grid = GuidanceGrid::longtail_preset();
  /// Level used by Strategy::fixed; must be in the grid.
  double fixed_lambda = 0.0;
  /// Epochs E, curriculum epochs E_CL, optimizer settings and seed.
  TrainConfig train;
  /// |D| of the adaptive probe as a fraction of |D_all|.
  double probe_fraction = 0.1;
  int validation_per_lambda = 16;
  /// Restore the parameters after the probe measurement instead of keeping
  /// the probe update.
  bool rollback_probe = false;
  /// Long-tail protocol: undersample non-tail reals in every curriculum stage.
  bool undersample = false;
  double tail_fraction = 0.136;
  std::set<int> tail_classes;
  /// At most this many kept seeds per (source, level) enter a stage; -1 keeps all.
  int scale = -1;
};

void validate(const CurriculumConfig& cfg);

/// Reals and spectrum shared by every stage. `reals` is D_all in canonical
/// order; `hard_ids` marks D_h inside it. The spectrum is already filtered and
/// must not contain validation entries.
struct CurriculumData {
  Dataset reals;
  std::set<std::uint64_t> hard_ids;
  Spectrum spectrum;
};

/// Levels in ascending order, each repeated floor(E_CL / |grid|) times, the
/// remainder going to the earliest levels.
std::vector<double> guidance_schedule_linear(const GuidanceGrid& grid, int curriculum_epochs);

/// Per-epoch levels of a non-adaptive strategy; all_levels yields every level
/// for every epoch.
std::vector<std::vector<double>> nonadaptive_schedule(const CurriculumConfig& cfg);

struct StageData {
  Dataset data;
  std::size_t synthetic = 0;
  std::size_t real = 0;
  bool pool_exhausted = false;
};

/// Kept spectrum entries at `levels` (scale-capped) together with the non-hard
/// reals and, if `include_hard`, the hard reals. Undersampling, when enabled,
/// applies only to stages that contain synthetic entries and is seeded from
/// (seed, epoch). Reals precede synthetic entries.
StageData stage_dataset(const CurriculumData& data, std::span<const double> levels, const CurriculumConfig& cfg,
                        bool include_hard, int epoch);

/// One-level convenience form: S_lambda u D_nh u D_h.
StageData stage_dataset_nonadaptive(double lambda, const CurriculumData& data, const CurriculumConfig& cfg,
                                    int epoch);

/// Per-level synthetic subsets held out from training.
struct GuidanceValidationSet {
  std::vector<double> levels;
  std::vector<Dataset> subsets;

  std::set<std::uint64_t> ids() const;
};

/// Draws `per_level` kept entries per grid level without replacement.
GuidanceValidationSet make_validation_set(const Spectrum& spectrum, const GuidanceGrid& grid, int per_level,
                                          std::uint64_t seed);

/// Spectrum without the entries whose sample ids are in `excluded`.
Spectrum without_entries(const Spectrum& spectrum, const std::set<std::uint64_t>& excluded);

double measure_confidence(const Classifier& clf, std::span<const LabeledImage> subset);

struct ProgressReport {
  int epoch = 0;
  std::map<double, double> p_before;
  std::map<double, double> p_after;
  double chosen = 0.0;
  bool tie_broken = false;
};

/// Largest p_after - p_before; ties go to the smallest level.
std::pair<double, bool> select_level(const std::map<double, double>& p_before,
                                     const std::map<double, double>& p_after);

/// Measures confidence on V, trains one epoch on a seeded uniform sample of
/// `probe_size` reals, measures again and selects the level. The probe update
/// is kept unless cfg.rollback_probe.
ProgressReport probe_and_select(Classifier& clf, const GuidanceValidationSet& validation,
                                std::span<const LabeledImage> reals, std::size_t probe_size,
                                const CurriculumConfig& cfg, int epoch);

struct StageLog {
  int epoch = 0;
  std::string phase;  // "curriculum" or "cooldown"
  std::vector<double> levels;
  std::size_t synthetic = 0;
  std::size_t real = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  std::optional<ProgressReport> progress;
};

std::vector<StageLog> run_nonadaptive(Classifier& clf, const CurriculumConfig& cfg, const CurriculumData& data);
std::vector<StageLog> run_adaptive(Classifier& clf, const CurriculumConfig& cfg, const CurriculumData& data,
                                   const GuidanceValidationSet& validation);
/// Dispatches on cfg.strategy.
std::vector<StageLog> run_curriculum(Classifier& clf, const CurriculumConfig& cfg, const CurriculumData& data,
                                     const GuidanceValidationSet& validation);

/// One JSON object per line.
std::string stage_logs_jsonl(const std::vector<StageLog>& logs, Strategy strategy);

}  // namespace discl
