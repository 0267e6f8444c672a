#include "discl/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "discl/data.hpp"
#include "discl/io.hpp"
#include "discl/random.hpp"

namespace discl {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::diverse_to_specific: return "diverse_to_specific";
    case Strategy::specific_to_diverse: return "specific_to_diverse";
    case Strategy::random: return "random";
    case Strategy::fixed: return "fixed";
    case Strategy::all_levels: return "all_levels";
    case Strategy::adaptive: return "adaptive";
  }
  throw std::invalid_argument("unknown strategy");
}

Strategy parse_strategy(std::string_view text) {
  for (auto s : {Strategy::diverse_to_specific, Strategy::specific_to_diverse, Strategy::random, Strategy::fixed,
                 Strategy::all_levels, Strategy::adaptive}) {
    if (to_string(s) == text) return s;
  }
  throw std::invalid_argument("unknown curriculum strategy '" + std::string(text) + "'");
}

void validate(const CurriculumConfig& cfg) {
  validate(cfg.train);
  if (cfg.strategy == Strategy::fixed && !cfg.grid.contains(cfg.fixed_lambda)) {
    throw std::invalid_argument("fixed strategy level " + io::format_double(cfg.fixed_lambda) + " is not in the grid");
  }
  if (!(cfg.probe_fraction >= 0.0 && cfg.probe_fraction <= 1.0)) {
    throw std::invalid_argument("probe fraction must lie in [0, 1]");
  }
  if (cfg.validation_per_lambda < 1) throw std::invalid_argument("validation set needs at least one entry per level");
  if (cfg.undersample && !(cfg.tail_fraction > 0.0 && cfg.tail_fraction < 1.0)) {
    throw std::invalid_argument("tail fraction must lie in (0, 1)");
  }
  if (cfg.scale < -1) throw std::invalid_argument("synthetic scale must be -1 (all) or non-negative");
}

std::vector<double> guidance_schedule_linear(const GuidanceGrid& grid, int curriculum_epochs) {
  const auto levels = static_cast<int>(grid.size());
  if (curriculum_epochs < levels) {
    throw std::invalid_argument("linear schedule needs at least one curriculum epoch per guidance level");
  }
  const int base = curriculum_epochs / levels;
  const int extra = curriculum_epochs % levels;
  std::vector<double> out;
  for (int i = 0; i < levels; ++i) {
    const int reps = base + (i < extra ? 1 : 0);
    for (int r = 0; r < reps; ++r) out.push_back(grid[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::vector<std::vector<double>> nonadaptive_schedule(const CurriculumConfig& cfg) {
  const int n = cfg.train.curriculum_epochs;
  std::vector<std::vector<double>> out;
  switch (cfg.strategy) {
    case Strategy::diverse_to_specific:
    case Strategy::specific_to_diverse:
    case Strategy::random: {
      if (n == 0) return out;
      auto flat = guidance_schedule_linear(cfg.grid, n);
      if (cfg.strategy == Strategy::specific_to_diverse) std::reverse(flat.begin(), flat.end());
      if (cfg.strategy == Strategy::random) {
        Rng rng(derive_seed(cfg.train.seed, "random-schedule"));
        rng.shuffle(std::span<double>(flat));
      }
      for (double v : flat) out.push_back({v});
      return out;
    }
    case Strategy::fixed:
      return std::vector<std::vector<double>>(static_cast<std::size_t>(n), {cfg.fixed_lambda});
    case Strategy::all_levels:
      return std::vector<std::vector<double>>(static_cast<std::size_t>(n), cfg.grid.levels());
    case Strategy::adaptive:
      break;
  }
  throw std::invalid_argument("adaptive strategy has no fixed schedule");
}

StageData stage_dataset(const CurriculumData& data, std::span<const double> levels, const CurriculumConfig& cfg,
                        bool include_hard, int epoch) {
  StageData out;
  for (const auto& r : data.reals) {
    if (!include_hard && data.hard_ids.contains(r.sample_id)) continue;
    out.data.push_back(r);
  }
  std::map<std::pair<std::uint64_t, std::size_t>, int> taken;
  for (const auto& e : data.spectrum) {
    if (!e.kept) continue;
    if (std::find(levels.begin(), levels.end(), e.lambda) == levels.end()) continue;
    if (cfg.scale >= 0) {
      int& count = taken[{e.source_id, e.level_index}];
      if (count >= cfg.scale) continue;
      ++count;
    }
    out.data.push_back(e.to_labeled());
    ++out.synthetic;
  }
  if (out.synthetic == 0 && !levels.empty() && !data.spectrum.empty() && cfg.scale != 0) {
    spdlog::warn("epoch {}: no kept synthetic entries at the selected level(s); training on reals only", epoch);
  }
  // Undersampling balances synthetic tail data against the head; a stage
  // without synthetic entries is plain real-data training.
  if (cfg.undersample && out.synthetic > 0) {
    auto res = undersample_nontail(out.data, cfg.tail_classes, cfg.tail_fraction,
                                   derive_seed(cfg.train.seed, "undersample", {static_cast<std::uint64_t>(epoch)}));
    out.data = std::move(res.data);
    out.pool_exhausted = res.pool_exhausted;
  }
  out.synthetic = 0;
  for (const auto& s : out.data) (s.origin == Origin::synthetic ? out.synthetic : out.real) += 1;
  return out;
}

StageData stage_dataset_nonadaptive(double lambda, const CurriculumData& data, const CurriculumConfig& cfg,
                                    int epoch) {
  const double levels[] = {lambda};
  return stage_dataset(data, levels, cfg, true, epoch);
}

std::set<std::uint64_t> GuidanceValidationSet::ids() const {
  std::set<std::uint64_t> out;
  for (const auto& subset : subsets) {
    for (const auto& s : subset) out.insert(s.sample_id);
  }
  return out;
}

GuidanceValidationSet make_validation_set(const Spectrum& spectrum, const GuidanceGrid& grid, int per_level,
                                          std::uint64_t seed) {
  if (per_level < 1) throw std::invalid_argument("validation set needs at least one entry per level");
  GuidanceValidationSet out;
  for (std::size_t l = 0; l < grid.size(); ++l) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < spectrum.size(); ++i) {
      if (spectrum[i].kept && spectrum[i].lambda == grid[l]) pool.push_back(i);
    }
    if (pool.size() < static_cast<std::size_t>(per_level)) {
      throw std::runtime_error("guidance level " + io::format_double(grid[l]) + " has only " +
                               std::to_string(pool.size()) + " kept entries for the validation set");
    }
    Rng rng(derive_seed(seed, "validation", {l}));
    rng.shuffle(std::span<std::size_t>(pool));
    pool.resize(static_cast<std::size_t>(per_level));
    std::sort(pool.begin(), pool.end());
    Dataset subset;
    for (std::size_t i : pool) subset.push_back(spectrum[i].to_labeled());
    out.levels.push_back(grid[l]);
    out.subsets.push_back(std::move(subset));
  }
  return out;
}

Spectrum without_entries(const Spectrum& spectrum, const std::set<std::uint64_t>& excluded) {
  Spectrum out;
  for (const auto& e : spectrum) {
    if (!excluded.contains(e.sample_id())) out.push_back(e);
  }
  return out;
}

double measure_confidence(const Classifier& clf, std::span<const LabeledImage> subset) {
  if (subset.empty()) throw std::invalid_argument("measure_confidence: empty subset");
  const auto p = true_class_probability(clf, subset);
  double sum = 0.0;
  for (double v : p) sum += v;
  return sum / static_cast<double>(p.size());
}

std::pair<double, bool> select_level(const std::map<double, double>& p_before,
                                     const std::map<double, double>& p_after) {
  if (p_before.empty() || p_before.size() != p_after.size()) {
    throw std::invalid_argument("select_level: before/after maps must cover the same levels");
  }
  double best_level = 0.0;
  double best = 0.0;
  int winners = 0;
  // std::map iterates in ascending level order, so the first maximum is the
  // smallest level regardless of how the grid was written.
  for (const auto& [level, before] : p_before) {
    const auto it = p_after.find(level);
    if (it == p_after.end()) throw std::invalid_argument("select_level: level missing after probe");
    const double delta = it->second - before;
    if (winners == 0 || delta > best) {
      best = delta;
      best_level = level;
      winners = 1;
    } else if (delta == best) {
      ++winners;
    }
  }
  return {best_level, winners > 1};
}

ProgressReport probe_and_select(Classifier& clf, const GuidanceValidationSet& validation,
                                std::span<const LabeledImage> reals, std::size_t probe_size,
                                const CurriculumConfig& cfg, int epoch) {
  if (probe_size > reals.size()) throw std::invalid_argument("probe set larger than the real pool");
  if (validation.levels.empty()) throw std::invalid_argument("probe_and_select: empty validation set");
  ProgressReport report;
  report.epoch = epoch;
  for (std::size_t l = 0; l < validation.levels.size(); ++l) {
    report.p_before[validation.levels[l]] = measure_confidence(clf, validation.subsets[l]);
  }

  if (probe_size > 0) {
    std::vector<std::size_t> idx(reals.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(cfg.train.seed, "probe", {static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(probe_size);
    std::sort(idx.begin(), idx.end());
    Dataset probe;
    for (std::size_t i : idx) probe.push_back(reals[i]);

    const nn::AlignedVector<float> saved = cfg.rollback_probe ? clf.params().values() : nn::AlignedVector<float>{};
    train_epochs(clf, probe, cfg.train, 1, epoch, 1);
    for (std::size_t l = 0; l < validation.levels.size(); ++l) {
      report.p_after[validation.levels[l]] = measure_confidence(clf, validation.subsets[l]);
    }
    if (cfg.rollback_probe) clf.params().values() = saved;
  } else {
    report.p_after = report.p_before;
  }
  std::tie(report.chosen, report.tie_broken) = select_level(report.p_before, report.p_after);
  return report;
}

namespace {

StageLog train_stage(Classifier& clf, const TrainConfig& train, const Dataset& data, int epoch, std::string phase,
                     std::vector<double> levels, std::size_t synthetic) {
  const auto stats = train_epochs(clf, data, train, 1, epoch, 0);
  StageLog log;
  log.epoch = epoch;
  log.phase = std::move(phase);
  log.levels = std::move(levels);
  log.synthetic = synthetic;
  log.real = data.size() - synthetic;
  log.loss = stats.front().loss;
  log.accuracy = stats.front().accuracy;
  return log;
}

}  // namespace

std::vector<StageLog> run_nonadaptive(Classifier& clf, const CurriculumConfig& cfg, const CurriculumData& data) {
  validate(cfg);
  if (data.reals.empty()) throw std::invalid_argument("run_nonadaptive: no real training data");
  const auto schedule = nonadaptive_schedule(cfg);
  std::vector<StageLog> logs;
  for (int e = 0; e < cfg.train.curriculum_epochs; ++e) {
    const auto& levels = schedule[static_cast<std::size_t>(e)];
    auto stage = stage_dataset(data, levels, cfg, true, e);
    logs.push_back(train_stage(clf, cfg.train, stage.data, e, "curriculum", levels, stage.synthetic));
  }
  for (int e = cfg.train.curriculum_epochs; e < cfg.train.epochs; ++e) {
    logs.push_back(train_stage(clf, cfg.train, data.reals, e, "cooldown", {}, 0));
  }
  return logs;
}

std::vector<StageLog> run_adaptive(Classifier& clf, const CurriculumConfig& cfg, const CurriculumData& data,
                                   const GuidanceValidationSet& validation) {
  validate(cfg);
  if (data.reals.empty()) throw std::invalid_argument("run_adaptive: no real training data");
  const auto overlap = validation.ids();
  for (const auto& r : data.reals) {
    if (overlap.contains(r.sample_id)) throw std::invalid_argument("validation set overlaps the real training data");
  }
  for (const auto& e : data.spectrum) {
    if (overlap.contains(e.sample_id())) throw std::invalid_argument("validation set overlaps the spectrum");
  }
  const auto probe_size = static_cast<std::size_t>(std::llround(cfg.probe_fraction * static_cast<double>(data.reals.size())));
  std::vector<StageLog> logs;
  for (int e = 0; e < cfg.train.curriculum_epochs; ++e) {
    auto report = probe_and_select(clf, validation, data.reals, probe_size, cfg, e);
    const double levels[] = {report.chosen};
    auto stage = stage_dataset(data, levels, cfg, false, e);
    auto log = train_stage(clf, cfg.train, stage.data, e, "curriculum", {report.chosen}, stage.synthetic);
    log.progress = std::move(report);
    logs.push_back(std::move(log));
  }
  for (int e = cfg.train.curriculum_epochs; e < cfg.train.epochs; ++e) {
    logs.push_back(train_stage(clf, cfg.train, data.reals, e, "cooldown", {}, 0));
  }
  return logs;
}

std::vector<StageLog> run_curriculum(Classifier& clf, const CurriculumConfig& cfg, const CurriculumData& data,
                                     const GuidanceValidationSet& validation) {
  if (cfg.strategy == Strategy::adaptive) return run_adaptive(clf, cfg, data, validation);
  return run_nonadaptive(clf, cfg, data);
}

std::string stage_logs_jsonl(const std::vector<StageLog>& logs, Strategy strategy) {
  std::string out;
  for (const auto& log : logs) {
    nlohmann::ordered_json j;
    j["epoch"] = log.epoch;
    j["strategy"] = to_string(strategy);
    j["phase"] = log.phase;
    j["levels"] = log.levels;
    j["synthetic"] = log.synthetic;
    j["real"] = log.real;
    j["loss"] = log.loss;
    j["accuracy"] = log.accuracy;
    if (log.progress) {
      auto level_map = [](const std::map<double, double>& m) {
        nlohmann::ordered_json o = nlohmann::ordered_json::object();
        for (const auto& [k, v] : m) o[io::format_double(k)] = v;
        return o;
      };
      j["p_before"] = level_map(log.progress->p_before);
      j["p_after"] = level_map(log.progress->p_after);
      j["chosen"] = log.progress->chosen;
      j["tie_broken"] = log.progress->tie_broken;
    }
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace discl
