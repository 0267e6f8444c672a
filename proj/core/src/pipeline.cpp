#include "discl/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "discl/classifier.hpp"
#include "discl/curriculum.hpp"
#include "discl/data.hpp"
#include "discl/diffusion.hpp"
#include "discl/io.hpp"
#include "discl/random.hpp"
#include "discl/spectrum.hpp"

namespace discl {

namespace fs = std::filesystem;

std::string to_string(Stage s) {
  switch (s) {
    case Stage::gen_data: return "gen-data";
    case Stage::train_diffusion: return "train-diffusion";
    case Stage::pretrain_classifier: return "pretrain-classifier";
    case Stage::identify_hard: return "identify-hard";
    case Stage::gen_spectrum: return "gen-spectrum";
    case Stage::filter: return "filter";
    case Stage::curriculum_train: return "curriculum-train";
    case Stage::evaluate: return "evaluate";
  }
  return "?";
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages{Stage::gen_data,      Stage::train_diffusion, Stage::pretrain_classifier,
                                         Stage::identify_hard, Stage::gen_spectrum,    Stage::filter,
                                         Stage::curriculum_train, Stage::evaluate};
  return stages;
}

Stage parse_stage(std::string_view name) {
  for (Stage s : all_stages()) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown stage '" + std::string(name) + "'");
}

std::vector<std::string> stage_outputs(Stage s) {
  switch (s) {
    case Stage::gen_data:
      return {"data/bundle.manifest", "data/bundle.dsdt", "data/corpus.manifest", "data/corpus.dsdt",
              "data/filter_corpus.manifest", "data/filter_corpus.dsdt"};
    case Stage::train_diffusion: return {"diffusion/noise_model.dsnm", "diffusion/loss.csv"};
    case Stage::pretrain_classifier: return {"classifier/pretrained.dscf"};
    case Stage::identify_hard: return {"hard/hard.manifest", "hard/hard.dsdt"};
    case Stage::gen_spectrum: return {"spectrum/raw.manifest", "spectrum/raw.dssp"};
    case Stage::filter:
      return {"filter/filter_model.dsfm", "filter/threshold.txt", "spectrum/filtered.manifest",
              "spectrum/filtered.dssp", "spectrum/fidelity.csv"};
    case Stage::curriculum_train: return {"curriculum/classifier.dscf", "curriculum/stages.jsonl"};
    case Stage::evaluate: return {"eval/metrics.csv", "eval/metrics.json"};
  }
  return {};
}

std::string headline_metric(Task task) { return task == Task::longtail ? "accuracy_few" : "macro_f1_ood"; }

namespace {

// Config keys (by prefix) each stage depends on directly; upstream artifacts
// cover everything else.
std::vector<std::string> stage_key_prefixes(Stage s) {
  switch (s) {
    case Stage::gen_data: return {"data.", "diffusion.corpus_per_class", "filter.corpus_per_class"};
    case Stage::train_diffusion: return {"schedule.", "diffusion."};
    case Stage::pretrain_classifier: return {"classifier."};
    case Stage::identify_hard: return {"hard."};
    case Stage::gen_spectrum: return {"spectrum.", "generation.", "schedule."};
    case Stage::filter: return {"filter.", "classifier."};
    case Stage::curriculum_train: return {"curriculum.", "classifier.", "spectrum.grid"};
    case Stage::evaluate: return {"eval."};
  }
  return {};
}

std::string relevant_config(const ExperimentConfig& cfg, Stage s) {
  std::istringstream in(config_fingerprint_text(cfg));
  const auto prefixes = stage_key_prefixes(s);
  std::string out;
  std::string line;
  while (std::getline(in, line)) {
    const bool keep = line.starts_with("task ") || line.starts_with("seed ") ||
                      std::any_of(prefixes.begin(), prefixes.end(),
                                  [&](const std::string& p) { return line.starts_with(p); });
    if (keep) out += line + "\n";
  }
  return out;
}

class Manifest {
 public:
  explicit Manifest(fs::path path) : path_(std::move(path)) {
    if (fs::exists(path_)) kv_ = io::read_key_values(path_);
  }

  void clear() { kv_.clear(); }

  std::string fingerprint(const ExperimentConfig& cfg, Stage s) const {
    std::string text = std::string(kCodeVersion) + "\n" + to_string(s) + "\n" + relevant_config(cfg, s);
    for (Stage prior : all_stages()) {
      if (prior == s) break;
      for (const auto& rel : stage_outputs(prior)) text += rel + " " + get("file." + rel) + "\n";
    }
    return io::sha256_hex(text);
  }

  bool valid(const ExperimentConfig& cfg, Stage s, const fs::path& run_dir) const {
    if (get("stage." + to_string(s) + ".fingerprint") != fingerprint(cfg, s)) return false;
    for (const auto& rel : stage_outputs(s)) {
      const auto path = run_dir / rel;
      if (!fs::exists(path) || io::sha256_file(path) != get("file." + rel)) return false;
    }
    return true;
  }

  void record(const ExperimentConfig& cfg, Stage s, const fs::path& run_dir) {
    // A re-executed stage invalidates every later record.
    bool later = false;
    for (Stage other : all_stages()) {
      if (later) erase(other);
      if (other == s) later = true;
    }
    for (const auto& rel : stage_outputs(s)) {
      const auto path = run_dir / rel;
      if (!fs::exists(path)) throw StageError(s, "artifact " + rel + " was not written");
      kv_["file." + rel] = io::sha256_file(path);
    }
    kv_["stage." + to_string(s) + ".fingerprint"] = fingerprint(cfg, s);
    kv_["code_version"] = std::string(kCodeVersion);
    io::write_file_atomic(path_, io::format_key_values(kv_));
  }

 private:
  std::string get(const std::string& key) const {
    const auto it = kv_.find(key);
    return it == kv_.end() ? std::string() : it->second;
  }

  void erase(Stage s) {
    kv_.erase("stage." + to_string(s) + ".fingerprint");
    for (const auto& rel : stage_outputs(s)) kv_.erase("file." + rel);
  }

  fs::path path_;
  io::KeyValues kv_;
};

void save_classifier_file(const Classifier& clf, const fs::path& path) {
  std::ostringstream buf;
  save_classifier(clf, buf);
  io::write_file_atomic(path, buf.str());
}

Classifier load_classifier_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return load_classifier(in);
}

std::set<int> tail_classes(const ExperimentConfig& cfg, const DataBundle& bundle) {
  if (cfg.task != Task::longtail) return {};
  return classes_in_group(bundle.group_of_class, ClassGroup::few);
}

struct Prepared {
  DataBundle bundle;
  Dataset hard;
  Spectrum filtered;
  CurriculumData data;
  GuidanceValidationSet validation;
  bool has_validation = false;
};

// Shared by the curriculum stage and the ablation battery: the validation set
// is drawn once and removed from the spectrum every arm sees.
Prepared prepare_curriculum(const ExperimentConfig& cfg, const fs::path& dir) {
  Prepared p;
  p.bundle = load_bundle(dir / "data/bundle");
  p.hard = load_dataset(dir / "hard/hard");
  p.filtered = load_spectrum(dir / "spectrum/filtered").entries;
  p.data.reals = p.bundle.train;
  for (const auto& s : p.hard) p.data.hard_ids.insert(s.sample_id);
  try {
    p.validation = make_validation_set(p.filtered, cfg.grid, cfg.validation_per_lambda,
                                       derive_seed(cfg.seed, "validation"));
    p.has_validation = true;
  } catch (const std::exception& e) {
    spdlog::warn("no guidance validation set ({}); the adaptive strategy is unavailable", e.what());
  }
  p.data.spectrum = p.has_validation ? without_entries(p.filtered, p.validation.ids()) : p.filtered;
  return p;
}

std::string metrics_csv(const MetricsReport& report) {
  std::string out = "metric,value\n";
  for (const auto& [name, v] : flatten(report)) out += name + "," + io::format_double(v) + "\n";
  for (const auto& [cls, v] : report.per_class) {
    out += "per_class_" + std::to_string(cls) + "," + io::format_double(v) + "\n";
  }
  return out;
}

std::string metrics_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  for (const auto& [name, v] : flatten(report)) j[name] = v;
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (const auto& [cls, v] : report.per_class) per_class[std::to_string(cls)] = v;
  j["per_class"] = per_class;
  return j.dump(2) + "\n";
}

std::string fidelity_csv(const Spectrum& entries, const GuidanceGrid& grid) {
  std::string out = "lambda,mean_fidelity,kept,total\n";
  for (std::size_t l = 0; l < grid.size(); ++l) {
    double sum = 0.0;
    std::size_t kept = 0;
    std::size_t total = 0;
    for (const auto& e : entries) {
      if (e.level_index != l) continue;
      sum += e.fidelity;
      kept += e.kept ? 1 : 0;
      ++total;
    }
    out += io::format_double(grid[l]) + "," + io::format_double(total ? sum / static_cast<double>(total) : 0.0) +
           "," + std::to_string(kept) + "," + std::to_string(total) + "\n";
  }
  return out;
}

void run_stage(Stage s, const ExperimentConfig& cfg, const fs::path& dir, int workers) {
  switch (s) {
    case Stage::gen_data: {
      auto spec = cfg.data;
      spec.seed = derive_seed(cfg.seed, "data");
      const auto bundle = cfg.task == Task::longtail ? make_longtail_dataset(spec) : make_lowquality_dataset(spec);
      save_bundle(bundle, spec, dir / "data/bundle");
      save_dataset(make_prototype_corpus(spec, cfg.diffusion_corpus_per_class, Split::corpus), dir / "data/corpus");
      save_dataset(make_prototype_corpus(spec, cfg.filter_corpus_per_class, Split::filter_corpus),
                   dir / "data/filter_corpus");
      return;
    }
    case Stage::train_diffusion: {
      const auto corpus = load_dataset(dir / "data/corpus");
      NoiseTrainConfig tc;
      tc.epochs = cfg.diffusion_epochs;
      tc.batch_size = cfg.diffusion_batch_size;
      tc.learn_rate = cfg.diffusion_learn_rate;
      tc.cond_dropout_p = cfg.cond_dropout;
      tc.seed = derive_seed(cfg.seed, "diffusion");
      const auto result = train_noise_model(corpus, make_schedule(cfg), noise_architecture(cfg), tc);
      save_noise_model(result.model, (dir / "diffusion/noise_model.dsnm").string());
      std::string loss = "epoch,loss\n";
      for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
        loss += std::to_string(e) + "," + io::format_double(result.epoch_loss[e]) + "\n";
      }
      io::write_file_atomic(dir / "diffusion/loss.csv", loss);
      return;
    }
    case Stage::pretrain_classifier: {
      const auto bundle = load_bundle(dir / "data/bundle");
      Classifier clf(classifier_architecture(cfg), derive_seed(cfg.seed, "pretrain-init"));
      auto tc = train_config(cfg, derive_seed(cfg.seed, "pretrain"));
      tc.epochs = std::max(cfg.pretrain_epochs, 1);
      tc.curriculum_epochs = 0;
      train_epochs(clf, bundle.train, tc, cfg.pretrain_epochs);
      save_classifier_file(clf, dir / "classifier/pretrained.dscf");
      return;
    }
    case Stage::identify_hard: {
      const auto bundle = load_bundle(dir / "data/bundle");
      Dataset hard;
      if (cfg.hard_rule == HardRule::tail) {
        hard = identify_hard_tail(bundle.train, bundle.group_of_class);
      } else {
        hard = identify_hard(load_classifier_file(dir / "classifier/pretrained.dscf"), bundle.train, cfg.h_hard);
      }
      if (hard.empty()) spdlog::warn("no hard samples identified; the spectrum will be empty");
      spdlog::info("{} hard samples out of {}", hard.size(), bundle.train.size());
      save_dataset(hard, dir / "hard/hard");
      return;
    }
    case Stage::gen_spectrum: {
      const auto hard = load_dataset(dir / "hard/hard");
      const auto model = load_noise_model((dir / "diffusion/noise_model.dsnm").string());
      SpectrumConfig sc;
      sc.seeds_per_level = cfg.seeds_per_level;
      sc.w = cfg.guidance_w;
      sc.sampler = cfg.sampler;
      sc.ddim_steps = cfg.ddim_steps;
      sc.seed = derive_seed(cfg.seed, "spectrum");
      sc.workers = workers;
      SpectrumFile file;
      file.entries = generate_spectrum(hard, model, cfg.grid, sc, make_schedule(cfg));
      file.grid = cfg.grid;
      file.seeds_per_level = cfg.seeds_per_level;
      file.seed = sc.seed;
      file.height = file.width = cfg.data.image_size;
      save_spectrum(file, dir / "spectrum/raw");
      return;
    }
    case Stage::filter: {
      const auto clean = load_dataset(dir / "data/filter_corpus");
      const auto filter = train_filter_model(clean, classifier_architecture(cfg),
                                             FilterTrainConfig{cfg.filter_epochs, derive_seed(cfg.seed, "filter")});
      const double h = cfg.h_filter ? *cfg.h_filter : calibrate_threshold(filter, clean, cfg.filter_quantile);
      auto file = load_spectrum(dir / "spectrum/raw");
      score_spectrum(filter, file.entries);
      filter_spectrum(file.entries, h);
      file.h_filter = h;
      std::size_t kept = 0;
      for (const auto& e : file.entries) kept += e.kept ? 1 : 0;
      spdlog::info("h_filter {:.4f}: kept {} of {} spectrum entries", h, kept, file.entries.size());
      save_filter_model(filter, dir / "filter/filter_model.dsfm");
      io::KeyValues kv;
      kv["h_filter"] = io::format_double(h);
      kv["calibrated"] = cfg.h_filter ? "false" : "true";
      kv["kept"] = std::to_string(kept);
      kv["total"] = std::to_string(file.entries.size());
      io::write_file_atomic(dir / "filter/threshold.txt", io::format_key_values(kv));
      save_spectrum(file, dir / "spectrum/filtered");
      io::write_file_atomic(dir / "spectrum/fidelity.csv", fidelity_csv(file.entries, cfg.grid));
      return;
    }
    case Stage::curriculum_train: {
      auto p = prepare_curriculum(cfg, dir);
      auto cc = curriculum_config(cfg, tail_classes(cfg, p.bundle));
      if (cc.strategy == Strategy::adaptive && !p.has_validation) {
        throw std::runtime_error("adaptive strategy needs a guidance validation set");
      }
      Classifier clf(classifier_architecture(cfg), derive_seed(cfg.seed, "init"));
      const auto logs = run_curriculum(clf, cc, p.data, p.validation);
      save_classifier_file(clf, dir / "curriculum/classifier.dscf");
      io::write_file_atomic(dir / "curriculum/stages.jsonl", stage_logs_jsonl(logs, cc.strategy));
      return;
    }
    case Stage::evaluate: {
      const auto bundle = load_bundle(dir / "data/bundle");
      const auto clf = load_classifier_file(dir / "curriculum/classifier.dscf");
      const auto report = evaluate(clf, bundle, cfg.worst_k);
      io::write_file_atomic(dir / "eval/metrics.csv", metrics_csv(report));
      io::write_file_atomic(dir / "eval/metrics.json", metrics_json(report));
      return;
    }
  }
}

std::size_t index_of(Stage s) { return static_cast<std::size_t>(s); }

}  // namespace

PipelineResult run_stages(const ExperimentConfig& cfg, const RunOptions& opts, Stage first, Stage last) {
  validate(cfg);
  if (index_of(first) > index_of(last)) throw std::invalid_argument("run_stages: first stage after last stage");
  PipelineResult result;
  result.run_dir = opts.run_dir;
  fs::create_directories(opts.run_dir);
  Manifest manifest(opts.run_dir / "manifest.txt");
  if (first == Stage::gen_data && !opts.resume) manifest.clear();
  io::write_file_atomic(opts.run_dir / "config.txt", serialize_config(cfg));

  for (Stage s : all_stages()) {
    if (index_of(s) > index_of(last)) break;
    if (index_of(s) < index_of(first)) {
      if (!manifest.valid(cfg, s, opts.run_dir)) {
        throw StageError(s, "artifacts are missing or stale in " + opts.run_dir.string() + "; run this stage first");
      }
      continue;
    }
    if (opts.resume && manifest.valid(cfg, s, opts.run_dir)) {
      spdlog::info("stage {}: reusing artifacts", to_string(s));
      result.reused.push_back(s);
      continue;
    }
    spdlog::info("stage {}: running", to_string(s));
    try {
      run_stage(s, cfg, opts.run_dir, opts.workers);
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(s, e.what());
    }
    manifest.record(cfg, s, opts.run_dir);
    result.executed.push_back(s);
  }
  return result;
}

PipelineResult run_pipeline(const ExperimentConfig& cfg, const RunOptions& opts) {
  return run_stages(cfg, opts, Stage::gen_data, Stage::evaluate);
}

std::vector<std::string> expand_ablation_arms(const ExperimentConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& family : cfg.ablation_arms) {
    if (family == "fixed") {
      for (double l : cfg.grid.levels()) out.push_back("fixed_" + io::format_double(l));
    } else if (family == "threshold") {
      for (double h : cfg.ablation_thresholds) out.push_back("threshold_" + io::format_double(h));
    } else if (family == "scale") {
      for (int k : cfg.ablation_scales) out.push_back("scale_" + std::to_string(k));
    } else {
      out.push_back(family);
    }
  }
  return out;
}

namespace {

struct ArmPlan {
  Strategy strategy = Strategy::diverse_to_specific;
  double fixed_lambda = 0.0;
  std::optional<double> threshold;
  std::optional<int> scale;
  bool real_only = false;
};

ArmPlan plan_arm(const ExperimentConfig& cfg, const std::string& name) {
  ArmPlan plan;
  plan.strategy = cfg.strategy;
  auto number_after = [&](std::string_view prefix) { return std::stod(name.substr(prefix.size())); };
  if (name == "baseline") {
    plan.strategy = Strategy::diverse_to_specific;
    plan.real_only = true;
  } else if (name == "text_only") {
    if (!cfg.grid.contains(0.0)) throw std::invalid_argument("text_only needs level 0 in spectrum.grid");
    plan.strategy = Strategy::fixed;
    plan.fixed_lambda = 0.0;
  } else if (name.starts_with("fixed_")) {
    plan.strategy = Strategy::fixed;
    plan.fixed_lambda = number_after("fixed_");
  } else if (name.starts_with("threshold_")) {
    plan.threshold = number_after("threshold_");
  } else if (name.starts_with("scale_")) {
    // The scale sweep varies synthetic volume under the default
    // non-adaptive curriculum, so 0x coincides with the real-only baseline.
    plan.strategy = Strategy::diverse_to_specific;
    plan.scale = std::stoi(name.substr(6));
  } else {
    plan.strategy = parse_strategy(name);
  }
  return plan;
}

}  // namespace

AblationResult run_ablation(const ExperimentConfig& cfg, const RunOptions& opts) {
  validate(cfg);
  Manifest manifest(opts.run_dir / "manifest.txt");
  for (Stage s : all_stages()) {
    if (index_of(s) > index_of(Stage::filter)) break;
    if (!manifest.valid(cfg, s, opts.run_dir)) {
      throw StageError(s, "artifacts are missing or stale in " + opts.run_dir.string() + "; run this stage first");
    }
  }
  const auto p = prepare_curriculum(cfg, opts.run_dir);
  const auto tails = tail_classes(cfg, p.bundle);
  const auto arch = classifier_architecture(cfg);

  std::vector<ArmSpec> arms;
  for (const auto& name : expand_ablation_arms(cfg)) {
    arms.push_back({name, [&, name](std::uint64_t seed) {
                      const auto plan = plan_arm(cfg, name);
                      auto cc = curriculum_config(cfg, tails);
                      cc.strategy = plan.strategy;
                      cc.fixed_lambda = plan.fixed_lambda;
                      cc.train.seed = seed;
                      if (plan.scale) cc.scale = *plan.scale;
                      if (cc.strategy == Strategy::adaptive && !p.has_validation) {
                        throw std::runtime_error("adaptive strategy needs a guidance validation set");
                      }
                      CurriculumData data = p.data;
                      if (plan.real_only) data.spectrum.clear();
                      if (plan.threshold) filter_spectrum(data.spectrum, *plan.threshold);
                      Classifier clf(arch, derive_seed(seed, "init"));
                      run_curriculum(clf, cc, data, p.validation);
                      return evaluate(clf, p.bundle, cfg.worst_k);
                    }});
  }

  AblationResult result;
  result.metric = headline_metric(cfg.task);
  result.runs = run_ablation_battery(arms, cfg.ablation_seeds, opts.workers);
  result.summary = aggregate(result.runs);
  for (const auto& run : result.runs) {
    if (!run.metrics) spdlog::warn("arm {} seed {} failed: {}", run.arm, run.seed, run.error);
  }

  std::optional<double> best_score;
  for (double l : cfg.grid.levels()) {
    const auto s = find_summary(result.summary, "fixed_" + io::format_double(l), result.metric);
    if (s && (!best_score || s->mean > *best_score)) {
      best_score = s->mean;
      result.best_fixed_lambda = l;
    }
  }

  const auto dir = opts.run_dir / "ablation";
  io::write_file_atomic(dir / "runs.csv", runs_csv(result.runs));
  io::write_file_atomic(dir / "summary.csv", summary_csv(result.summary));
  io::KeyValues kv;
  kv["code_version"] = std::string(kCodeVersion);
  kv["config_sha256"] = io::sha256_hex(config_fingerprint_text(cfg));
  kv["metric"] = result.metric;
  std::vector<std::string> seeds;
  for (auto s : cfg.ablation_seeds) seeds.push_back(std::to_string(s));
  std::string seed_text;
  for (const auto& s : seeds) seed_text += (seed_text.empty() ? "" : ",") + s;
  kv["seeds"] = seed_text;
  std::string arm_text;
  for (const auto& a : arms) arm_text += (arm_text.empty() ? "" : ",") + a.name;
  kv["arms"] = arm_text;
  std::size_t failures = 0;
  for (const auto& run : result.runs) failures += run.metrics ? 0 : 1;
  kv["failures"] = std::to_string(failures);
  kv["best_fixed_lambda"] = result.best_fixed_lambda ? io::format_double(*result.best_fixed_lambda) : "none";
  kv["file.runs.csv"] = io::sha256_file(dir / "runs.csv");
  kv["file.summary.csv"] = io::sha256_file(dir / "summary.csv");
  io::write_file_atomic(dir / "manifest.txt", io::format_key_values(kv));
  return result;
}

}  // namespace discl
