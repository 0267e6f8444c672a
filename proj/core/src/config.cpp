#include "discl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "discl/io.hpp"

namespace discl {

std::string to_string(Task t) { return t == Task::longtail ? "longtail" : "lowquality"; }
std::string to_string(HardRule r) { return r == HardRule::tail ? "tail" : "probability"; }

const std::vector<std::string>& ablation_arm_names() {
  static const std::vector<std::string> names{"baseline", "diverse_to_specific", "specific_to_diverse", "random",
                                              "all_levels", "adaptive", "fixed", "text_only", "threshold", "scale"};
  return names;
}

namespace {

[[noreturn]] void bad_value(const std::string& key, std::string_view value, std::string_view expected) {
  throw ConfigError(key, "invalid value for '" + key + "': \"" + std::string(value) + "\" (expected " +
                             std::string(expected) + ")");
}

template <class T>
T parse_number(const std::string& key, std::string_view text, std::string_view expected) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) bad_value(key, text, expected);
  return v;
}

double parse_real(const std::string& key, std::string_view text) {
  const double v = parse_number<double>(key, text, "a real number");
  if (!std::isfinite(v)) bad_value(key, text, "a finite real number");
  return v;
}

bool parse_bool(const std::string& key, std::string_view text) {
  if (text == "true") return true;
  if (text == "false") return false;
  bad_value(key, text, "true or false");
}

template <class T, class F>
std::vector<T> parse_list(const std::string& key, std::string_view text, F&& item) {
  std::vector<T> out;
  if (io::trim(text).empty()) return out;
  for (const auto& part : io::split_list(text)) out.push_back(item(key, io::trim(part)));
  return out;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
  return out;
}

template <class T, class F>
std::string format_list(const std::vector<T>& values, F&& fmt) {
  std::vector<std::string> parts;
  for (const auto& v : values) parts.push_back(fmt(v));
  return join(parts);
}

std::string fmt_int(long long v) { return std::to_string(v); }

// One entry per key: how to read it into a config and how to write it out.
struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string& key, std::string_view text)> read;
  std::function<std::string(const ExperimentConfig&)> write;
};

// Accessors hand out mutable references; writers only read through them.
ExperimentConfig& mut(const ExperimentConfig& c) { return const_cast<ExperimentConfig&>(c); }

template <class M>
Field int_field(std::string key, M member) {
  return {std::move(key),
          [member](ExperimentConfig& c, const std::string& k, std::string_view t) {
            std::invoke(member, c) = parse_number<int>(k, t, "an integer");
          },
          [member](const ExperimentConfig& c) { return fmt_int(std::invoke(member, mut(c))); }};
}

template <class M>
Field real_field(std::string key, M member) {
  return {std::move(key),
          [member](ExperimentConfig& c, const std::string& k, std::string_view t) {
            std::invoke(member, c) = parse_real(k, t);
          },
          [member](const ExperimentConfig& c) { return io::format_double(std::invoke(member, mut(c))); }};
}

template <class M>
Field bool_field(std::string key, M member) {
  return {std::move(key),
          [member](ExperimentConfig& c, const std::string& k, std::string_view t) {
            std::invoke(member, c) = parse_bool(k, t);
          },
          [member](const ExperimentConfig& c) { return std::string(std::invoke(member, mut(c)) ? "true" : "false"); }};
}

Sampler parse_sampler(const std::string& key, std::string_view t) {
  if (t == "ancestral") return Sampler::ancestral;
  if (t == "ddim") return Sampler::ddim;
  bad_value(key, t, "ancestral or ddim");
}

std::vector<double> parse_grid(const std::string& key, std::string_view t) {
  if (t == "longtail") return GuidanceGrid::longtail_preset().levels();
  if (t == "lowquality") return GuidanceGrid::lowquality_preset().levels();
  return parse_list<double>(key, t, parse_real);
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"out_dir", [](C& c, const std::string&, std::string_view t) { c.out_dir = std::string(t); },
                 [](const C& c) { return c.out_dir; }});

    f.push_back(int_field("data.num_classes", [](C& c) -> int& { return c.data.num_classes; }));
    f.push_back(int_field("data.head_count", [](C& c) -> int& { return c.data.head_count; }));
    f.push_back(real_field("data.imbalance_ratio", [](C& c) -> double& { return c.data.imbalance_ratio; }));
    f.push_back(int_field("data.image_size", [](C& c) -> int& { return c.data.image_size; }));
    f.push_back(int_field("data.test_per_class", [](C& c) -> int& { return c.data.test_per_class; }));
    f.push_back(real_field("data.corruption_fraction", [](C& c) -> double& { return c.data.corruption_fraction; }));
    f.push_back(real_field("data.blur_sigma", [](C& c) -> double& { return c.data.blur_sigma; }));
    f.push_back(real_field("data.noise_sigma", [](C& c) -> double& { return c.data.noise_sigma; }));
    f.push_back(int_field("data.background_family", [](C& c) -> int& { return c.data.background_family; }));

    f.push_back(int_field("schedule.steps", [](C& c) -> int& { return c.schedule_steps; }));
    f.push_back(real_field("schedule.beta_min", [](C& c) -> double& { return c.beta_min; }));
    f.push_back(real_field("schedule.beta_max", [](C& c) -> double& { return c.beta_max; }));

    f.push_back(int_field("diffusion.corpus_per_class", [](C& c) -> int& { return c.diffusion_corpus_per_class; }));
    f.push_back({"diffusion.hidden",
                 [](C& c, const std::string& k, std::string_view t) {
                   c.diffusion_arch.hidden = parse_list<int>(k, t, [](const std::string& kk, std::string_view s) {
                     return parse_number<int>(kk, s, "a list of integers");
                   });
                 },
                 [](const C& c) { return format_list(c.diffusion_arch.hidden, fmt_int); }});
    f.push_back(int_field("diffusion.time_dim", [](C& c) -> int& { return c.diffusion_arch.time_dim; }));
    f.push_back(int_field("diffusion.class_dim", [](C& c) -> int& { return c.diffusion_arch.class_dim; }));
    f.push_back(bool_field("diffusion.input_skip", [](C& c) -> bool& { return c.diffusion_arch.input_skip; }));
    f.push_back(bool_field("diffusion.condition_every_layer",
                           [](C& c) -> bool& { return c.diffusion_arch.condition_every_layer; }));
    f.push_back(int_field("diffusion.epochs", [](C& c) -> int& { return c.diffusion_epochs; }));
    f.push_back(int_field("diffusion.batch_size", [](C& c) -> int& { return c.diffusion_batch_size; }));
    f.push_back(real_field("diffusion.learn_rate", [](C& c) -> double& { return c.diffusion_learn_rate; }));
    f.push_back(real_field("diffusion.cond_dropout", [](C& c) -> double& { return c.cond_dropout; }));

    f.push_back(real_field("generation.w", [](C& c) -> double& { return c.guidance_w; }));
    f.push_back({"generation.sampler",
                 [](C& c, const std::string& k, std::string_view t) { c.sampler = parse_sampler(k, t); },
                 [](const C& c) { return std::string(c.sampler == Sampler::ancestral ? "ancestral" : "ddim"); }});
    f.push_back(int_field("generation.ddim_steps", [](C& c) -> int& { return c.ddim_steps; }));

    f.push_back(int_field("classifier.channels", [](C& c) -> int& { return c.classifier_arch.channels; }));
    f.push_back(int_field("classifier.embed_dim", [](C& c) -> int& { return c.classifier_arch.embed_dim; }));
    f.push_back(int_field("classifier.batch_size", [](C& c) -> int& { return c.classifier_batch_size; }));
    f.push_back(real_field("classifier.learn_rate", [](C& c) -> double& { return c.classifier_learn_rate; }));
    f.push_back(real_field("classifier.momentum", [](C& c) -> double& { return c.classifier_momentum; }));
    f.push_back(int_field("classifier.pretrain_epochs", [](C& c) -> int& { return c.pretrain_epochs; }));

    f.push_back({"hard.rule",
                 [](C& c, const std::string& k, std::string_view t) {
                   if (t == "tail") c.hard_rule = HardRule::tail;
                   else if (t == "probability") c.hard_rule = HardRule::probability;
                   else bad_value(k, t, "tail or probability");
                 },
                 [](const C& c) { return to_string(c.hard_rule); }});
    f.push_back(real_field("hard.h_hard", [](C& c) -> double& { return c.h_hard; }));

    f.push_back({"spectrum.grid",
                 [](C& c, const std::string& k, std::string_view t) {
                   try {
                     c.grid = GuidanceGrid(parse_grid(k, t));
                   } catch (const std::invalid_argument& e) {
                     bad_value(k, t, std::string("a preset name or strictly increasing levels in [0, 1): ") + e.what());
                   }
                 },
                 [](const C& c) { return format_list(c.grid.levels(), io::format_double); }});
    f.push_back(int_field("spectrum.m", [](C& c) -> int& { return c.seeds_per_level; }));

    f.push_back(int_field("filter.corpus_per_class", [](C& c) -> int& { return c.filter_corpus_per_class; }));
    f.push_back(int_field("filter.epochs", [](C& c) -> int& { return c.filter_epochs; }));
    f.push_back({"filter.h_filter",
                 [](C& c, const std::string& k, std::string_view t) {
                   if (t == "auto") c.h_filter.reset();
                   else c.h_filter = parse_real(k, t);
                 },
                 [](const C& c) { return c.h_filter ? io::format_double(*c.h_filter) : std::string("auto"); }});
    f.push_back(real_field("filter.quantile", [](C& c) -> double& { return c.filter_quantile; }));

    f.push_back({"curriculum.strategy",
                 [](C& c, const std::string& k, std::string_view t) {
                   try {
                     c.strategy = parse_strategy(t);
                   } catch (const std::invalid_argument&) {
                     bad_value(k, t, "a curriculum strategy");
                   }
                 },
                 [](const C& c) { return to_string(c.strategy); }});
    f.push_back(real_field("curriculum.fixed_lambda", [](C& c) -> double& { return c.fixed_lambda; }));
    f.push_back(int_field("curriculum.epochs", [](C& c) -> int& { return c.epochs; }));
    f.push_back(int_field("curriculum.curriculum_epochs", [](C& c) -> int& { return c.curriculum_epochs; }));
    f.push_back(real_field("curriculum.probe_fraction", [](C& c) -> double& { return c.probe_fraction; }));
    f.push_back(int_field("curriculum.validation_per_lambda", [](C& c) -> int& { return c.validation_per_lambda; }));
    f.push_back(bool_field("curriculum.rollback_probe", [](C& c) -> bool& { return c.rollback_probe; }));
    f.push_back(bool_field("curriculum.undersample", [](C& c) -> bool& { return c.undersample; }));
    f.push_back(real_field("curriculum.tail_fraction", [](C& c) -> double& { return c.tail_fraction; }));
    f.push_back(int_field("curriculum.scale", [](C& c) -> int& { return c.scale; }));

    f.push_back({"eval.worst_k",
                 [](C& c, const std::string& k, std::string_view t) {
                   c.worst_k = parse_list<int>(k, t, [](const std::string& kk, std::string_view s) {
                     return parse_number<int>(kk, s, "a list of integers");
                   });
                 },
                 [](const C& c) { return format_list(c.worst_k, fmt_int); }});

    f.push_back({"ablation.seeds",
                 [](C& c, const std::string& k, std::string_view t) {
                   c.ablation_seeds = parse_list<std::uint64_t>(k, t, [](const std::string& kk, std::string_view s) {
                     return parse_number<std::uint64_t>(kk, s, "a list of unsigned integers");
                   });
                 },
                 [](const C& c) {
                   return format_list(c.ablation_seeds, [](std::uint64_t v) { return std::to_string(v); });
                 }});
    f.push_back({"ablation.arms",
                 [](C& c, const std::string& k, std::string_view t) {
                   c.ablation_arms = parse_list<std::string>(
                       k, t, [](const std::string&, std::string_view s) { return std::string(s); });
                 },
                 [](const C& c) { return join(c.ablation_arms); }});
    f.push_back({"ablation.thresholds",
                 [](C& c, const std::string& k, std::string_view t) {
                   c.ablation_thresholds = parse_list<double>(k, t, parse_real);
                 },
                 [](const C& c) { return format_list(c.ablation_thresholds, io::format_double); }});
    f.push_back({"ablation.scales",
                 [](C& c, const std::string& k, std::string_view t) {
                   c.ablation_scales = parse_list<int>(k, t, [](const std::string& kk, std::string_view s) {
                     return parse_number<int>(kk, s, "a list of integers");
                   });
                 },
                 [](const C& c) { return format_list(c.ablation_scales, fmt_int); }});
    return f;
  }();
  return table;
}

void require(bool ok, const std::string& key, const std::string& message) {
  if (!ok) throw ConfigError(key, "invalid value for '" + key + "': " + message);
}

}  // namespace

ExperimentConfig preset_config(std::string_view preset, Task task) {
  ExperimentConfig c;
  c.task = task;
  c.preset = std::string(preset);
  c.out_dir = "runs/" + to_string(task);
  if (task == Task::longtail) {
    c.ablation_arms = {"baseline", "diverse_to_specific", "specific_to_diverse", "random", "all_levels",
                       "adaptive", "fixed", "text_only", "threshold", "scale"};
  } else {
    c.data.head_count = 200;
    c.data.imbalance_ratio = 1.0;
    c.data.corruption_fraction = 0.4;
    c.hard_rule = HardRule::probability;
    c.grid = GuidanceGrid::lowquality_preset();
    c.seeds_per_level = 4;
    c.strategy = Strategy::adaptive;
    c.fixed_lambda = 0.5;
    c.undersample = false;
    c.ablation_arms = {"baseline", "diverse_to_specific", "specific_to_diverse", "random", "all_levels",
                       "adaptive", "fixed", "threshold", "scale"};
    c.ablation_scales = {0, 1, 2, 3, 4};
  }
  if (preset == "tiny") {
    c.data.head_count = task == Task::longtail ? 60 : 24;
    c.data.imbalance_ratio = task == Task::longtail ? 10.0 : 1.0;
    c.data.test_per_class = 8;
    c.schedule_steps = 50;
    c.diffusion_corpus_per_class = 12;
    c.diffusion_arch.hidden = {48, 48};
    c.diffusion_arch.time_dim = 8;
    c.diffusion_arch.class_dim = 8;
    c.diffusion_epochs = 2;
    c.ddim_steps = 5;
    c.classifier_arch.channels = 4;
    c.classifier_arch.embed_dim = 16;
    c.pretrain_epochs = 1;
    c.h_hard = 0.5;
    c.seeds_per_level = 2;
    c.filter_corpus_per_class = 8;
    c.filter_epochs = 2;
    c.epochs = 5;
    c.curriculum_epochs = 4;
    c.validation_per_lambda = 2;
    c.ablation_seeds = {1, 2};
    c.ablation_arms = {"baseline", "diverse_to_specific", "adaptive", "scale"};
    c.ablation_thresholds = {0.5};
    c.ablation_scales = {0, 1};
  } else if (preset != "longtail" && preset != "lowquality") {
    throw ConfigError("preset", "unknown preset '" + std::string(preset) + "' (expected longtail, lowquality or tiny)");
  }
  return c;
}

void validate(const ExperimentConfig& c) {
  if (c.preset != "longtail" && c.preset != "lowquality" && c.preset != "tiny") {
    throw ConfigError("preset", "unknown preset '" + c.preset + "'");
  }
  require(!c.out_dir.empty(), "out_dir", "must not be empty");
  try {
    validate(c.data);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("data", std::string("invalid dataset: ") + e.what());
  }
  require(c.schedule_steps >= 1 && c.schedule_steps <= 100000, "schedule.steps", "must lie in [1, 100000]");
  require(c.beta_min > 0.0 && c.beta_min <= c.beta_max && c.beta_max < 1.0, "schedule.beta_min",
          "need 0 < beta_min <= beta_max < 1");
  require(c.diffusion_corpus_per_class >= 1, "diffusion.corpus_per_class", "must be positive");
  require(!c.diffusion_arch.hidden.empty() &&
              std::all_of(c.diffusion_arch.hidden.begin(), c.diffusion_arch.hidden.end(), [](int h) { return h > 0; }),
          "diffusion.hidden", "need at least one positive width");
  require(c.diffusion_arch.time_dim >= 2 && c.diffusion_arch.time_dim % 2 == 0, "diffusion.time_dim",
          "must be even and >= 2");
  require(c.diffusion_arch.class_dim >= 1, "diffusion.class_dim", "must be positive");
  require(c.diffusion_epochs >= 1, "diffusion.epochs", "must be positive");
  require(c.diffusion_batch_size >= 1, "diffusion.batch_size", "must be positive");
  require(c.diffusion_learn_rate > 0.0, "diffusion.learn_rate", "must be positive");
  require(c.cond_dropout >= 0.0 && c.cond_dropout < 1.0, "diffusion.cond_dropout", "must lie in [0, 1)");
  require(c.guidance_w >= 0.0, "generation.w", "must be non-negative");
  require(c.ddim_steps >= 1, "generation.ddim_steps", "must be positive");
  require(c.classifier_arch.channels >= 1, "classifier.channels", "must be positive");
  require(c.classifier_arch.embed_dim >= 1, "classifier.embed_dim", "must be positive");
  require(c.classifier_batch_size >= 1, "classifier.batch_size", "must be positive");
  require(c.classifier_learn_rate >= 0.0, "classifier.learn_rate", "must be non-negative");
  require(c.classifier_momentum >= 0.0 && c.classifier_momentum < 1.0, "classifier.momentum", "must lie in [0, 1)");
  require(c.pretrain_epochs >= 0, "classifier.pretrain_epochs", "must be non-negative");
  require(c.h_hard >= 0.0 && c.h_hard <= 1.0, "hard.h_hard", "must lie in [0, 1]");
  require(c.seeds_per_level >= 1 && c.seeds_per_level <= kMaxSeedsPerLevel, "spectrum.m",
          "must lie in [1, " + std::to_string(kMaxSeedsPerLevel) + "]");
  require(c.filter_corpus_per_class >= 1, "filter.corpus_per_class", "must be positive");
  require(c.filter_epochs >= 1, "filter.epochs", "must be positive");
  require(!c.h_filter || (*c.h_filter >= -1.0 && *c.h_filter <= 1.0), "filter.h_filter",
          "must be auto or lie in [-1, 1]");
  require(c.filter_quantile >= 0.0 && c.filter_quantile <= 1.0, "filter.quantile", "must lie in [0, 1]");
  require(c.strategy != Strategy::fixed || c.grid.contains(c.fixed_lambda), "curriculum.fixed_lambda",
          "must be one of the spectrum.grid levels");
  require(c.epochs >= 1, "curriculum.epochs", "must be positive");
  require(c.curriculum_epochs >= 0 && c.curriculum_epochs <= c.epochs, "curriculum.curriculum_epochs",
          "must lie in [0, curriculum.epochs]");
  require(c.curriculum_epochs == 0 || c.curriculum_epochs >= static_cast<int>(c.grid.size()),
          "curriculum.curriculum_epochs", "must be 0 or at least the number of grid levels");
  require(c.probe_fraction >= 0.0 && c.probe_fraction <= 1.0, "curriculum.probe_fraction", "must lie in [0, 1]");
  require(c.validation_per_lambda >= 1, "curriculum.validation_per_lambda", "must be positive");
  require(c.tail_fraction > 0.0 && c.tail_fraction < 1.0, "curriculum.tail_fraction", "must lie in (0, 1)");
  require(c.scale >= -1, "curriculum.scale", "must be -1 (all) or non-negative");
  for (int k : c.worst_k) {
    require(k >= 1 && k <= c.data.num_classes, "eval.worst_k", "each k must lie in [1, data.num_classes]");
  }
  require(!c.ablation_seeds.empty(), "ablation.seeds", "need at least one seed");
  for (const auto& arm : c.ablation_arms) {
    const auto& names = ablation_arm_names();
    require(std::find(names.begin(), names.end(), arm) != names.end(), "ablation.arms", "unknown arm '" + arm + "'");
  }
  for (double h : c.ablation_thresholds) require(h >= -1.0 && h <= 1.0, "ablation.thresholds", "must lie in [-1, 1]");
  for (int k : c.ablation_scales) require(k >= 0, "ablation.scales", "must be non-negative");
}

ExperimentConfig parse_config_text(std::string_view text, std::string_view source_name) {
  io::KeyValues kv;
  try {
    std::istringstream in{std::string(text)};
    kv = io::parse_key_values(in, source_name);
  } catch (const io::FormatError& e) {
    throw ConfigError("", e.what());
  }
  const auto task_it = kv.find("task");
  if (task_it == kv.end()) throw ConfigError("task", "missing required key 'task'");
  Task task;
  if (task_it->second == "longtail") task = Task::longtail;
  else if (task_it->second == "lowquality") task = Task::lowquality;
  else bad_value("task", task_it->second, "longtail or lowquality");

  const auto seed_it = kv.find("seed");
  if (seed_it == kv.end()) throw ConfigError("seed", "missing required key 'seed'");

  const auto preset_it = kv.find("preset");
  auto cfg = preset_config(preset_it == kv.end() ? to_string(task) : preset_it->second, task);
  cfg.seed = parse_number<std::uint64_t>("seed", seed_it->second, "an unsigned integer");

  for (const auto& [key, value] : kv) {
    if (key == "task" || key == "seed" || key == "preset") continue;
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ConfigError(key, "unknown key '" + key + "'");
    it->read(cfg, key, value);
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("", "config file not found: " + path.string());
  return parse_config_text(io::read_file(path), path.string());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  io::KeyValues kv;
  kv["task"] = to_string(cfg.task);
  kv["preset"] = cfg.preset;
  kv["seed"] = std::to_string(cfg.seed);
  for (const auto& f : fields()) kv[f.key] = f.write(cfg);
  return io::format_key_values(kv);
}

std::string config_fingerprint_text(const ExperimentConfig& cfg) {
  auto copy = cfg;
  copy.out_dir = "-";
  return serialize_config(copy);
}

CurriculumConfig curriculum_config(const ExperimentConfig& cfg, const std::set<int>& tail_classes) {
  CurriculumConfig c;
  c.strategy = cfg.strategy;
  c.grid = cfg.grid;
  c.fixed_lambda = cfg.fixed_lambda;
  c.train = train_config(cfg, cfg.seed);
  c.probe_fraction = cfg.probe_fraction;
  c.validation_per_lambda = cfg.validation_per_lambda;
  c.rollback_probe = cfg.rollback_probe;
  c.undersample = cfg.undersample;
  c.tail_fraction = cfg.tail_fraction;
  c.tail_classes = tail_classes;
  c.scale = cfg.scale;
  return c;
}

TrainConfig train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = cfg.epochs;
  t.curriculum_epochs = cfg.curriculum_epochs;
  t.batch_size = cfg.classifier_batch_size;
  t.learn_rate = cfg.classifier_learn_rate;
  t.momentum = cfg.classifier_momentum;
  t.seed = seed;
  return t;
}

VarianceSchedule make_schedule(const ExperimentConfig& cfg) {
  return make_linear_schedule(cfg.schedule_steps, cfg.beta_min, cfg.beta_max);
}

NoiseArchitecture noise_architecture(const ExperimentConfig& cfg) {
  auto arch = cfg.diffusion_arch;
  arch.height = arch.width = cfg.data.image_size;
  arch.num_classes = cfg.data.num_classes;
  return arch;
}

ClassifierArchitecture classifier_architecture(const ExperimentConfig& cfg) {
  auto arch = cfg.classifier_arch;
  arch.height = arch.width = cfg.data.image_size;
  arch.num_classes = cfg.data.num_classes;
  return arch;
}

}  // namespace discl
