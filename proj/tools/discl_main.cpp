// Command-line front end: each subcommand runs a slice of the pipeline
// against the run directory.
//
// Exit codes: 0 success, 2 configuration error, 3 stage failure.

#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "discl/config.hpp"
#include "discl/pipeline.hpp"
#include "discl/report.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  bool resume = false;
};

void add_common(CLI::App* sub, CommonFlags& flags) {
  sub->add_option("--config", flags.config, "Experiment config file")->required();
  sub->add_option("--out", flags.out, "Run directory (overrides DISCL_OUT_DIR and the config)");
  sub->add_option("--seed", flags.seed, "Global seed (overrides the config)");
  sub->add_option("--workers", flags.workers, "Worker threads")->check(CLI::Range(1, 256));
  sub->add_flag("--resume", flags.resume, "Reuse completed stages whose artifacts are intact");
}

std::filesystem::path run_dir(const CommonFlags& flags, const discl::ExperimentConfig& cfg) {
  if (!flags.out.empty()) return flags.out;
  if (const char* env = std::getenv("DISCL_OUT_DIR"); env != nullptr && *env != '\0') return env;
  return cfg.out_dir;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion curriculum lab"};
  app.require_subcommand(1);
  CommonFlags flags;

  struct Command {
    const char* name;
    const char* help;
  };
  const Command commands[] = {
      {"gen-data", "Render the train/test splits and the generator corpora"},
      {"train-diffusion", "Train the conditional noise model"},
      {"gen-spectrum", "Pretrain the classifier, find hard samples, generate and filter the spectrum"},
      {"train", "Curriculum training"},
      {"evaluate", "Evaluate the curriculum-trained classifier"},
      {"ablate", "Run the ablation battery"},
      {"report", "Write summary tables and plots"},
      {"run", "Run every stage, then write the report"},
  };
  for (const auto& c : commands) add_common(app.add_subcommand(c.name, c.help), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  discl::ExperimentConfig cfg;
  try {
    cfg = discl::parse_config(flags.config);
    if (flags.seed) cfg.seed = *flags.seed;
  } catch (const discl::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("config error: {}", e.what());
    return kExitConfig;
  }

  discl::RunOptions opts;
  opts.run_dir = run_dir(flags, cfg);
  opts.workers = flags.workers;
  opts.resume = flags.resume;

  using discl::Stage;
  try {
    if (command == "gen-data") {
      discl::run_stages(cfg, opts, Stage::gen_data, Stage::gen_data);
    } else if (command == "train-diffusion") {
      discl::run_stages(cfg, opts, Stage::train_diffusion, Stage::train_diffusion);
    } else if (command == "gen-spectrum") {
      discl::run_stages(cfg, opts, Stage::pretrain_classifier, Stage::filter);
    } else if (command == "train") {
      discl::run_stages(cfg, opts, Stage::curriculum_train, Stage::curriculum_train);
    } else if (command == "evaluate") {
      discl::run_stages(cfg, opts, Stage::evaluate, Stage::evaluate);
    } else if (command == "ablate") {
      const auto result = discl::run_ablation(cfg, opts);
      for (const auto& s : result.summary) {
        if (s.metric == result.metric) spdlog::info("{:<24} {} {:.4f} +- {:.4f} (n={})", s.arm, s.metric, s.mean, s.stddev, s.n);
      }
    } else if (command == "report") {
      for (const auto& path : discl::emit_report(opts.run_dir)) spdlog::info("wrote {}", path.string());
    } else {
      const auto result = discl::run_pipeline(cfg, opts);
      spdlog::info("{} stage(s) executed, {} reused", result.executed.size(), result.reused.size());
      for (const auto& path : discl::emit_report(opts.run_dir)) spdlog::info("wrote {}", path.string());
    }
  } catch (const discl::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitStage;
  }
  return 0;
}
