#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "discl/config.hpp"

using namespace discl;

namespace {

template <class F>
std::string error_key(F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

}  // namespace

TEST(ParseConfig, MinimalAppliesDefaults) {
  const auto cfg = parse_config_text("task = longtail\nseed = 11\n");
  auto expected = preset_config("longtail", Task::longtail);
  expected.seed = 11;
  EXPECT_EQ(cfg, expected);
  EXPECT_NO_THROW(validate(cfg));
  EXPECT_EQ(cfg.grid, GuidanceGrid::longtail_preset());
  EXPECT_EQ(cfg.hard_rule, HardRule::tail);

  const auto lq = parse_config_text("# comment\ntask = lowquality\nseed = 3\n");
  EXPECT_EQ(lq.preset, "lowquality");
  EXPECT_EQ(lq.grid, GuidanceGrid::lowquality_preset());
  EXPECT_EQ(lq.hard_rule, HardRule::probability);
  EXPECT_EQ(lq.strategy, Strategy::adaptive);
}

TEST(ParseConfig, TypoRejectedNamingKey) {
  try {
    parse_config_text("task = longtail\nseed = 1\nlamda_grid = 0.1, 0.2\n");
    FAIL() << "typo accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "lamda_grid");
    EXPECT_NE(std::string(e.what()).find("lamda_grid"), std::string::npos);
  }
}

TEST(ParseConfig, DistinctDiagnostics) {
  EXPECT_EQ(error_key([] { parse_config_text("task = longtail\n"); }), "seed");
  EXPECT_EQ(error_key([] { parse_config_text("seed = 1\n"); }), "task");
  EXPECT_EQ(error_key([] { parse_config_text("task = longtail\nseed = x\n"); }), "seed");
  EXPECT_EQ(error_key([] { parse_config_text("task = longtail\nseed = 1\nspectrum.grid = 0.5, 0.3\n"); }),
            "spectrum.grid");
  EXPECT_EQ(error_key([] { parse_config_text("task = longtail\nseed = 1\nhard.h_hard = 1.5\n"); }), "hard.h_hard");
  EXPECT_EQ(error_key([] { parse_config_text("task = longtail\nseed = 1\npreset = huge\n"); }), "preset");
  EXPECT_EQ(error_key([] {
              parse_config_text("task = longtail\nseed = 1\ncurriculum.epochs = 3\ncurriculum.curriculum_epochs = 5\n");
            }),
            "curriculum.curriculum_epochs");
  EXPECT_THROW(parse_config("/nonexistent/discl.cfg"), ConfigError);
  try {
    parse_config("/nonexistent/discl.cfg");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/discl.cfg"), std::string::npos);
  }
}

TEST(ParseConfig, Overrides) {
  const auto cfg = parse_config_text(
      "task = longtail\nseed = 5\nspectrum.grid = 0.0, 0.2, 0.4\nspectrum.m = 2\nfilter.h_filter = 0.3\n"
      "curriculum.strategy = specific_to_diverse\ngeneration.sampler = ddim\ndiffusion.input_skip = false\n");
  EXPECT_EQ(cfg.grid, GuidanceGrid({0.0, 0.2, 0.4}));
  EXPECT_EQ(cfg.seeds_per_level, 2);
  EXPECT_EQ(cfg.h_filter, 0.3);
  EXPECT_EQ(cfg.strategy, Strategy::specific_to_diverse);
  EXPECT_EQ(cfg.sampler, Sampler::ddim);
  EXPECT_FALSE(cfg.diffusion_arch.input_skip);
}

TEST(ParseConfig, RoundTrip) {
  for (const char* text : {"task = longtail\nseed = 9\n", "task = lowquality\nseed = 2\nfilter.h_filter = 0.25\n",
                           "task = longtail\npreset = tiny\nseed = 4\nspectrum.grid = 0.1, 0.35\n"}) {
    const auto cfg = parse_config_text(text);
    const auto again = parse_config_text(serialize_config(cfg));
    EXPECT_EQ(again, cfg);
    EXPECT_EQ(serialize_config(again), serialize_config(cfg));
  }
}

TEST(ParseConfig, FromFile) {
  const auto path = std::filesystem::temp_directory_path() / "discl_test_config.cfg";
  {
    std::ofstream out(path);
    out << "task = lowquality\nseed = 8\nout_dir = somewhere\n";
  }
  const auto cfg = parse_config(path);
  EXPECT_EQ(cfg.seed, 8u);
  EXPECT_EQ(cfg.out_dir, "somewhere");
  std::filesystem::remove(path);
}

TEST(ConfigFingerprint, IgnoresOutputDirectory) {
  auto a = parse_config_text("task = longtail\nseed = 1\nout_dir = x\n");
  auto b = parse_config_text("task = longtail\nseed = 1\nout_dir = y\n");
  EXPECT_EQ(config_fingerprint_text(a), config_fingerprint_text(b));
  b.seed = 2;
  EXPECT_NE(config_fingerprint_text(a), config_fingerprint_text(b));
}

TEST(ConfigDerived, ArchitecturesFollowData) {
  auto cfg = parse_config_text("task = longtail\nseed = 1\ndata.num_classes = 6\ndata.image_size = 12\n");
  EXPECT_EQ(noise_architecture(cfg).num_classes, 6);
  EXPECT_EQ(noise_architecture(cfg).height, 12);
  EXPECT_EQ(classifier_architecture(cfg).num_classes, 6);
  EXPECT_EQ(classifier_architecture(cfg).width, 12);
  const auto s = make_schedule(cfg);
  EXPECT_EQ(s.steps(), 200);
  const auto tc = train_config(cfg, 77);
  EXPECT_EQ(tc.epochs, cfg.epochs);
  EXPECT_EQ(tc.curriculum_epochs, cfg.curriculum_epochs);
  EXPECT_EQ(tc.seed, 77u);
  const auto cc = curriculum_config(cfg, {5});
  EXPECT_EQ(cc.tail_classes, (std::set<int>{5}));
  EXPECT_EQ(cc.grid, cfg.grid);
}
