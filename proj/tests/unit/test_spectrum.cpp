#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "discl/data.hpp"
#include "discl/random.hpp"
#include "discl/spectrum.hpp"

using namespace discl;

namespace {

Dataset hard_set(int n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset data;
  for (int i = 0; i < n; ++i) {
    LabeledImage s;
    s.image = Image(4, 4);
    for (auto& p : s.image.pixels) p = static_cast<float>(rng.uniform());
    s.label = i % 2;
    s.sample_id = make_sample_id(Split::train, s.label, static_cast<std::uint32_t>(i));
    data.push_back(s);
  }
  return data;
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Spectrum scored(std::initializer_list<double> scores) {
  Spectrum s;
  for (double f : scores) {
    SpectrumEntry e;
    e.fidelity = f;
    s.push_back(e);
  }
  return s;
}

FilterModel tiny_filter() {
  ClassifierArchitecture arch;
  arch.height = 4;
  arch.width = 4;
  arch.channels = 2;
  arch.embed_dim = 6;
  arch.num_classes = 2;
  return FilterModel{Classifier(arch, 3), nn::RowMat<double>::Zero(2, 6)};
}

}  // namespace

TEST(GuidanceGrid, Validation) {
  EXPECT_THROW(GuidanceGrid({}), std::invalid_argument);
  EXPECT_THROW(GuidanceGrid({0.3, 0.1}), std::invalid_argument);
  EXPECT_THROW(GuidanceGrid({0.1, 0.1}), std::invalid_argument);
  EXPECT_THROW(GuidanceGrid({0.5, 1.0}), std::invalid_argument);
  EXPECT_EQ(GuidanceGrid::longtail_preset().levels(), (std::vector<double>{0.0, 0.1, 0.3, 0.5}));
  EXPECT_EQ(GuidanceGrid::lowquality_preset().levels(), (std::vector<double>{0.5, 0.7, 0.9}));
  EXPECT_EQ(GuidanceGrid::lowquality_preset().index_of(0.7), 1u);
  EXPECT_THROW(GuidanceGrid::lowquality_preset().index_of(0.6), std::out_of_range);
}

TEST(GenerateSpectrum, CountAndOrder) {
  const auto s = VarianceSchedule::linear(50, 1e-4, 0.02);
  const auto model = analytic_gaussian_model(std::vector<double>(16, 0.5), 0.1, s);
  const Dataset hard = hard_set(3, 1);
  const GuidanceGrid grid({0.0, 0.1, 0.3, 0.5});
  SpectrumConfig cfg;
  cfg.seeds_per_level = 2;
  cfg.seed = 5;
  const Spectrum sp = generate_spectrum(hard, model, grid, cfg, s);
  ASSERT_EQ(sp.size(), 24u);
  std::size_t k = 0;
  std::set<std::uint64_t> ids;
  for (std::size_t src = 0; src < 3; ++src) {
    for (std::size_t l = 0; l < 4; ++l) {
      for (int m = 0; m < 2; ++m, ++k) {
        EXPECT_EQ(sp[k].source_id, hard[src].sample_id);
        EXPECT_EQ(sp[k].label, hard[src].label);
        EXPECT_EQ(sp[k].level_index, l);
        EXPECT_EQ(sp[k].lambda, grid[l]);
        EXPECT_EQ(sp[k].seed_index, m);
        EXPECT_TRUE(ids.insert(sp[k].sample_id()).second);
        const auto labeled = sp[k].to_labeled();
        EXPECT_EQ(labeled.origin, Origin::synthetic);
        EXPECT_EQ(labeled.lambda, grid[l]);
      }
    }
  }
}

TEST(GenerateSpectrum, WorkerCountIndependent) {
  const auto s = VarianceSchedule::linear(50, 1e-4, 0.02);
  const auto model = analytic_gaussian_model(std::vector<double>(16, 0.5), 0.1, s);
  const Dataset hard = hard_set(7, 2);
  const GuidanceGrid grid({0.0, 0.5, 0.9});
  SpectrumConfig cfg;
  cfg.seeds_per_level = 3;
  cfg.seed = 8;
  const Spectrum a = generate_spectrum(hard, model, grid, cfg, s);
  cfg.workers = 4;
  const Spectrum b = generate_spectrum(hard, model, grid, cfg, s);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].image, b[i].image);
}

TEST(GenerateSpectrum, ZeroStartLevelCopiesSource) {
  const auto s = VarianceSchedule::linear(50, 1e-4, 0.02);
  const auto model = analytic_gaussian_model(std::vector<double>(16, 0.5), 0.1, s);
  const Dataset hard = hard_set(2, 3);
  SpectrumConfig cfg;
  cfg.seeds_per_level = 2;
  for (Sampler sampler : {Sampler::ancestral, Sampler::ddim}) {
    cfg.sampler = sampler;
    const Spectrum sp = generate_spectrum(hard, model, GuidanceGrid({0.99}), cfg, s);
    for (const auto& e : sp) EXPECT_EQ(e.image, hard[e.source_id == hard[0].sample_id ? 0 : 1].image);
  }
}

TEST(GenerateSpectrum, CacheBytesDeterministic) {
  const auto s = VarianceSchedule::linear(50, 1e-4, 0.02);
  const auto model = analytic_gaussian_model(std::vector<double>(16, 0.5), 0.1, s);
  const Dataset hard = hard_set(4, 4);
  const GuidanceGrid grid({0.0, 0.5});
  SpectrumConfig cfg;
  cfg.seed = 13;
  const auto dir = std::filesystem::temp_directory_path() / "discl_test_spectrum";
  std::filesystem::create_directories(dir);
  for (const char* name : {"a", "b"}) {
    SpectrumFile f;
    f.entries = generate_spectrum(hard, model, grid, cfg, s);
    f.grid = grid;
    f.seeds_per_level = cfg.seeds_per_level;
    f.seed = cfg.seed;
    f.height = 4;
    f.width = 4;
    save_spectrum(f, dir / name);
  }
  EXPECT_EQ(file_bytes(dir / "a.dssp"), file_bytes(dir / "b.dssp"));
  EXPECT_EQ(file_bytes(dir / "a.manifest"), file_bytes(dir / "b.manifest"));
  const std::string blob = file_bytes(dir / "a.dssp");
  EXPECT_EQ(blob.substr(0, 4), "DSSP");
  const SpectrumFile loaded = load_spectrum(dir / "a");
  const Spectrum fresh = generate_spectrum(hard, model, grid, cfg, s);
  ASSERT_EQ(loaded.entries.size(), fresh.size());
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    EXPECT_EQ(loaded.entries[i].image, fresh[i].image);
    EXPECT_EQ(loaded.entries[i].source_id, fresh[i].source_id);
    EXPECT_EQ(loaded.entries[i].seed_index, fresh[i].seed_index);
  }
  std::filesystem::remove_all(dir);
}

TEST(FidelityScore, CosineIdentityAndOrthogonality) {
  FilterModel f = tiny_filter();
  const Dataset imgs = hard_set(1, 5);
  const auto e = normalized_embeddings(f, imgs);
  ASSERT_GT(e.row(0).norm(), 0.5);
  f.references.row(0) = e.row(0);
  EXPECT_NEAR(fidelity_score(f, imgs[0].image, 0), 1.0, 1e-6);
  // A unit vector orthogonal to the embedding.
  Eigen::RowVectorXd other = Eigen::RowVectorXd::Zero(6);
  int a = 0, b = 1;
  other(a) = e(0, b);
  other(b) = -e(0, a);
  if (other.norm() < 1e-6) {
    other.setZero();
    for (int j = 0; j < 6; ++j) {
      if (e(0, j) == 0.0) {
        other(j) = 1.0;
        break;
      }
    }
  }
  ASSERT_GT(other.norm(), 1e-6);
  f.references.row(1) = other / other.norm();
  EXPECT_NEAR(fidelity_score(f, imgs[0].image, 1), 0.0, 1e-6);
}

TEST(FidelityScore, TrainedFilterPrefersOwnClass) {
  // One clean render per (class, pose) prototype: the glyph mask in its
  // canonical pose on a flat background.
  DatasetSpec spec;
  spec.seed = 21;
  const Dataset clean = make_prototype_corpus(spec, 50, Split::filter_corpus);
  FilterTrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 3;
  const FilterModel f = train_filter_model(clean, ClassifierArchitecture{}, cfg);
  for (Eigen::Index c = 0; c < f.references.rows(); ++c) EXPECT_NEAR(f.references.row(c).norm(), 1.0, 1e-6);
  const auto protos = glyph_prototypes(spec);
  Dataset canonical;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (const auto& mask : protos[static_cast<std::size_t>(c)]) {
      LabeledImage s;
      s.image = Image(16, 16);
      s.label = c;
      for (std::size_t i = 0; i < mask.size(); ++i) s.image.pixels[i] = mask[i] ? 0.85f : 0.125f;
      canonical.push_back(s);
    }
  }
  const auto e = normalized_embeddings(f, canonical);
  int wins = 0;
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    Eigen::Index best = 0;
    (f.references * e.row(i).transpose()).maxCoeff(&best);
    wins += best == canonical[static_cast<std::size_t>(i)].label;
  }
  EXPECT_GE(wins, static_cast<int>(std::ceil(0.95 * static_cast<double>(canonical.size()))));

  const Dataset held_out = make_prototype_corpus(spec, 20, Split::corpus);
  const auto scores = fidelity_scores(f, held_out);
  for (double v : scores) {
    EXPECT_GE(v, -1.0 - 1e-9);
    EXPECT_LE(v, 1.0 + 1e-9);
  }
  const double h = calibrate_threshold(f, held_out, 0.1);
  const auto below = std::count_if(scores.begin(), scores.end(), [&](double v) { return v < h; });
  EXPECT_NEAR(static_cast<double>(below) / static_cast<double>(scores.size()), 0.1, 0.02);
}

TEST(FilterSpectrum, InclusiveBoundary) {
  Spectrum s = scored({0.31, 0.29, 0.30});
  filter_spectrum(s, 0.30);
  EXPECT_TRUE(s[0].kept);
  EXPECT_FALSE(s[1].kept);
  EXPECT_TRUE(s[2].kept);
  filter_spectrum(s, -1.0);
  for (const auto& e : s) EXPECT_TRUE(e.kept);
}

TEST(FilterSpectrum, SubsetProperty) {
  Rng rng(3);
  Spectrum s;
  for (int i = 0; i < 500; ++i) {
    SpectrumEntry e;
    e.fidelity = rng.uniform(0.15, 0.4);
    s.push_back(e);
  }
  std::vector<bool> prev(s.size(), true);
  for (double h : {0.23, 0.25, 0.27, 0.3, 0.32}) {
    filter_spectrum(s, h);
    ASSERT_EQ(s.size(), 500u);
    for (std::size_t i = 0; i < s.size(); ++i) {
      EXPECT_EQ(s[i].kept, s[i].fidelity >= h);
      if (s[i].kept) EXPECT_TRUE(prev[i]);
      prev[i] = s[i].kept;
    }
  }
}
