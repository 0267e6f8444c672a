#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "discl/data.hpp"

using namespace discl;

namespace {

DatasetSpec small_spec(std::uint64_t seed) {
  DatasetSpec spec;
  spec.head_count = 60;
  spec.imbalance_ratio = 20.0;
  spec.test_per_class = 6;
  spec.seed = seed;
  return spec;
}

Dataset synthetic_pool(int tail, int non_tail) {
  Dataset data;
  std::uint32_t index = 0;
  for (int i = 0; i < non_tail; ++i) {
    LabeledImage s;
    s.image = Image(2, 2);
    s.label = i % 3;
    s.sample_id = make_sample_id(Split::train, s.label, index++);
    data.push_back(s);
  }
  for (int i = 0; i < tail; ++i) {
    LabeledImage s;
    s.image = Image(2, 2);
    s.label = 7 + i % 2;
    s.sample_id = make_sample_id(Split::train, s.label, index++);
    data.push_back(s);
  }
  return data;
}

}  // namespace

TEST(LongtailCounts, IndependentOracle) {
  DatasetSpec spec;
  const auto counts = longtail_counts(spec);
  ASSERT_EQ(counts.size(), 10u);
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(counts[i], static_cast<int>(std::lround(500.0 * std::pow(100.0, -i / 9.0)))) << i;
  }
  EXPECT_EQ(counts, (std::vector<int>{500, 300, 180, 108, 65, 39, 23, 14, 8, 5}));
}

TEST(LongtailCounts, FlatProfile) {
  DatasetSpec spec;
  spec.imbalance_ratio = 1.0;
  for (int c : longtail_counts(spec)) EXPECT_EQ(c, 500);
}

TEST(LongtailCounts, Groups) {
  DatasetSpec spec;
  const auto counts = longtail_counts(spec);
  std::set<int> many, medium, few;
  for (int i = 0; i < 10; ++i) {
    switch (group_for_count(counts[i])) {
      case ClassGroup::many: many.insert(i); break;
      case ClassGroup::medium: medium.insert(i); break;
      case ClassGroup::few: few.insert(i); break;
    }
  }
  EXPECT_EQ(many, (std::set<int>{0, 1, 2, 3}));
  EXPECT_EQ(medium, (std::set<int>{4, 5, 6}));
  EXPECT_EQ(few, (std::set<int>{7, 8, 9}));
  EXPECT_EQ(group_for_count(100), ClassGroup::many);
  EXPECT_EQ(group_for_count(99), ClassGroup::medium);
  EXPECT_EQ(group_for_count(20), ClassGroup::medium);
  EXPECT_EQ(group_for_count(19), ClassGroup::few);
}

TEST(DatasetSpec, RejectsZeroCountClass) {
  DatasetSpec spec;
  spec.head_count = 10;
  spec.imbalance_ratio = 100.0;
  EXPECT_THROW(make_longtail_dataset(spec), std::invalid_argument);
  spec = DatasetSpec{};
  spec.num_classes = 1;
  EXPECT_THROW(validate(spec), std::invalid_argument);
  spec = DatasetSpec{};
  spec.imbalance_ratio = 0.5;
  EXPECT_THROW(validate(spec), std::invalid_argument);
}

TEST(LongtailDataset, StructureAndRanges) {
  const auto spec = small_spec(3);
  const auto b = make_longtail_dataset(spec);
  const auto counts = longtail_counts(spec);
  std::map<int, int> seen;
  std::set<std::uint64_t> ids;
  for (const auto& s : b.train) {
    ++seen[s.label];
    EXPECT_EQ(s.origin, Origin::real);
    EXPECT_EQ(s.lambda, 1.0);
    EXPECT_TRUE(ids.insert(s.sample_id).second);
    for (float p : s.image.pixels) {
      ASSERT_GE(p, 0.0f);
      ASSERT_LE(p, 1.0f);
    }
  }
  for (int c = 0; c < spec.num_classes; ++c) EXPECT_EQ(seen[c], counts[c]);
  for (int i = 1; i < spec.num_classes; ++i) EXPECT_LE(counts[i], counts[i - 1]);
  for (const Dataset* test : {&b.id_test, &b.ood_test}) {
    std::map<int, int> per_class;
    for (const auto& s : *test) {
      ++per_class[s.label];
      EXPECT_TRUE(ids.insert(s.sample_id).second) << "sample id collision";
    }
    for (int c = 0; c < spec.num_classes; ++c) EXPECT_EQ(per_class[c], spec.test_per_class);
  }
  for (int x : b.ood_backgrounds) EXPECT_EQ(b.train_backgrounds.count(x), 0u);
}

TEST(LongtailDataset, Deterministic) {
  const auto a = make_longtail_dataset(small_spec(5));
  const auto b = make_longtail_dataset(small_spec(5));
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.id_test, b.id_test);
  EXPECT_EQ(a.ood_test, b.ood_test);
  const auto c = make_longtail_dataset(small_spec(6));
  EXPECT_NE(a.train, c.train);
}

TEST(LowqualityDataset, CorruptionFraction) {
  auto spec = small_spec(4);
  spec.imbalance_ratio = 1.0;
  spec.head_count = 40;
  spec.corruption_fraction = 0.0;
  const auto clean = make_lowquality_dataset(spec);
  spec.corruption_fraction = 0.4;
  const auto dirty = make_lowquality_dataset(spec);
  ASSERT_EQ(clean.train.size(), dirty.train.size());
  EXPECT_TRUE(clean.train_corruptions.empty());
  std::size_t same = 0;
  for (std::size_t i = 0; i < clean.train.size(); ++i) {
    EXPECT_EQ(clean.train[i].sample_id, dirty.train[i].sample_id);
    same += clean.train[i].image == dirty.train[i].image ? 1 : 0;
  }
  const double corrupted = 1.0 - static_cast<double>(same) / static_cast<double>(clean.train.size());
  EXPECT_NEAR(corrupted, 0.4, 0.08);
  std::map<int, int> per_class;
  for (const auto& s : dirty.train) ++per_class[s.label];
  for (const auto& [c, n] : per_class) EXPECT_EQ(n, 40);
  EXPECT_FALSE(dirty.train_corruptions.empty());
  for (int id : dirty.ood_corruptions) EXPECT_EQ(dirty.train_corruptions.count(id), 0u);
  for (int id : dirty.ood_backgrounds) EXPECT_EQ(dirty.train_backgrounds.count(id), 0u);
}

TEST(Glyphs, PairwiseDistinct) {
  DatasetSpec spec;
  const auto protos = glyph_prototypes(spec);
  ASSERT_EQ(protos.size(), 10u);
  for (std::size_t a = 0; a < protos.size(); ++a) {
    ASSERT_EQ(protos[a].size(), static_cast<std::size_t>(kPoseVariants));
    for (std::size_t b = a + 1; b < protos.size(); ++b) {
      int distance = 0;
      for (std::size_t k = 0; k < protos[a][0].size(); ++k) distance += protos[a][0][k] != protos[b][0][k];
      EXPECT_GE(distance, 40) << a << " vs " << b;
    }
  }
}

TEST(Undersample, DefaultRatio) {
  const Dataset pool = synthetic_pool(136, 1500);
  const auto r = undersample_nontail(pool, {7, 8}, 0.136, 1);
  EXPECT_EQ(r.target_non_tail, 864u);
  EXPECT_EQ(r.data.size(), 1000u);
  EXPECT_FALSE(r.pool_exhausted);
}

TEST(Undersample, EqualSplit) {
  const auto r = undersample_nontail(synthetic_pool(10, 50), {7, 8}, 0.5, 2);
  EXPECT_EQ(r.data.size(), 20u);
}

TEST(Undersample, PoolExhausted) {
  const auto r = undersample_nontail(synthetic_pool(50, 30), {7, 8}, 0.136, 3);
  EXPECT_TRUE(r.pool_exhausted);
  EXPECT_EQ(r.data.size(), 80u);
}

TEST(Undersample, TailProportionWithinOneSample) {
  for (int tail : {27, 136, 411}) {
    const auto r = undersample_nontail(synthetic_pool(tail, 5000), {7, 8}, 0.136, tail);
    std::size_t kept_tail = 0;
    for (const auto& s : r.data) kept_tail += s.label >= 7 ? 1 : 0;
    EXPECT_EQ(kept_tail, static_cast<std::size_t>(tail));
    const double n = static_cast<double>(r.data.size());
    EXPECT_LE(std::abs(static_cast<double>(kept_tail) - 0.136 * n), 1.0) << tail;
  }
}

TEST(Undersample, PreservesOrderAndRejectsBadFraction) {
  const Dataset pool = synthetic_pool(20, 300);
  const auto r = undersample_nontail(pool, {7, 8}, 0.2, 4);
  std::map<std::uint64_t, std::size_t> position;
  for (std::size_t i = 0; i < pool.size(); ++i) position[pool[i].sample_id] = i;
  for (std::size_t i = 1; i < r.data.size(); ++i) {
    EXPECT_LT(position[r.data[i - 1].sample_id], position[r.data[i].sample_id]);
  }
  EXPECT_THROW(undersample_nontail(pool, {7, 8}, 0.0, 4), std::invalid_argument);
  EXPECT_THROW(undersample_nontail(pool, {7, 8}, 1.0, 4), std::invalid_argument);
  EXPECT_THROW(undersample_nontail(pool, {}, 0.2, 4), std::invalid_argument);
}

TEST(BundleFile, RoundTripBitExact) {
  const auto spec = small_spec(9);
  const auto b = make_longtail_dataset(spec);
  const auto dir = std::filesystem::temp_directory_path() / "discl_test_bundle";
  std::filesystem::create_directories(dir);
  save_bundle(b, spec, dir / "bundle");
  DatasetSpec loaded_spec;
  const auto loaded = load_bundle(dir / "bundle", &loaded_spec);
  EXPECT_EQ(loaded_spec, spec);
  EXPECT_EQ(loaded.train, b.train);
  EXPECT_EQ(loaded.id_test, b.id_test);
  EXPECT_EQ(loaded.ood_test, b.ood_test);
  EXPECT_EQ(loaded.group_of_class, b.group_of_class);
  std::filesystem::remove_all(dir);
}
