#pragma once

// "Glyph world": a synthetic image-classification benchmark. Each class is a
// binary 16x16 glyph with a few pose variants, rendered over textured
// backgrounds with random translation and rotation. Long-tail and
// low-quality (corrupted) variants stand in for the real benchmarks.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "discl/image.hpp"
#include "discl/sample.hpp"

namespace discl {

enum class ClassGroup { many, medium, few };

std::string to_string(ClassGroup g);

struct DatasetSpec {
  int num_classes = 10;
  /// Train count of the head class (every class for balanced datasets).
  int head_count = 500;
  double imbalance_ratio = 100.0;
  int image_size = 16;
  int test_per_class = 50;
  /// Fraction of images receiving the low-quality corruption.
  double corruption_fraction = 0.0;
  double blur_sigma = 0.8;
  double noise_sigma = 0.08;
  /// Selects which half of the background families is in-domain (0 or 1).
  int background_family = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct DataBundle {
  Dataset train;
  Dataset id_test;
  Dataset ood_test;
  std::map<int, ClassGroup> group_of_class;
  std::vector<int> class_counts;
  /// Parameter ids actually used, kept for the ID/OOD disjointness audit.
  std::set<int> train_backgrounds;
  std::set<int> ood_backgrounds;
  std::set<int> train_corruptions;
  std::set<int> ood_corruptions;
};

inline constexpr int kPoseVariants = 4;
inline constexpr int kBackgroundFamilies = 8;

void validate(const DatasetSpec& spec);

/// round(head_count * ratio^(-i / (K - 1))) for class i.
std::vector<int> longtail_counts(const DatasetSpec& spec);

/// many >= 100, medium 20..99, few < 20.
ClassGroup group_for_count(int count);

/// Binary prototype masks, [class][variant], each image_size^2 entries.
std::vector<std::vector<std::vector<std::uint8_t>>> glyph_prototypes(const DatasetSpec& spec);

DataBundle make_longtail_dataset(const DatasetSpec& spec);
DataBundle make_lowquality_dataset(const DatasetSpec& spec);

/// Balanced, uncorrupted in-domain renders. Used as the generator's
/// pretraining corpus and for the fidelity filter.
Dataset make_prototype_corpus(const DatasetSpec& spec, int per_class, Split split);

struct UndersampleResult {
  Dataset data;
  /// Set when the non-tail pool was smaller than the target.
  bool pool_exhausted = false;
  std::size_t target_non_tail = 0;
};

/// Keeps every tail sample and a uniform subset of non-tail samples sized
/// round(n_tail * (1 - f) / f). Output preserves input order.
UndersampleResult undersample_nontail(std::span<const LabeledImage> data, const std::set<int>& tail_classes,
                                      double tail_fraction, std::uint64_t seed);

std::set<int> classes_in_group(const std::map<int, ClassGroup>& groups, ClassGroup g);

// Dataset file: `<stem>.manifest` key-value text + `<stem>.dsdt` blob.
void save_bundle(const DataBundle& bundle, const DatasetSpec& spec, const std::filesystem::path& stem);
DataBundle load_bundle(const std::filesystem::path& stem, DatasetSpec* spec_out = nullptr);
void save_dataset(const Dataset& data, const std::filesystem::path& stem);
Dataset load_dataset(const std::filesystem::path& stem);

}  // namespace discl
