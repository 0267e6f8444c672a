#pragma once

// Synthetic-to-real spectrum: every hard sample re-generated at each image
// guidance level with several seeds, scored by an embedding-similarity
// filter and thresholded.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "discl/classifier.hpp"
#include "discl/diffusion.hpp"
#include "discl/image.hpp"
#include "discl/noise_model.hpp"
#include "discl/sample.hpp"
#include "discl/schedule.hpp"

namespace discl {

/// Strictly increasing guidance levels, each in [0, 1).
class GuidanceGrid {
 public:
  explicit GuidanceGrid(std::vector<double> levels);

  static GuidanceGrid longtail_preset() { return GuidanceGrid({0.0, 0.1, 0.3, 0.5}); }
  static GuidanceGrid lowquality_preset() { return GuidanceGrid({0.5, 0.7, 0.9}); }

  const std::vector<double>& levels() const noexcept { return levels_; }
  std::size_t size() const noexcept { return levels_.size(); }
  double operator[](std::size_t i) const { return levels_.at(i); }
  /// Index of `lambda` in the grid; throws std::out_of_range if absent.
  std::size_t index_of(double lambda) const;
  bool contains(double lambda) const;

  friend bool operator==(const GuidanceGrid&, const GuidanceGrid&) = default;

 private:
  std::vector<double> levels_;
};

struct SpectrumEntry {
  std::uint64_t source_id = 0;
  int label = 0;
  std::size_t level_index = 0;
  double lambda = 0.0;
  int seed_index = 0;
  Image image;
  double fidelity = 0.0;
  bool kept = true;

  /// Id of the synthetic sample, unique per (source, level, seed).
  std::uint64_t sample_id() const;
  LabeledImage to_labeled() const;
};

using Spectrum = std::vector<SpectrumEntry>;

inline constexpr int kMaxSeedsPerLevel = 64;
inline constexpr std::size_t kMaxGridLevels = 64;

struct SpectrumConfig {
  int seeds_per_level = 4;
  double w = 3.0;
  Sampler sampler = Sampler::ancestral;
  int ddim_steps = 20;
  std::uint64_t seed = 0;
  int workers = 1;
};

/// |hard| * |grid| * m entries in canonical order: source, then level, then
/// seed. Entry (source, level, seed) draws all of its noise from a stream
/// derived from (seed, source_id, level index, seed index). Work is split into
/// fixed chunks, so the output is identical for any worker count. Any failed
/// entry aborts the whole call.
Spectrum generate_spectrum(std::span<const LabeledImage> hard, const NoiseEstimator& model, const GuidanceGrid& grid,
                           const SpectrumConfig& cfg, const VarianceSchedule& schedule);

/// Classifier embedding plus one unit-norm reference vector per class.
struct FilterModel {
  Classifier classifier;
  nn::RowMat<double> references;
};

struct FilterTrainConfig {
  int epochs = 10;
  std::uint64_t seed = 0;
};

/// Trains the embedding network on clean balanced renders; references are the
/// normalized mean of the normalized embeddings of each class.
FilterModel train_filter_model(std::span<const LabeledImage> clean, const ClassifierArchitecture& arch,
                               const FilterTrainConfig& cfg);

/// L2-normalized embeddings, one row per image. A zero embedding stays zero.
nn::RowMat<double> normalized_embeddings(const FilterModel& filter, std::span<const LabeledImage> data);

/// Cosine similarity between embed(image) and the reference of `label`.
double fidelity_score(const FilterModel& filter, const Image& image, int label);
std::vector<double> fidelity_scores(const FilterModel& filter, std::span<const LabeledImage> data);
void score_spectrum(const FilterModel& filter, Spectrum& entries);

/// kept = fidelity >= h_filter.
void filter_spectrum(Spectrum& entries, double h_filter);

/// Linear-interpolated quantile of clean-render scores against their own class.
double calibrate_threshold(const FilterModel& filter, std::span<const LabeledImage> clean, double quantile = 0.1);

struct SpectrumFile {
  Spectrum entries;
  GuidanceGrid grid{{0.0}};
  int seeds_per_level = 0;
  double h_filter = 0.0;
  std::uint64_t seed = 0;
  int height = 0;
  int width = 0;
};

// "DSSP" cache: `<stem>.dssp` fixed-size records plus `<stem>.manifest`.
void save_spectrum(const SpectrumFile& file, const std::filesystem::path& stem);
SpectrumFile load_spectrum(const std::filesystem::path& stem);

void save_filter_model(const FilterModel& filter, const std::filesystem::path& path);
FilterModel load_filter_model(const std::filesystem::path& path);

}  // namespace discl
