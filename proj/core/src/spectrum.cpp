#include "discl/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "discl/io.hpp"
#include "discl/parallel.hpp"
#include "discl/random.hpp"

namespace discl {

GuidanceGrid::GuidanceGrid(std::vector<double> levels) : levels_(std::move(levels)) {
  if (levels_.empty()) throw std::invalid_argument("guidance grid must not be empty");
  if (levels_.size() > kMaxGridLevels) throw std::invalid_argument("guidance grid has too many levels");
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    const double v = levels_[i];
    if (!(v >= 0.0 && v < 1.0)) {
      throw std::invalid_argument("guidance grid levels must lie in [0, 1), got " + io::format_double(v));
    }
    if (i > 0 && !(levels_[i - 1] < v)) throw std::invalid_argument("guidance grid must be strictly increasing");
  }
}

std::size_t GuidanceGrid::index_of(double lambda) const {
  const auto it = std::find(levels_.begin(), levels_.end(), lambda);
  if (it == levels_.end()) throw std::out_of_range("guidance level " + io::format_double(lambda) + " not in grid");
  return static_cast<std::size_t>(it - levels_.begin());
}

bool GuidanceGrid::contains(double lambda) const {
  return std::find(levels_.begin(), levels_.end(), lambda) != levels_.end();
}

namespace {

constexpr std::uint32_t kSourceIndexBits = 20;

std::uint32_t synthetic_index(std::uint64_t source_id, std::size_t level, int seed) {
  const auto source_index = static_cast<std::uint32_t>(source_id & 0xffffffffULL);
  if (source_index >= (1u << kSourceIndexBits)) throw std::out_of_range("source index too large for synthetic id");
  return (source_index << 12) | (static_cast<std::uint32_t>(level) << 6) | static_cast<std::uint32_t>(seed);
}

}  // namespace

std::uint64_t SpectrumEntry::sample_id() const {
  return make_sample_id(Split::synthetic, label, synthetic_index(source_id, level_index, seed_index));
}

LabeledImage SpectrumEntry::to_labeled() const {
  return LabeledImage{image, label, Origin::synthetic, lambda, sample_id()};
}

Spectrum generate_spectrum(std::span<const LabeledImage> hard, const NoiseEstimator& model, const GuidanceGrid& grid,
                           const SpectrumConfig& cfg, const VarianceSchedule& schedule) {
  if (cfg.seeds_per_level < 1 || cfg.seeds_per_level > kMaxSeedsPerLevel) {
    throw std::invalid_argument("seeds per level must lie in [1, " + std::to_string(kMaxSeedsPerLevel) + "]");
  }
  const auto m = static_cast<std::size_t>(cfg.seeds_per_level);
  const std::size_t levels = grid.size();
  Spectrum out(hard.size() * levels * m);
  for (std::size_t s = 0; s < hard.size(); ++s) {
    for (std::size_t l = 0; l < levels; ++l) {
      for (std::size_t k = 0; k < m; ++k) {
        auto& e = out[(s * levels + l) * m + k];
        e.source_id = hard[s].sample_id;
        e.label = hard[s].label;
        e.level_index = l;
        e.lambda = grid[l];
        e.seed_index = static_cast<int>(k);
        (void)synthetic_index(e.source_id, l, e.seed_index);
      }
    }
  }

  // Fixed chunks per level keep the batched products identical for any
  // worker count.
  constexpr std::size_t kChunk = 64;
  const std::size_t per_level = hard.size() * m;
  const std::size_t chunks_per_level = (per_level + kChunk - 1) / kChunk;
  parallel_for(levels * chunks_per_level, cfg.workers, [&](std::size_t task) {
    const std::size_t l = task / chunks_per_level;
    const std::size_t begin = (task % chunks_per_level) * kChunk;
    const std::size_t end = std::min(per_level, begin + kChunk);
    std::vector<GuidedJob> jobs;
    std::vector<std::size_t> slots;
    for (std::size_t j = begin; j < end; ++j) {
      const std::size_t s = j / m;
      const std::size_t k = j % m;
      const auto& src = hard[s];
      jobs.push_back({&src.image, Condition::of_class(src.label),
                      derive_seed(cfg.seed, "spectrum", {src.sample_id, l, k})});
      slots.push_back((s * levels + l) * m + k);
    }
    GenerationConfig g;
    g.w = cfg.w;
    g.lambda = GuidanceLevel(grid[l]);
    g.sampler = cfg.sampler;
    g.ddim_steps = cfg.ddim_steps;
    auto images = generate_guided_batch(model, jobs, g, schedule);
    for (std::size_t j = 0; j < images.size(); ++j) out[slots[j]].image = std::move(images[j]);
  });
  return out;
}

FilterModel train_filter_model(std::span<const LabeledImage> clean, const ClassifierArchitecture& arch,
                               const FilterTrainConfig& cfg) {
  if (clean.empty()) throw std::invalid_argument("train_filter_model: empty corpus");
  FilterModel filter{Classifier(arch, derive_seed(cfg.seed, "filter-init")), {}};
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.curriculum_epochs = 0;
  tc.seed = derive_seed(cfg.seed, "filter-train");
  train_epochs(filter.classifier, clean, tc, cfg.epochs);

  const nn::RowMat<double> emb = normalized_embeddings(filter, clean);
  nn::RowMat<double> refs = nn::RowMat<double>::Zero(arch.num_classes, emb.cols());
  for (std::size_t i = 0; i < clean.size(); ++i) refs.row(clean[i].label) += emb.row(static_cast<Eigen::Index>(i));
  for (Eigen::Index c = 0; c < refs.rows(); ++c) {
    const double norm = refs.row(c).norm();
    if (norm == 0.0) throw std::runtime_error("train_filter_model: class " + std::to_string(c) + " has no reference");
    refs.row(c) /= norm;
  }
  // References are stored as 32-bit floats; round now so a reloaded filter
  // scores identically.
  filter.references = refs.cast<float>().cast<double>();
  return filter;
}

nn::RowMat<double> normalized_embeddings(const FilterModel& filter, std::span<const LabeledImage> data) {
  nn::RowMat<double> emb = embed(filter.classifier, data);
  for (Eigen::Index r = 0; r < emb.rows(); ++r) {
    const double norm = emb.row(r).norm();
    if (norm > 0.0) emb.row(r) /= norm;
  }
  return emb;
}

std::vector<double> fidelity_scores(const FilterModel& filter, std::span<const LabeledImage> data) {
  const nn::RowMat<double> emb = normalized_embeddings(filter, data);
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int label = data[i].label;
    if (label < 0 || label >= filter.references.rows()) throw std::out_of_range("fidelity_score: label out of range");
    const auto ref = filter.references.row(label);
    const double denom = ref.norm();
    out[i] = denom > 0.0 ? emb.row(static_cast<Eigen::Index>(i)).dot(ref) / denom : 0.0;
  }
  return out;
}

double fidelity_score(const FilterModel& filter, const Image& image, int label) {
  const LabeledImage sample{image, label, Origin::real, 1.0, 0};
  return fidelity_scores(filter, std::span<const LabeledImage>(&sample, 1)).front();
}

void score_spectrum(const FilterModel& filter, Spectrum& entries) {
  Dataset data;
  data.reserve(entries.size());
  for (const auto& e : entries) data.push_back(LabeledImage{e.image, e.label, Origin::synthetic, e.lambda, 0});
  const auto scores = fidelity_scores(filter, data);
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i].fidelity = scores[i];
}

void filter_spectrum(Spectrum& entries, double h_filter) {
  for (auto& e : entries) e.kept = e.fidelity >= h_filter;
}

double calibrate_threshold(const FilterModel& filter, std::span<const LabeledImage> clean, double quantile) {
  if (clean.empty()) throw std::invalid_argument("calibrate_threshold: empty corpus");
  if (!(quantile >= 0.0 && quantile <= 1.0)) throw std::invalid_argument("calibrate_threshold: quantile outside [0, 1]");
  auto scores = fidelity_scores(filter, clean);
  std::sort(scores.begin(), scores.end());
  const double pos = quantile * static_cast<double>(scores.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, scores.size() - 1);
  return scores[lo] + (pos - static_cast<double>(lo)) * (scores[hi] - scores[lo]);
}

namespace {

constexpr std::uint16_t kSpectrumVersion = 1;
constexpr std::uint16_t kFilterVersion = 1;

std::string blob_path(const std::filesystem::path& stem) { return stem.string() + ".dssp"; }
std::string manifest_path(const std::filesystem::path& stem) { return stem.string() + ".manifest"; }

std::string join_levels(const std::vector<double>& levels) {
  std::string out;
  for (double v : levels) out += (out.empty() ? "" : ",") + io::format_double(v);
  return out;
}

const std::string& require(const io::KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw io::FormatError("spectrum manifest lacks key '" + key + "'");
  return it->second;
}

}  // namespace

void save_spectrum(const SpectrumFile& file, const std::filesystem::path& stem) {
  const auto pixels = static_cast<std::size_t>(file.height) * static_cast<std::size_t>(file.width);
  std::ostringstream blob;
  io::BinaryWriter w(blob);
  w.bytes("DSSP");
  w.u16(kSpectrumVersion);
  w.u64(file.entries.size());
  for (const auto& e : file.entries) {
    if (e.image.pixels.size() != pixels) throw std::invalid_argument("save_spectrum: entry image has wrong size");
    if (e.lambda != file.grid[e.level_index]) throw std::invalid_argument("save_spectrum: entry level not in grid");
    w.u64(e.source_id);
    w.f32(static_cast<float>(e.lambda));
    w.u16(static_cast<std::uint16_t>(e.seed_index));
    w.u8(e.kept ? 1 : 0);
    w.f32(static_cast<float>(e.fidelity));
    w.f32s(e.image.pixels);
  }
  io::KeyValues kv;
  kv["count"] = std::to_string(file.entries.size());
  kv["grid"] = join_levels(file.grid.levels());
  kv["seeds_per_level"] = std::to_string(file.seeds_per_level);
  kv["h_filter"] = io::format_double(file.h_filter);
  kv["seed"] = std::to_string(file.seed);
  kv["height"] = std::to_string(file.height);
  kv["width"] = std::to_string(file.width);
  std::size_t kept = 0;
  for (const auto& e : file.entries) kept += e.kept ? 1 : 0;
  kv["kept"] = std::to_string(kept);
  io::write_file_atomic(blob_path(stem), blob.str());
  io::write_file_atomic(manifest_path(stem), io::format_key_values(kv));
}

SpectrumFile load_spectrum(const std::filesystem::path& stem) {
  const auto kv = io::read_key_values(manifest_path(stem));
  std::vector<double> levels;
  for (const auto& item : io::split_list(require(kv, "grid"))) levels.push_back(std::stod(item));
  SpectrumFile file;
  file.grid = GuidanceGrid(levels);
  file.seeds_per_level = std::stoi(require(kv, "seeds_per_level"));
  file.h_filter = std::stod(require(kv, "h_filter"));
  file.seed = std::stoull(require(kv, "seed"));
  file.height = std::stoi(require(kv, "height"));
  file.width = std::stoi(require(kv, "width"));

  std::ifstream in(blob_path(stem), std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + blob_path(stem));
  io::BinaryReader r(in);
  r.expect("DSSP", "spectrum cache");
  if (r.u16() != kSpectrumVersion) throw io::FormatError("unsupported spectrum cache version");
  const std::uint64_t count = r.u64();
  if (count != std::stoull(require(kv, "count"))) throw io::FormatError("spectrum cache count disagrees with manifest");
  file.entries.resize(count);
  for (auto& e : file.entries) {
    e.source_id = r.u64();
    const float lambda = r.f32();
    e.seed_index = r.u16();
    e.kept = r.u8() != 0;
    e.fidelity = r.f32();
    e.image = Image(file.height, file.width);
    r.f32s(e.image.pixels);
    e.label = label_of_id(e.source_id);
    bool found = false;
    for (std::size_t l = 0; l < levels.size(); ++l) {
      if (static_cast<float>(levels[l]) == lambda) {
        e.level_index = l;
        e.lambda = levels[l];
        found = true;
        break;
      }
    }
    if (!found) throw io::FormatError("spectrum entry level not in manifest grid");
  }
  return file;
}

void save_filter_model(const FilterModel& filter, const std::filesystem::path& path) {
  std::ostringstream buf;
  save_classifier(filter.classifier, buf);
  io::BinaryWriter w(buf);
  w.bytes("DSFR");
  w.u16(kFilterVersion);
  w.u16(static_cast<std::uint16_t>(filter.references.rows()));
  w.u16(static_cast<std::uint16_t>(filter.references.cols()));
  const nn::RowMat<float> refs = filter.references.cast<float>();
  w.f32s(std::span<const float>(refs.data(), static_cast<std::size_t>(refs.size())));
  io::write_file_atomic(path, buf.str());
}

FilterModel load_filter_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open filter model " + path.string());
  FilterModel filter{load_classifier(in), {}};
  io::BinaryReader r(in);
  r.expect("DSFR", "filter references");
  if (r.u16() != kFilterVersion) throw io::FormatError("unsupported filter reference version");
  const int rows = r.u16();
  const int cols = r.u16();
  if (rows != filter.classifier.num_classes() || cols != filter.classifier.architecture().embed_dim) {
    throw io::FormatError("filter references do not match the classifier");
  }
  nn::RowMat<float> refs(rows, cols);
  r.f32s(std::span<float>(refs.data(), static_cast<std::size_t>(refs.size())));
  filter.references = refs.cast<double>();
  return filter;
}

}  // namespace discl
