#include "discl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "discl/io.hpp"
#include "discl/random.hpp"

namespace discl {

std::string to_string(ClassGroup g) {
  switch (g) {
    case ClassGroup::many: return "many";
    case ClassGroup::medium: return "medium";
    case ClassGroup::few: return "few";
  }
  return "?";
}

void validate(const DatasetSpec& spec) {
  if (spec.num_classes < 2) throw std::invalid_argument("dataset needs at least two classes");
  if (spec.num_classes > 0xffff) throw std::invalid_argument("too many classes");
  if (spec.imbalance_ratio < 1.0) throw std::invalid_argument("imbalance ratio must be >= 1");
  if (spec.head_count < 1) throw std::invalid_argument("head count must be positive");
  if (spec.image_size < 8 || spec.image_size > 64) throw std::invalid_argument("image size must lie in [8, 64]");
  if (spec.test_per_class < 1) throw std::invalid_argument("test_per_class must be positive");
  if (!(spec.corruption_fraction >= 0.0 && spec.corruption_fraction <= 1.0)) {
    throw std::invalid_argument("corruption fraction must lie in [0, 1]");
  }
  if (spec.blur_sigma < 0.0 || spec.noise_sigma < 0.0) throw std::invalid_argument("corruption strengths must be >= 0");
  if (spec.background_family != 0 && spec.background_family != 1) {
    throw std::invalid_argument("background_family must be 0 or 1");
  }
}

std::vector<int> longtail_counts(const DatasetSpec& spec) {
  validate(spec);
  std::vector<int> counts(static_cast<std::size_t>(spec.num_classes));
  for (int i = 0; i < spec.num_classes; ++i) {
    const double exponent = -static_cast<double>(i) / (spec.num_classes - 1);
    counts[static_cast<std::size_t>(i)] =
        static_cast<int>(std::lround(spec.head_count * std::pow(spec.imbalance_ratio, exponent)));
    if (counts[static_cast<std::size_t>(i)] < 1) {
      throw std::invalid_argument("long-tail profile yields an empty class " + std::to_string(i));
    }
  }
  return counts;
}

ClassGroup group_for_count(int count) {
  if (count >= 100) return ClassGroup::many;
  if (count >= 20) return ClassGroup::medium;
  return ClassGroup::few;
}

std::set<int> classes_in_group(const std::map<int, ClassGroup>& groups, ClassGroup g) {
  std::set<int> out;
  for (const auto& [cls, group] : groups) {
    if (group == g) out.insert(cls);
  }
  return out;
}

namespace {

using Mask = std::vector<std::uint8_t>;

int hamming(const Mask& a, const Mask& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

Mask smooth(const Mask& m, int n) {
  Mask out(m.size(), 0);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      int on = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy;
          const int xx = x + dx;
          if (yy >= 0 && yy < n && xx >= 0 && xx < n) on += m[static_cast<std::size_t>(yy * n + xx)];
        }
      }
      out[static_cast<std::size_t>(y * n + x)] = on >= 5 ? 1 : 0;
    }
  }
  return out;
}

Mask cellular_glyph(Rng& rng, int n) {
  Mask m(static_cast<std::size_t>(n * n), 0);
  const int lo = n / 8;
  const int hi = n - lo;
  for (int y = lo; y < hi; ++y) {
    for (int x = lo; x < hi; ++x) m[static_cast<std::size_t>(y * n + x)] = rng.bernoulli(0.5) ? 1 : 0;
  }
  for (int k = 0; k < 2; ++k) m = smooth(m, n);
  return m;
}

// Flip a random subset of boundary cells.
Mask pose_variant(const Mask& base, Rng& rng, int n) {
  Mask out = base;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const auto v = base[static_cast<std::size_t>(y * n + x)];
      bool boundary = false;
      const int dirs[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
      for (const auto& d : dirs) {
        const int yy = y + d[0];
        const int xx = x + d[1];
        if (yy >= 0 && yy < n && xx >= 0 && xx < n && base[static_cast<std::size_t>(yy * n + xx)] != v) boundary = true;
      }
      if (boundary && rng.bernoulli(0.35)) out[static_cast<std::size_t>(y * n + x)] = 1 - v;
    }
  }
  return out;
}

struct Domain {
  std::vector<int> backgrounds;
  int corruption_id = 0;
};

Domain in_domain(const DatasetSpec& spec) {
  const int base = spec.background_family == 0 ? 0 : 4;
  return {{base, base + 1, base + 2, base + 3}, 0};
}

Domain out_of_domain(const DatasetSpec& spec) {
  const int base = spec.background_family == 0 ? 4 : 0;
  return {{base, base + 1, base + 2, base + 3}, 1};
}

void texture(int family, Rng& rng, int n, std::vector<double>& out) {
  out.assign(static_cast<std::size_t>(n * n), 0.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double period = rng.uniform(3.0, 6.0);
  const double tau = 2.0 * std::numbers::pi;
  std::vector<double> coarse;
  if (family == 5) {
    coarse.resize(25);
    for (auto& c : coarse) c = rng.uniform();
  }
  const int cell = static_cast<int>(rng.between(2, 4));
  const int ox = static_cast<int>(rng.between(0, 3));
  const int oy = static_cast<int>(rng.between(0, 3));
  const double angle = rng.uniform(0.0, tau);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double v = 0.0;
      switch (family) {
        case 0: v = 0.5 + 0.5 * std::sin(tau * y / period + phase); break;
        case 1: v = 0.5 + 0.5 * std::sin(tau * x / period + phase); break;
        case 2: v = (((x + ox) / cell + (y + oy) / cell) % 2 == 0) ? 1.0 : 0.0; break;
        case 3: {
          const double u = (x - n / 2.0) * std::cos(angle) + (y - n / 2.0) * std::sin(angle);
          v = 0.5 + u / n;
          break;
        }
        case 4: v = 0.5 + 0.5 * std::sin(tau * (x + y) / (period * 1.41) + phase); break;
        case 5: {
          const double gx = 4.0 * x / (n - 1);
          const double gy = 4.0 * y / (n - 1);
          const int x0 = std::min(static_cast<int>(gx), 3);
          const int y0 = std::min(static_cast<int>(gy), 3);
          const double fx = gx - x0;
          const double fy = gy - y0;
          auto at = [&](int yy, int xx) { return coarse[static_cast<std::size_t>(yy * 5 + xx)]; };
          v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) + fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
          break;
        }
        case 6: v = ((x + ox) % 4 == 0 && (y + oy) % 4 == 0) ? 1.0 : 0.0; break;
        case 7: {
          const double r = std::hypot(x - n / 2.0 + 0.5, y - n / 2.0 + 0.5);
          v = 0.5 + 0.5 * std::sin(tau * r / period + phase);
          break;
        }
        default: throw std::logic_error("unknown background family");
      }
      out[static_cast<std::size_t>(y * n + x)] = std::clamp(v, 0.0, 1.0);
    }
  }
}

struct Render {
  Image image;
  std::vector<double> alpha;
};

Render render_glyph(const std::vector<Mask>& variants, const Domain& domain, Rng& rng, int n) {
  const auto& mask = variants[static_cast<std::size_t>(rng.below(variants.size()))];
  const double theta = rng.uniform(-15.0, 15.0) * std::numbers::pi / 180.0;
  const double tx = static_cast<double>(rng.between(-2, 2));
  const double ty = static_cast<double>(rng.between(-2, 2));
  const int family = domain.backgrounds[static_cast<std::size_t>(rng.below(domain.backgrounds.size()))];
  const double bg_base = rng.uniform(0.05, 0.2);
  const double bg_amp = rng.uniform(0.1, 0.25);
  const double fg = rng.uniform(0.75, 0.95);
  std::vector<double> tex;
  texture(family, rng, n, tex);

  Render r{Image(n, n), std::vector<double>(static_cast<std::size_t>(n * n), 0.0)};
  const double c = (n - 1) / 2.0;
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  auto mask_at = [&](int yy, int xx) -> double {
    if (yy < 0 || yy >= n || xx < 0 || xx >= n) return 0.0;
    return mask[static_cast<std::size_t>(yy * n + xx)];
  };
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      // Inverse map output pixel to mask coordinates.
      const double px = x - tx - c;
      const double py = y - ty - c;
      const double mx = ct * px + st * py + c;
      const double my = -st * px + ct * py + c;
      const int x0 = static_cast<int>(std::floor(mx));
      const int y0 = static_cast<int>(std::floor(my));
      const double fx = mx - x0;
      const double fy = my - y0;
      const double a = (1 - fy) * ((1 - fx) * mask_at(y0, x0) + fx * mask_at(y0, x0 + 1)) +
                       fy * ((1 - fx) * mask_at(y0 + 1, x0) + fx * mask_at(y0 + 1, x0 + 1));
      const auto idx = static_cast<std::size_t>(y * n + x);
      const double bg = bg_base + bg_amp * tex[idx];
      r.alpha[idx] = a;
      r.image.pixels[idx] = static_cast<float>(std::clamp(bg * (1.0 - a) + fg * a, 0.0, 1.0));
    }
  }
  return r;
}

struct CorruptionParams {
  double blur_sigma;
  double noise_sigma;
  double fill_lo;
  double fill_hi;
};

CorruptionParams corruption_params(const DatasetSpec& spec, int id) {
  if (id == 0) return {spec.blur_sigma, spec.noise_sigma, 0.0, 0.15};
  return {spec.blur_sigma * 1.6, spec.noise_sigma * 1.6, 0.45, 0.65};
}

void gaussian_blur(Image& img, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= sum;
  const int h = img.height;
  const int w = img.width;
  std::vector<double> tmp(img.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[static_cast<std::size_t>(i + radius)] * img.at(y, std::clamp(x + i, 0, w - 1));
      }
      tmp[static_cast<std::size_t>(y * w + x)] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1) * w + x)];
      }
      img.at(y, x) = static_cast<float>(acc);
    }
  }
}

void corrupt(Render& r, const CorruptionParams& p, Rng& rng) {
  Image& img = r.image;
  const int n = img.height;
  int x_lo = n, x_hi = -1, y_lo = n, y_hi = -1;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      if (r.alpha[static_cast<std::size_t>(y * n + x)] > 0.5) {
        x_lo = std::min(x_lo, x);
        x_hi = std::max(x_hi, x);
        y_lo = std::min(y_lo, y);
        y_hi = std::max(y_hi, y);
      }
    }
  }
  if (x_hi < 0) {
    x_lo = y_lo = n / 4;
    x_hi = y_hi = 3 * n / 4;
  }
  const int bw = x_hi - x_lo + 1;
  const int bh = y_hi - y_lo + 1;
  const double coverage = rng.uniform(0.3, 0.6);
  const double aspect = rng.uniform(0.6, 1.6);
  const double area = coverage * bw * bh;
  const int rw = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, bw);
  const int rh = std::clamp(static_cast<int>(std::lround(area / rw)), 1, bh);
  const int rx = x_lo + static_cast<int>(rng.between(0, bw - rw));
  const int ry = y_lo + static_cast<int>(rng.between(0, bh - rh));
  const auto fill = static_cast<float>(rng.uniform(p.fill_lo, p.fill_hi));
  for (int y = ry; y < ry + rh; ++y) {
    for (int x = rx; x < rx + rw; ++x) img.at(y, x) = fill;
  }
  gaussian_blur(img, p.blur_sigma);
  for (auto& px : img.pixels) px = static_cast<float>(std::clamp(px + p.noise_sigma * rng.normal(), 0.0, 1.0));
}

LabeledImage make_sample(const DatasetSpec& spec, const std::vector<Mask>& variants, const Domain& domain, Split split,
                         int label, std::uint32_t index, bool allow_corruption) {
  const std::uint64_t id = make_sample_id(split, label, index);
  Rng rng(derive_seed(spec.seed, "render", {id}));
  Render r = render_glyph(variants, domain, rng, spec.image_size);
  if (allow_corruption && spec.corruption_fraction > 0.0) {
    Rng crng(derive_seed(spec.seed, "corrupt", {id}));
    if (crng.bernoulli(spec.corruption_fraction)) corrupt(r, corruption_params(spec, domain.corruption_id), crng);
  }
  return LabeledImage{std::move(r.image), label, Origin::real, 1.0, id};
}

Dataset render_split(const DatasetSpec& spec, const std::vector<std::vector<Mask>>& protos, const Domain& domain,
                     Split split, const std::vector<int>& counts, bool allow_corruption) {
  Dataset out;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int i = 0; i < counts[static_cast<std::size_t>(c)]; ++i) {
      out.push_back(make_sample(spec, protos[static_cast<std::size_t>(c)], domain, split, c,
                                static_cast<std::uint32_t>(i), allow_corruption));
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
  return out;
}

DataBundle assemble(const DatasetSpec& spec, const std::vector<int>& counts) {
  const auto protos = glyph_prototypes(spec);
  const Domain id_domain = in_domain(spec);
  const Domain ood_domain = out_of_domain(spec);
  const std::vector<int> balanced(static_cast<std::size_t>(spec.num_classes), spec.test_per_class);

  DataBundle b;
  b.class_counts = counts;
  b.train = render_split(spec, protos, id_domain, Split::train, counts, true);
  b.id_test = render_split(spec, protos, id_domain, Split::id_test, balanced, true);
  b.ood_test = render_split(spec, protos, ood_domain, Split::ood_test, balanced, true);
  for (int c = 0; c < spec.num_classes; ++c) b.group_of_class[c] = group_for_count(counts[static_cast<std::size_t>(c)]);
  b.train_backgrounds.insert(id_domain.backgrounds.begin(), id_domain.backgrounds.end());
  b.ood_backgrounds.insert(ood_domain.backgrounds.begin(), ood_domain.backgrounds.end());
  if (spec.corruption_fraction > 0.0) {
    b.train_corruptions.insert(id_domain.corruption_id);
    b.ood_corruptions.insert(ood_domain.corruption_id);
  }
  return b;
}

}  // namespace

std::vector<std::vector<Mask>> glyph_prototypes(const DatasetSpec& spec) {
  validate(spec);
  const int n = spec.image_size;
  const int min_distance = std::max(8, 40 * n * n / 256);
  std::vector<std::vector<Mask>> protos;
  for (int c = 0; c < spec.num_classes; ++c) {
    Mask base;
    for (std::uint64_t attempt = 0;; ++attempt) {
      if (attempt > 10000) throw std::runtime_error("could not find sufficiently distinct glyphs");
      Rng rng(derive_seed(spec.seed, "glyph", {static_cast<std::uint64_t>(c), attempt}));
      base = cellular_glyph(rng, n);
      const int on = static_cast<int>(std::count(base.begin(), base.end(), 1));
      if (on < n * n / 10 || on > n * n / 3) continue;
      bool distinct = true;
      for (const auto& other : protos) distinct = distinct && hamming(base, other.front()) >= min_distance;
      if (distinct) break;
    }
    std::vector<Mask> variants{base};
    for (int v = 1; v < kPoseVariants; ++v) {
      Rng rng(derive_seed(spec.seed, "pose", {static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(v)}));
      variants.push_back(pose_variant(base, rng, n));
    }
    protos.push_back(std::move(variants));
  }
  return protos;
}

DataBundle make_longtail_dataset(const DatasetSpec& spec) { return assemble(spec, longtail_counts(spec)); }

DataBundle make_lowquality_dataset(const DatasetSpec& spec) {
  validate(spec);
  return assemble(spec, std::vector<int>(static_cast<std::size_t>(spec.num_classes), spec.head_count));
}

Dataset make_prototype_corpus(const DatasetSpec& spec, int per_class, Split split) {
  validate(spec);
  if (per_class < 1) throw std::invalid_argument("corpus needs at least one image per class");
  return render_split(spec, glyph_prototypes(spec), in_domain(spec), split,
                      std::vector<int>(static_cast<std::size_t>(spec.num_classes), per_class), false);
}

UndersampleResult undersample_nontail(std::span<const LabeledImage> data, const std::set<int>& tail_classes,
                                      double tail_fraction, std::uint64_t seed) {
  if (!(tail_fraction > 0.0 && tail_fraction < 1.0)) throw std::invalid_argument("tail_fraction must lie in (0, 1)");
  std::vector<std::size_t> non_tail;
  std::size_t n_tail = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (tail_classes.contains(data[i].label)) {
      ++n_tail;
    } else {
      non_tail.push_back(i);
    }
  }
  if (n_tail == 0) throw std::invalid_argument("undersample_nontail: tail set is empty");

  UndersampleResult result;
  result.target_non_tail =
      static_cast<std::size_t>(std::llround(static_cast<double>(n_tail) * (1.0 - tail_fraction) / tail_fraction));
  std::vector<char> keep(data.size(), 0);
  if (result.target_non_tail >= non_tail.size()) {
    result.pool_exhausted = result.target_non_tail > non_tail.size();
    if (result.pool_exhausted) {
      spdlog::warn("undersample_nontail: wanted {} non-tail samples but only {} exist; keeping all",
                   result.target_non_tail, non_tail.size());
    }
    for (std::size_t i = 0; i < data.size(); ++i) keep[i] = 1;
  } else {
    Rng rng(derive_seed(seed, "undersample"));
    rng.shuffle(std::span<std::size_t>(non_tail));
    for (std::size_t i = 0; i < data.size(); ++i) keep[i] = tail_classes.contains(data[i].label) ? 1 : 0;
    for (std::size_t k = 0; k < result.target_non_tail; ++k) keep[non_tail[k]] = 1;
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (keep[i]) result.data.push_back(data[i]);
  }
  return result;
}

// --- persistence -----------------------------------------------------------

namespace {

constexpr std::uint16_t kDatasetVersion = 1;

void write_records(io::BinaryWriter& w, const Dataset& data) {
  for (const auto& s : data) {
    w.u64(s.sample_id);
    w.u16(static_cast<std::uint16_t>(s.label));
    w.u8(static_cast<std::uint8_t>(s.origin));
    w.f32(static_cast<float>(s.lambda));
    w.u16(static_cast<std::uint16_t>(s.image.height));
    w.u16(static_cast<std::uint16_t>(s.image.width));
    w.f32s(s.image.pixels);
  }
}

Dataset read_records(io::BinaryReader& r, std::uint64_t count) {
  Dataset out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    LabeledImage s;
    s.sample_id = r.u64();
    s.label = r.u16();
    const auto origin = r.u8();
    if (origin > 1) throw io::FormatError("dataset blob: bad origin tag");
    s.origin = static_cast<Origin>(origin);
    s.lambda = r.f32();
    const int h = r.u16();
    const int w = r.u16();
    s.image = Image(h, w);
    r.f32s(s.image.pixels);
    out.push_back(std::move(s));
  }
  return out;
}

std::string join_ints(const auto& values) {
  std::string out;
  for (const auto& v : values) {
    if (!out.empty()) out += ",";
    out += std::to_string(v);
  }
  return out;
}

std::vector<int> parse_ints(const std::string& text) {
  std::vector<int> out;
  for (const auto& item : io::split_list(text)) out.push_back(std::stoi(item));
  return out;
}

std::string blob_path(const std::filesystem::path& stem) { return stem.string() + ".dsdt"; }
std::string manifest_path(const std::filesystem::path& stem) { return stem.string() + ".manifest"; }

}  // namespace

void save_bundle(const DataBundle& bundle, const DatasetSpec& spec, const std::filesystem::path& stem) {
  std::ostringstream blob;
  io::BinaryWriter w(blob);
  w.bytes("DSDT");
  w.u16(kDatasetVersion);
  w.u64(bundle.train.size() + bundle.id_test.size() + bundle.ood_test.size());
  write_records(w, bundle.train);
  write_records(w, bundle.id_test);
  write_records(w, bundle.ood_test);

  io::KeyValues kv;
  kv["spec.num_classes"] = std::to_string(spec.num_classes);
  kv["spec.head_count"] = std::to_string(spec.head_count);
  kv["spec.imbalance_ratio"] = io::format_double(spec.imbalance_ratio);
  kv["spec.image_size"] = std::to_string(spec.image_size);
  kv["spec.test_per_class"] = std::to_string(spec.test_per_class);
  kv["spec.corruption_fraction"] = io::format_double(spec.corruption_fraction);
  kv["spec.blur_sigma"] = io::format_double(spec.blur_sigma);
  kv["spec.noise_sigma"] = io::format_double(spec.noise_sigma);
  kv["spec.background_family"] = std::to_string(spec.background_family);
  kv["spec.seed"] = std::to_string(spec.seed);
  kv["split.train"] = std::to_string(bundle.train.size());
  kv["split.id_test"] = std::to_string(bundle.id_test.size());
  kv["split.ood_test"] = std::to_string(bundle.ood_test.size());
  kv["class_counts"] = join_ints(bundle.class_counts);
  std::vector<std::string> groups;
  for (const auto& [cls, g] : bundle.group_of_class) groups.push_back(to_string(g));
  std::string group_text;
  for (const auto& g : groups) group_text += (group_text.empty() ? "" : ",") + g;
  kv["group_of_class"] = group_text;
  kv["backgrounds.train"] = join_ints(bundle.train_backgrounds);
  kv["backgrounds.ood"] = join_ints(bundle.ood_backgrounds);
  kv["corruptions.train"] = join_ints(bundle.train_corruptions);
  kv["corruptions.ood"] = join_ints(bundle.ood_corruptions);

  io::write_file_atomic(blob_path(stem), blob.str());
  io::write_file_atomic(manifest_path(stem), io::format_key_values(kv));
}

DataBundle load_bundle(const std::filesystem::path& stem, DatasetSpec* spec_out) {
  const auto kv = io::read_key_values(manifest_path(stem));
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw io::FormatError("dataset manifest missing key " + key);
    return it->second;
  };
  if (spec_out != nullptr) {
    spec_out->num_classes = std::stoi(get("spec.num_classes"));
    spec_out->head_count = std::stoi(get("spec.head_count"));
    spec_out->imbalance_ratio = std::stod(get("spec.imbalance_ratio"));
    spec_out->image_size = std::stoi(get("spec.image_size"));
    spec_out->test_per_class = std::stoi(get("spec.test_per_class"));
    spec_out->corruption_fraction = std::stod(get("spec.corruption_fraction"));
    spec_out->blur_sigma = std::stod(get("spec.blur_sigma"));
    spec_out->noise_sigma = std::stod(get("spec.noise_sigma"));
    spec_out->background_family = std::stoi(get("spec.background_family"));
    spec_out->seed = std::stoull(get("spec.seed"));
  }
  std::ifstream in(blob_path(stem), std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + blob_path(stem));
  io::BinaryReader r(in);
  r.expect("DSDT", "dataset blob");
  if (r.u16() != kDatasetVersion) throw io::FormatError("unsupported dataset blob version");
  const std::uint64_t total = r.u64();
  const auto n_train = std::stoull(get("split.train"));
  const auto n_id = std::stoull(get("split.id_test"));
  const auto n_ood = std::stoull(get("split.ood_test"));
  if (n_train + n_id + n_ood != total) throw io::FormatError("dataset manifest split counts disagree with blob");

  DataBundle b;
  b.train = read_records(r, n_train);
  b.id_test = read_records(r, n_id);
  b.ood_test = read_records(r, n_ood);
  b.class_counts = parse_ints(get("class_counts"));
  const auto groups = io::split_list(get("group_of_class"));
  for (std::size_t c = 0; c < groups.size(); ++c) {
    const auto& g = groups[c];
    b.group_of_class[static_cast<int>(c)] = g == "many" ? ClassGroup::many : g == "medium" ? ClassGroup::medium : ClassGroup::few;
  }
  for (int v : parse_ints(get("backgrounds.train"))) b.train_backgrounds.insert(v);
  for (int v : parse_ints(get("backgrounds.ood"))) b.ood_backgrounds.insert(v);
  for (int v : parse_ints(get("corruptions.train"))) b.train_corruptions.insert(v);
  for (int v : parse_ints(get("corruptions.ood"))) b.ood_corruptions.insert(v);
  return b;
}

void save_dataset(const Dataset& data, const std::filesystem::path& stem) {
  std::ostringstream blob;
  io::BinaryWriter w(blob);
  w.bytes("DSDT");
  w.u16(kDatasetVersion);
  w.u64(data.size());
  write_records(w, data);
  io::KeyValues kv;
  kv["count"] = std::to_string(data.size());
  io::write_file_atomic(blob_path(stem), blob.str());
  io::write_file_atomic(manifest_path(stem), io::format_key_values(kv));
}

Dataset load_dataset(const std::filesystem::path& stem) {
  std::ifstream in(blob_path(stem), std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + blob_path(stem));
  io::BinaryReader r(in);
  r.expect("DSDT", "dataset blob");
  if (r.u16() != kDatasetVersion) throw io::FormatError("unsupported dataset blob version");
  return read_records(r, r.u64());
}

}  // namespace discl
