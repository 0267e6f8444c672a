#include "discl/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "discl/io.hpp"
#include "discl/random.hpp"

namespace discl {

template <class S>
BasicClassifier<S>::BasicClassifier(ClassifierArchitecture arch, std::uint64_t seed) : arch_(arch) {
  if (arch_.height <= 0 || arch_.width <= 0 || arch_.channels <= 0 || arch_.embed_dim <= 0 || arch_.num_classes < 2) {
    throw std::invalid_argument("invalid classifier architecture");
  }
  Rng rng(derive_seed(seed, "classifier-init"));
  kernel_ = params_.add(9, arch_.channels);
  kernel_bias_ = params_.add(1, arch_.channels);
  hidden_ = nn::Dense::create(params_, arch_.channels * arch_.height * arch_.width, arch_.embed_dim);
  output_ = nn::Dense::create(params_, arch_.embed_dim, arch_.num_classes);
  params_.init_normal(kernel_, rng, std::sqrt(2.0));
  params_.init_normal(hidden_.weight, rng, std::sqrt(2.0));
  params_.init_normal(output_.weight, rng, 1.0);
}

template <class S>
void BasicClassifier<S>::zero_output_layer() {
  params_.value(output_.weight).setZero();
  params_.value(output_.bias).setZero();
}

template <class S>
nn::RowMat<S> BasicClassifier<S>::im2col(const nn::RowMat<S>& x) const {
  const int h = arch_.height;
  const int w = arch_.width;
  if (x.cols() != h * w) throw std::invalid_argument("classifier input has wrong width");
  nn::RowMat<S> patches(x.rows() * h * w, 9);
  for (Eigen::Index b = 0; b < x.rows(); ++b) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        const Eigen::Index row = b * h * w + y * w + xx;
        int k = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx, ++k) {
            const int sy = y + dy;
            const int sx = xx + dx;
            patches(row, k) = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? x(b, sy * w + sx) : S(0);
          }
        }
      }
    }
  }
  return patches;
}

template <class S>
nn::RowMat<S> BasicClassifier<S>::run(const nn::RowMat<S>& x, Cache& cache) const {
  cache.patches = im2col(x);
  cache.conv_pre = cache.patches * params_.value(kernel_);
  cache.conv_pre.rowwise() += params_.value(kernel_bias_).row(0);
  const nn::RowMat<S> conv_post = nn::relu(cache.conv_pre);
  // Row-major (B*H*W, C) storage is exactly the row-major (B, H*W*C) flattening.
  cache.flat = Eigen::Map<const nn::RowMat<S>>(conv_post.data(), x.rows(), conv_post.size() / std::max<Eigen::Index>(x.rows(), 1));
  cache.embed_pre = hidden_.forward(params_, cache.flat);
  cache.embed_post = nn::relu(cache.embed_pre);
  return output_.forward(params_, cache.embed_post);
}

template <class S>
nn::RowMat<S> BasicClassifier<S>::logits(const nn::RowMat<S>& x) const {
  Cache cache;
  return run(x, cache);
}

template <class S>
nn::RowMat<S> BasicClassifier<S>::embed(const nn::RowMat<S>& x) const {
  Cache cache;
  run(x, cache);
  return cache.embed_post;
}

template <class S>
nn::RowMat<S> BasicClassifier<S>::probabilities(const nn::RowMat<S>& x) const {
  return nn::softmax_rows(logits(x));
}

template <class S>
double BasicClassifier<S>::loss(const nn::RowMat<S>& x, std::span<const int> labels) const {
  const nn::RowMat<S> z = logits(x);
  double total = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double m = static_cast<double>(z.row(r).maxCoeff());
    double sum = 0.0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) sum += std::exp(static_cast<double>(z(r, c)) - m);
    total += m + std::log(sum) - static_cast<double>(z(r, labels[static_cast<std::size_t>(r)]));
  }
  return total / static_cast<double>(z.rows());
}

template <class S>
double BasicClassifier<S>::loss_and_grad(const nn::RowMat<S>& x, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != x.rows()) throw std::invalid_argument("one label per row required");
  Cache cache;
  const nn::RowMat<S> z = run(x, cache);
  nn::RowMat<S> dz = nn::softmax_rows(z);
  double total = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= arch_.num_classes) throw std::out_of_range("label outside classifier range");
    total -= std::log(std::max(static_cast<double>(dz(r, y)), 1e-300));
    dz(r, y) -= S(1);
  }
  const auto batch = static_cast<S>(x.rows());
  dz /= batch;

  nn::RowMat<S> d_embed;
  output_.backward(params_, cache.embed_post, dz, &d_embed);
  const nn::RowMat<S> d_embed_pre = nn::relu_backward(cache.embed_pre, d_embed);
  nn::RowMat<S> d_flat;
  hidden_.backward(params_, cache.flat, d_embed_pre, &d_flat);
  const Eigen::Map<const nn::RowMat<S>> d_conv_post(d_flat.data(), cache.conv_pre.rows(), cache.conv_pre.cols());
  const nn::RowMat<S> d_conv_pre = nn::relu_backward(cache.conv_pre, nn::RowMat<S>(d_conv_post));
  params_.grad(kernel_).noalias() += cache.patches.transpose() * d_conv_pre;
  params_.grad(kernel_bias_).row(0) += d_conv_pre.colwise().sum();
  return total / static_cast<double>(x.rows());
}

template class BasicClassifier<float>;
template class BasicClassifier<double>;

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 0 || cfg.curriculum_epochs < 0 || cfg.curriculum_epochs > cfg.epochs) {
    throw std::invalid_argument("train config requires 0 <= curriculum_epochs <= epochs");
  }
  if (cfg.batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (!(cfg.learn_rate >= 0.0)) throw std::invalid_argument("learn rate must be non-negative");
}

double epoch_learn_rate(const TrainConfig& cfg, int epoch) {
  if (cfg.epochs <= 0) return cfg.learn_rate;
  const double progress = std::clamp(static_cast<double>(epoch) / cfg.epochs, 0.0, 1.0);
  return cfg.learn_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

nn::RowMat<float> images_to_rows(std::span<const LabeledImage> data) {
  if (data.empty()) return nn::RowMat<float>(0, 0);
  const auto d = static_cast<Eigen::Index>(data.front().image.size());
  nn::RowMat<float> x(static_cast<Eigen::Index>(data.size()), d);
  for (std::size_t r = 0; r < data.size(); ++r) {
    if (static_cast<Eigen::Index>(data[r].image.size()) != d) throw std::invalid_argument("mixed image sizes");
    x.row(static_cast<Eigen::Index>(r)) = Eigen::Map<const nn::RowVec<float>>(data[r].image.pixels.data(), d);
  }
  return x;
}

std::vector<EpochStats> train_epochs(Classifier& clf, std::span<const LabeledImage> data, const TrainConfig& cfg,
                                     int n, int first_epoch, std::uint64_t stream) {
  validate(cfg);
  if (n < 0) throw std::invalid_argument("epoch count must be non-negative");
  std::vector<EpochStats> log;
  if (n == 0) return log;
  if (data.empty()) throw std::invalid_argument("train_epochs: empty dataset");

  std::vector<std::size_t> order(data.size());
  const auto d = static_cast<Eigen::Index>(data.front().image.size());
  for (int e = 0; e < n; ++e) {
    const int epoch = first_epoch + e;
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, "classifier-shuffle", {stream, static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(std::span<std::size_t>(order));
    const double lr = epoch_learn_rate(cfg, epoch);
    // Momentum restarts every epoch, so stage-wise calls match one long call.
    nn::Sgd opt(clf.params().size(), cfg.momentum);

    EpochStats stats;
    stats.epoch = epoch;
    stats.samples = data.size();
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      nn::RowMat<float> x(static_cast<Eigen::Index>(end - begin), d);
      std::vector<int> labels;
      for (std::size_t k = begin; k < end; ++k) {
        const auto& s = data[order[k]];
        x.row(static_cast<Eigen::Index>(k - begin)) = Eigen::Map<const nn::RowVec<float>>(s.image.pixels.data(), d);
        labels.push_back(s.label);
      }
      clf.params().zero_grad();
      const double loss = clf.loss_and_grad(x, labels);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train_epochs: non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += loss * static_cast<double>(end - begin);
      opt.step(clf.params(), lr);
    }
    const auto preds = predict_labels(clf, data);
    for (std::size_t i = 0; i < data.size(); ++i) correct += preds[i] == data[i].label;
    stats.loss = loss_sum / static_cast<double>(data.size());
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    log.push_back(stats);
  }
  return log;
}

namespace {
constexpr std::size_t kInferenceChunk = 512;
}

nn::RowMat<double> predict_proba(const Classifier& clf, std::span<const LabeledImage> data) {
  nn::RowMat<double> out(static_cast<Eigen::Index>(data.size()), clf.num_classes());
  for (std::size_t begin = 0; begin < data.size(); begin += kInferenceChunk) {
    const auto chunk = data.subspan(begin, std::min(kInferenceChunk, data.size() - begin));
    out.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(chunk.size())) =
        clf.probabilities(images_to_rows(chunk)).cast<double>();
  }
  return out;
}

std::vector<double> predict_proba(const Classifier& clf, const Image& image) {
  const LabeledImage sample{image, 0, Origin::real, 1.0, 0};
  const auto p = predict_proba(clf, std::span<const LabeledImage>(&sample, 1));
  return std::vector<double>(p.data(), p.data() + p.cols());
}

std::vector<int> predict_labels(const Classifier& clf, std::span<const LabeledImage> data) {
  const auto p = predict_proba(clf, data);
  std::vector<int> out(data.size());
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    Eigen::Index arg = 0;
    p.row(r).maxCoeff(&arg);
    out[static_cast<std::size_t>(r)] = static_cast<int>(arg);
  }
  return out;
}

std::vector<double> true_class_probability(const Classifier& clf, std::span<const LabeledImage> data) {
  const auto p = predict_proba(clf, data);
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = p(static_cast<Eigen::Index>(i), data[i].label);
  return out;
}

nn::RowMat<double> embed(const Classifier& clf, std::span<const LabeledImage> data) {
  nn::RowMat<double> out(static_cast<Eigen::Index>(data.size()), clf.architecture().embed_dim);
  for (std::size_t begin = 0; begin < data.size(); begin += kInferenceChunk) {
    const auto chunk = data.subspan(begin, std::min(kInferenceChunk, data.size() - begin));
    out.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(chunk.size())) =
        clf.embed(images_to_rows(chunk)).cast<double>();
  }
  return out;
}

std::vector<std::size_t> hard_indices(std::span<const double> probabilities, double h_hard) {
  if (!(h_hard >= 0.0 && h_hard <= 1.0)) throw std::invalid_argument("h_hard must lie in [0, 1]");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (probabilities[i] < h_hard) out.push_back(i);
  }
  return out;
}

Dataset identify_hard(const Classifier& clf, std::span<const LabeledImage> data, double h_hard) {
  const auto p = true_class_probability(clf, data);
  Dataset out;
  for (std::size_t i : hard_indices(p, h_hard)) out.push_back(data[i]);
  return out;
}

Dataset identify_hard_tail(std::span<const LabeledImage> data, const std::map<int, ClassGroup>& group_of_class) {
  Dataset out;
  for (const auto& s : data) {
    const auto it = group_of_class.find(s.label);
    if (it != group_of_class.end() && it->second == ClassGroup::few) out.push_back(s);
  }
  return out;
}

namespace {
constexpr std::uint16_t kClassifierVersion = 1;
}

void save_classifier(const Classifier& clf, std::ostream& out) {
  io::BinaryWriter w(out);
  const auto& arch = clf.architecture();
  w.bytes("DSCF");
  w.u16(kClassifierVersion);
  w.u16(static_cast<std::uint16_t>(arch.height));
  w.u16(static_cast<std::uint16_t>(arch.width));
  w.u16(static_cast<std::uint16_t>(arch.channels));
  w.u16(static_cast<std::uint16_t>(arch.embed_dim));
  w.u16(static_cast<std::uint16_t>(arch.num_classes));
  w.u64(clf.params().size());
  w.f32s(clf.params().values());
  if (!out) throw std::runtime_error("failed writing classifier checkpoint");
}

Classifier load_classifier(std::istream& in) {
  io::BinaryReader r(in);
  r.expect("DSCF", "classifier checkpoint");
  if (const auto version = r.u16(); version != kClassifierVersion) {
    throw io::FormatError("unsupported classifier checkpoint version " + std::to_string(version));
  }
  ClassifierArchitecture arch;
  arch.height = r.u16();
  arch.width = r.u16();
  arch.channels = r.u16();
  arch.embed_dim = r.u16();
  arch.num_classes = r.u16();
  Classifier clf(arch, 0);
  if (r.u64() != clf.params().size()) throw io::FormatError("classifier parameter count does not match architecture");
  r.f32s(clf.params().values());
  return clf;
}

void save_classifier(const Classifier& clf, const std::string& path) {
  std::ostringstream buf;
  save_classifier(clf, buf);
  io::write_file_atomic(path, buf.str());
}

Classifier load_classifier(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open classifier checkpoint " + path);
  return load_classifier(in);
}

}  // namespace discl
