#include "discl/noise_model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "discl/io.hpp"

namespace discl {

template <class S>
nn::RowMat<S> time_embedding(std::span<const int> steps, int dim) {
  if (dim % 2 != 0) throw std::invalid_argument("time embedding dimension must be even");
  const int half = dim / 2;
  nn::RowMat<S> out(static_cast<Eigen::Index>(steps.size()), dim);
  for (std::size_t r = 0; r < steps.size(); ++r) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double arg = steps[r] * freq;
      out(static_cast<Eigen::Index>(r), i) = static_cast<S>(std::sin(arg));
      out(static_cast<Eigen::Index>(r), half + i) = static_cast<S>(std::cos(arg));
    }
  }
  return out;
}

template <class S>
BasicNoiseModel<S>::BasicNoiseModel(NoiseArchitecture arch, std::uint64_t seed) : arch_(std::move(arch)) {
  if (arch_.height <= 0 || arch_.width <= 0 || arch_.num_classes <= 0 || arch_.class_dim <= 0 ||
      arch_.time_dim <= 0 || arch_.hidden.empty()) {
    throw std::invalid_argument("invalid noise model architecture");
  }
  for (int width : arch_.hidden) {
    if (width <= 0) throw std::invalid_argument("invalid noise model architecture");
  }
  Rng rng(derive_seed(seed, "noise-model-init"));
  class_table_ = params_.add(arch_.num_classes + 1, arch_.class_dim);
  params_.init_normal(class_table_, rng, std::sqrt(static_cast<double>(arch_.num_classes + 1)));
  const int extra = arch_.condition_every_layer ? cond_dim() : 0;
  int in = arch_.pixels() + cond_dim();
  for (int width : arch_.hidden) {
    layers_.push_back(nn::Dense::create(params_, in, width));
    params_.init_normal(layers_.back().weight, rng, arch_.activation == Activation::relu ? std::sqrt(2.0) : 1.0);
    in = width + extra;
  }
  layers_.push_back(nn::Dense::create(params_, in, arch_.pixels()));
  params_.init_normal(layers_.back().weight, rng, 0.5);
  if (arch_.input_skip) {
    skip_ = nn::Dense::create(params_, arch_.pixels() + arch_.time_dim, arch_.pixels());
    params_.init_normal(skip_.weight, rng, 0.5);
  }
}

template <class S>
int BasicNoiseModel<S>::embedding_row(const Condition& c) const {
  if (c.is_unconditional()) return arch_.num_classes;
  if (c.class_index() >= arch_.num_classes) throw std::out_of_range("condition class outside model range");
  return c.class_index();
}

template <class S>
nn::RowMat<S> BasicNoiseModel<S>::run(const nn::RowMat<S>& z, std::span<const int> steps,
                                      std::span<const Condition> conditions, Cache* cache) const {
  const Eigen::Index rows = z.rows();
  if (z.cols() != arch_.pixels()) throw std::invalid_argument("noise model input has wrong width");
  if (static_cast<Eigen::Index>(steps.size()) != rows || static_cast<Eigen::Index>(conditions.size()) != rows) {
    throw std::invalid_argument("noise model batch sizes disagree");
  }
  const int d = arch_.pixels();
  const int cd = cond_dim();
  nn::RowMat<S> cond(rows, cd);
  cond.leftCols(arch_.time_dim) = time_embedding<S>(steps, arch_.time_dim);
  const auto table = params_.value(class_table_);
  for (Eigen::Index r = 0; r < rows; ++r) {
    cond.row(r).rightCols(arch_.class_dim) = table.row(embedding_row(conditions[static_cast<std::size_t>(r)]));
  }

  nn::RowMat<S> x(rows, d + cd);
  x.leftCols(d) = z;
  x.rightCols(cd) = cond;
  if (cache != nullptr) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    nn::RowMat<S> a = layers_[l].forward(params_, x);
    nn::RowMat<S> h = arch_.activation == Activation::silu ? nn::silu(a) : nn::relu(a);
    nn::RowMat<S> next(rows, h.cols() + (arch_.condition_every_layer ? cd : 0));
    next.leftCols(h.cols()) = h;
    if (arch_.condition_every_layer) next.rightCols(cd) = cond;
    if (cache != nullptr) {
      cache->inputs.push_back(std::move(x));
      cache->pre.push_back(std::move(a));
    }
    x = std::move(next);
  }
  nn::RowMat<S> out = layers_.back().forward(params_, x);
  if (cache != nullptr) cache->inputs.push_back(std::move(x));
  if (arch_.input_skip) {
    nn::RowMat<S> s(rows, d + arch_.time_dim);
    s.leftCols(d) = z;
    s.rightCols(arch_.time_dim) = cond.leftCols(arch_.time_dim);
    out += skip_.forward(params_, s);
    if (cache != nullptr) cache->skip_input = std::move(s);
  }
  return out;
}

template <class S>
nn::RowMat<S> BasicNoiseModel<S>::forward(const nn::RowMat<S>& z, std::span<const int> steps,
                                          std::span<const Condition> conditions) const {
  return run(z, steps, conditions, nullptr);
}

template <class S>
Batch BasicNoiseModel<S>::predict(const Batch& z, int t, std::span<const Condition> conditions) const {
  const std::vector<int> steps(static_cast<std::size_t>(z.rows()), t);
  return run(z.template cast<S>(), steps, conditions, nullptr).template cast<double>();
}

template <class S>
double BasicNoiseModel<S>::loss_and_grad(const nn::RowMat<S>& z, std::span<const int> steps,
                                         std::span<const Condition> conditions, const nn::RowMat<S>& target) {
  Cache cache;
  const nn::RowMat<S> out = run(z, steps, conditions, &cache);
  const nn::RowMat<S> diff = out - target;
  const double count = static_cast<double>(diff.size());
  const double loss = static_cast<double>(diff.squaredNorm()) / count;

  const nn::RowMat<S> grad = diff * static_cast<S>(2.0 / count);
  const int cd = cond_dim();
  nn::RowMat<S> cond_grad = nn::RowMat<S>::Zero(z.rows(), cd);
  nn::RowMat<S> dx;
  layers_.back().backward(params_, cache.inputs.back(), grad, &dx);
  for (std::size_t l = layers_.size() - 1; l-- > 0;) {
    if (arch_.condition_every_layer) cond_grad += dx.rightCols(cd);
    const nn::RowMat<S> dh = dx.leftCols(cache.pre[l].cols());
    const nn::RowMat<S> da = arch_.activation == Activation::silu ? nn::silu_backward(cache.pre[l], dh)
                                                                  : nn::relu_backward(cache.pre[l], dh);
    layers_[l].backward(params_, cache.inputs[l], da, &dx);
  }
  cond_grad += dx.rightCols(cd);
  if (arch_.input_skip) skip_.backward<S>(params_, cache.skip_input, grad, nullptr);

  auto table_grad = params_.grad(class_table_);
  for (Eigen::Index r = 0; r < cond_grad.rows(); ++r) {
    table_grad.row(embedding_row(conditions[static_cast<std::size_t>(r)])) +=
        cond_grad.row(r).rightCols(arch_.class_dim);
  }
  return loss;
}

template nn::RowMat<float> time_embedding<float>(std::span<const int>, int);
template nn::RowMat<double> time_embedding<double>(std::span<const int>, int);
template class BasicNoiseModel<float>;
template class BasicNoiseModel<double>;

AnalyticGaussianModel::AnalyticGaussianModel(std::vector<double> mu, double sigma2, const VarianceSchedule& schedule)
    : mu_(std::move(mu)), sigma2_(sigma2) {
  if (!(sigma2 > 0.0)) throw std::invalid_argument("analytic gaussian model needs sigma2 > 0");
  if (mu_.empty()) throw std::invalid_argument("analytic gaussian model needs a non-empty mean");
  alpha_bar_.resize(static_cast<std::size_t>(schedule.steps()) + 1);
  for (int t = 0; t <= schedule.steps(); ++t) alpha_bar_[static_cast<std::size_t>(t)] = schedule.alpha_bar(t);
}

Batch AnalyticGaussianModel::predict(const Batch& z, int t, std::span<const Condition> conditions) const {
  if (z.cols() != dim()) throw std::invalid_argument("analytic model input has wrong width");
  if (static_cast<Eigen::Index>(conditions.size()) != z.rows()) throw std::invalid_argument("batch sizes disagree");
  if (t < 0 || t >= static_cast<int>(alpha_bar_.size())) throw std::out_of_range("step outside schedule");
  const double ab = alpha_bar_[static_cast<std::size_t>(t)];
  const double scale = std::sqrt(1.0 - ab) / (ab * sigma2_ + 1.0 - ab);
  const double root_ab = std::sqrt(ab);
  Batch out(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      out(r, c) = scale * (z(r, c) - root_ab * mu_[static_cast<std::size_t>(c)]);
    }
  }
  return out;
}

namespace {
constexpr std::uint16_t kNoiseModelVersion = 1;
}

void save_noise_model(const NoiseModel& model, std::ostream& out) {
  io::BinaryWriter w(out);
  const auto& arch = model.architecture();
  w.bytes("DSNM");
  w.u16(kNoiseModelVersion);
  w.u16(static_cast<std::uint16_t>(arch.height));
  w.u16(static_cast<std::uint16_t>(arch.width));
  w.u16(static_cast<std::uint16_t>(arch.num_classes));
  w.u16(static_cast<std::uint16_t>(arch.time_dim));
  w.u16(static_cast<std::uint16_t>(arch.class_dim));
  w.u16(static_cast<std::uint16_t>(arch.activation));
  w.u16(static_cast<std::uint16_t>((arch.input_skip ? 1u : 0u) | (arch.condition_every_layer ? 2u : 0u)));
  w.u16(static_cast<std::uint16_t>(arch.hidden.size()));
  for (int width : arch.hidden) w.u32(static_cast<std::uint32_t>(width));
  w.u64(model.params().size());
  w.f32s(model.params().values());
  if (!out) throw std::runtime_error("failed writing noise model checkpoint");
}

NoiseModel load_noise_model(std::istream& in) {
  io::BinaryReader r(in);
  r.expect("DSNM", "noise model checkpoint");
  if (const auto version = r.u16(); version != kNoiseModelVersion) {
    throw io::FormatError("unsupported noise model checkpoint version " + std::to_string(version));
  }
  NoiseArchitecture arch;
  arch.height = r.u16();
  arch.width = r.u16();
  arch.num_classes = r.u16();
  arch.time_dim = r.u16();
  arch.class_dim = r.u16();
  const auto act = r.u16();
  if (act > 1) throw io::FormatError("unknown activation id in noise model checkpoint");
  arch.activation = static_cast<Activation>(act);
  const auto flags = r.u16();
  if (flags > 3) throw io::FormatError("unknown architecture flags in noise model checkpoint");
  arch.input_skip = (flags & 1u) != 0;
  arch.condition_every_layer = (flags & 2u) != 0;
  arch.hidden.resize(r.u16());
  for (int& width : arch.hidden) width = static_cast<int>(r.u32());
  NoiseModel model(arch, 0);
  const std::uint64_t count = r.u64();
  if (count != model.params().size()) throw io::FormatError("noise model parameter count does not match architecture");
  r.f32s(model.params().values());
  return model;
}

void save_noise_model(const NoiseModel& model, const std::string& path) {
  std::ostringstream buf;
  save_noise_model(model, buf);
  io::write_file_atomic(path, buf.str());
}

NoiseModel load_noise_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open noise model checkpoint " + path);
  return load_noise_model(in);
}

}  // namespace discl
