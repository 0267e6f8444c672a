#include "discl/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace discl {

namespace {

Batch image_row(const Image& img) {
  Batch b(1, static_cast<Eigen::Index>(img.size()));
  for (std::size_t i = 0; i < img.size(); ++i) b(0, static_cast<Eigen::Index>(i)) = img.pixels[i];
  return b;
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": image shapes differ");
}

void require_same_shape(const Batch& a, const Batch& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(what) + ": batch shapes differ");
  }
}

}  // namespace

Batch to_batch(std::span<const Image> images) {
  if (images.empty()) return Batch(0, 0);
  Batch b(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(images.front().size()));
  for (std::size_t r = 0; r < images.size(); ++r) {
    if (!images[r].same_shape(images.front())) throw std::invalid_argument("to_batch: image shapes differ");
    for (std::size_t i = 0; i < images[r].size(); ++i) {
      b(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = images[r].pixels[i];
    }
  }
  return b;
}

Image row_to_image(const Batch& batch, Eigen::Index row, int height, int width) {
  Image img(height, width);
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = static_cast<float>(batch(row, static_cast<Eigen::Index>(i)));
  return img;
}

Image forward_noise(const Image& z_real, int t, const Image& eps, const VarianceSchedule& schedule) {
  require_same_shape(z_real, eps, "forward_noise");
  const double ab = schedule.alpha_bar(t);
  if (t == 0) return z_real;
  const double a = std::sqrt(ab);
  const double s = std::sqrt(1.0 - ab);
  Image out(z_real.height, z_real.width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.pixels[i] = static_cast<float>(a * z_real.pixels[i] + s * eps.pixels[i]);
  }
  return out;
}

Batch cfg_noise(const NoiseEstimator& model, const Batch& z_t, int t, std::span<const Condition> conditions,
                double w) {
  if (static_cast<Eigen::Index>(conditions.size()) != z_t.rows()) {
    throw std::invalid_argument("cfg_noise: one condition per row required");
  }
  for (const auto& c : conditions) {
    if (c.is_unconditional()) throw std::invalid_argument("cfg_noise needs a class condition");
  }
  if (w == 0.0) return model.predict(z_t, t, conditions);

  const Eigen::Index rows = z_t.rows();
  Batch stacked(2 * rows, z_t.cols());
  stacked.topRows(rows) = z_t;
  stacked.bottomRows(rows) = z_t;
  std::vector<Condition> conds(conditions.begin(), conditions.end());
  conds.resize(static_cast<std::size_t>(2 * rows), Condition::unconditional());
  const Batch both = model.predict(stacked, t, conds);
  return (1.0 + w) * both.topRows(rows) - w * both.bottomRows(rows);
}

Image cfg_noise(const NoiseEstimator& model, const Image& z_t, int t, Condition c, double w) {
  const Batch out = cfg_noise(model, image_row(z_t), t, std::span<const Condition>(&c, 1), w);
  return row_to_image(out, 0, z_t.height, z_t.width);
}

Batch ancestral_step(const Batch& z_t, const Batch& eps_hat, int t, const VarianceSchedule& schedule,
                     const Batch& eps_prime) {
  if (t < 1) throw std::invalid_argument("ancestral_step requires t >= 1");
  require_same_shape(z_t, eps_hat, "ancestral_step");
  require_same_shape(z_t, eps_prime, "ancestral_step");
  const double beta = schedule.beta(t);
  const double alpha = schedule.alpha(t);
  const double ab = schedule.alpha_bar(t);
  Batch out = (z_t - (beta / std::sqrt(1.0 - ab)) * eps_hat) / std::sqrt(alpha);
  if (t > 1) out += std::sqrt(beta) * eps_prime;
  return out;
}

Image ancestral_step(const Image& z_t, const Image& eps_hat, int t, const VarianceSchedule& schedule,
                     const Image& eps_prime) {
  require_same_shape(z_t, eps_hat, "ancestral_step");
  require_same_shape(z_t, eps_prime, "ancestral_step");
  const Batch out = ancestral_step(image_row(z_t), image_row(eps_hat), t, schedule, image_row(eps_prime));
  return row_to_image(out, 0, z_t.height, z_t.width);
}

Batch ddim_step(const Batch& z_t, const Batch& eps_hat, int t, int t_prev, const VarianceSchedule& schedule) {
  if (t <= t_prev) throw std::invalid_argument("ddim_step requires t > t_prev");
  if (t_prev < 0) throw std::invalid_argument("ddim_step requires t_prev >= 0");
  require_same_shape(z_t, eps_hat, "ddim_step");
  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t_prev);
  const Batch x0 = (z_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
  if (ab_prev == 1.0) return x0;
  return std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps_hat;
}

Image ddim_step(const Image& z_t, const Image& eps_hat, int t, int t_prev, const VarianceSchedule& schedule) {
  require_same_shape(z_t, eps_hat, "ddim_step");
  const Batch out = ddim_step(image_row(z_t), image_row(eps_hat), t, t_prev, schedule);
  return row_to_image(out, 0, z_t.height, z_t.width);
}

std::vector<int> ddim_timesteps(int start, int count) {
  if (start < 0) throw std::invalid_argument("ddim_timesteps: negative start");
  if (count < 1) throw std::invalid_argument("ddim_timesteps: need at least one step");
  const int n = std::min(count, start);
  std::vector<int> steps;
  for (int k = 0; k <= n; ++k) {
    steps.push_back(static_cast<int>(std::lround(static_cast<double>(start) * (n - k) / std::max(n, 1))));
  }
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  return steps;
}

std::vector<Image> generate_guided_batch(const NoiseEstimator& model, std::span<const GuidedJob> jobs,
                                         const GenerationConfig& cfg, const VarianceSchedule& schedule) {
  std::vector<Image> out;
  if (jobs.empty()) return out;
  const Image& first = *jobs.front().source;
  for (const auto& job : jobs) {
    if (job.source == nullptr) throw std::invalid_argument("generate_guided: missing source image");
    require_same_shape(*job.source, first, "generate_guided");
  }
  if (static_cast<int>(first.size()) != model.dim()) {
    throw std::invalid_argument("generate_guided: image size does not match the noise model");
  }

  const int t0 = start_step(cfg.lambda, schedule.steps());
  if (t0 == 0) {
    for (const auto& job : jobs) out.push_back(*job.source);
    return out;
  }

  const auto rows = static_cast<Eigen::Index>(jobs.size());
  const auto cols = static_cast<Eigen::Index>(first.size());
  std::vector<Rng> streams;
  std::vector<Condition> conditions;
  streams.reserve(jobs.size());
  for (const auto& job : jobs) {
    streams.emplace_back(job.seed);
    conditions.push_back(job.condition);
  }
  auto draw = [&](Batch& noise) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      auto& rng = streams[static_cast<std::size_t>(r)];
      for (Eigen::Index c = 0; c < cols; ++c) noise(r, c) = rng.normal();
    }
  };

  Batch z(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& px = jobs[static_cast<std::size_t>(r)].source->pixels;
    for (Eigen::Index c = 0; c < cols; ++c) z(r, c) = px[static_cast<std::size_t>(c)];
  }
  Batch noise(rows, cols);
  draw(noise);
  const double ab0 = schedule.alpha_bar(t0);
  z = std::sqrt(ab0) * z + std::sqrt(1.0 - ab0) * noise;

  if (cfg.sampler == Sampler::ancestral) {
    for (int t = t0; t >= 1; --t) {
      const Batch eps_hat = cfg_noise(model, z, t, conditions, cfg.w);
      if (t > 1) {
        draw(noise);
      } else {
        noise.setZero();
      }
      z = ancestral_step(z, eps_hat, t, schedule, noise);
    }
  } else {
    const auto steps = ddim_timesteps(t0, cfg.ddim_steps);
    for (std::size_t k = 0; k + 1 < steps.size(); ++k) {
      const Batch eps_hat = cfg_noise(model, z, steps[k], conditions, cfg.w);
      z = ddim_step(z, eps_hat, steps[k], steps[k + 1], schedule);
    }
  }

  out.reserve(jobs.size());
  for (Eigen::Index r = 0; r < rows; ++r) {
    Image img = row_to_image(z, r, first.height, first.width);
    if (cfg.clamp_output) {
      for (auto& p : img.pixels) p = std::clamp(p, 0.0f, 1.0f);
    }
    out.push_back(std::move(img));
  }
  return out;
}

Image generate_guided(const NoiseEstimator& model, const Image& z_real, Condition c, const GenerationConfig& cfg,
                      const VarianceSchedule& schedule) {
  const GuidedJob job{&z_real, c, cfg.seed};
  return std::move(generate_guided_batch(model, std::span<const GuidedJob>(&job, 1), cfg, schedule).front());
}

NoiseTrainResult train_noise_model(std::span<const LabeledImage> train, const VarianceSchedule& schedule,
                                   const NoiseArchitecture& arch, const NoiseTrainConfig& cfg) {
  if (train.empty()) throw std::invalid_argument("train_noise_model: empty training set");
  if (!(cfg.cond_dropout_p >= 0.0 && cfg.cond_dropout_p < 1.0)) {
    throw std::invalid_argument("train_noise_model: cond_dropout_p must lie in [0, 1)");
  }
  if (cfg.batch_size < 1 || cfg.epochs < 0) throw std::invalid_argument("train_noise_model: bad batch/epoch count");
  for (const auto& s : train) {
    if (static_cast<int>(s.image.size()) != arch.pixels()) {
      throw std::invalid_argument("train_noise_model: image size does not match architecture");
    }
  }

  NoiseTrainResult result{NoiseModel(arch, derive_seed(cfg.seed, "noise-train")), {}};
  auto& model = result.model;
  nn::Adam adam(model.params().size());
  const int d = arch.pixels();
  const int total_steps = schedule.steps();
  const std::size_t batches_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const double total_iters = static_cast<double>(batches_per_epoch) * std::max(cfg.epochs, 1);

  std::vector<std::size_t> order(train.size());
  long long iter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(cfg.seed, "noise-shuffle", {static_cast<std::uint64_t>(epoch)}));
    shuffle_rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const auto rows = static_cast<Eigen::Index>(end - begin);
      Rng rng(derive_seed(cfg.seed, "noise-batch", {static_cast<std::uint64_t>(epoch), b}));

      nn::RowMat<float> z(rows, d);
      nn::RowMat<float> eps(rows, d);
      std::vector<int> steps(static_cast<std::size_t>(rows));
      std::vector<Condition> conds;
      conds.reserve(static_cast<std::size_t>(rows));
      for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& sample = train[order[begin + static_cast<std::size_t>(r)]];
        const int t = static_cast<int>(rng.between(1, total_steps));
        steps[static_cast<std::size_t>(r)] = t;
        const double ab = schedule.alpha_bar(t);
        const double a = std::sqrt(ab);
        const double s = std::sqrt(1.0 - ab);
        for (int c = 0; c < d; ++c) {
          const double e = rng.normal();
          eps(r, c) = static_cast<float>(e);
          z(r, c) = static_cast<float>(a * sample.image.pixels[static_cast<std::size_t>(c)] + s * e);
        }
        const bool drop = cfg.cond_dropout_p > 0.0 && rng.bernoulli(cfg.cond_dropout_p);
        conds.push_back(drop ? Condition::unconditional() : Condition::of_class(sample.label));
      }
      if (cfg.on_batch) cfg.on_batch(conds);

      model.params().zero_grad();
      const double loss = model.loss_and_grad(z, steps, conds, eps);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train_noise_model: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(b));
      }
      loss_sum += loss * static_cast<double>(rows);
      const double progress = static_cast<double>(iter++) / total_iters;
      const double lr = cfg.learn_rate * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
      adam.step(model.params(), lr);
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(train.size()));
  }
  return result;
}

double noise_prediction_mse(const NoiseEstimator& model, std::span<const LabeledImage> data, int t,
                            const VarianceSchedule& schedule, int draws, std::uint64_t seed) {
  if (data.empty() || draws < 1) throw std::invalid_argument("noise_prediction_mse: nothing to evaluate");
  Rng rng(derive_seed(seed, "noise-mse"));
  const double ab = schedule.alpha_bar(t);
  const auto d = static_cast<Eigen::Index>(data.front().image.size());
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& sample : data) {
    Batch z(draws, d);
    Batch eps(draws, d);
    for (int k = 0; k < draws; ++k) {
      for (Eigen::Index c = 0; c < d; ++c) {
        eps(k, c) = rng.normal();
        z(k, c) = std::sqrt(ab) * sample.image.pixels[static_cast<std::size_t>(c)] + std::sqrt(1.0 - ab) * eps(k, c);
      }
    }
    const std::vector<Condition> conds(static_cast<std::size_t>(draws), Condition::of_class(sample.label));
    total += (model.predict(z, t, conds) - eps).squaredNorm();
    count += static_cast<std::size_t>(draws * d);
  }
  return total / static_cast<double>(count);
}

}  // namespace discl
