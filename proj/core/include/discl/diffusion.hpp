#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "discl/image.hpp"
#include "discl/noise_model.hpp"
#include "discl/sample.hpp"
#include "discl/schedule.hpp"

namespace discl {

enum class Sampler { ancestral, ddim };

struct GenerationConfig {
  /// Text-guidance strength of classifier-free guidance.
  double w = 3.0;
  GuidanceLevel lambda{0.0};
  Sampler sampler = Sampler::ancestral;
  std::uint64_t seed = 0;
  /// Number of strided steps used by the DDIM sampler.
  int ddim_steps = 20;
  /// Clamp generated pixels to [0, 1]. Off only for distribution checks.
  bool clamp_output = true;
};

/// sqrt(ab_t) z + sqrt(1 - ab_t) eps. t == 0 returns z_real unchanged.
Image forward_noise(const Image& z_real, int t, const Image& eps, const VarianceSchedule& schedule);

/// (1 + w) eps(z, t | c) - w eps(z, t).
Image cfg_noise(const NoiseEstimator& model, const Image& z_t, int t, Condition c, double w);
Batch cfg_noise(const NoiseEstimator& model, const Batch& z_t, int t, std::span<const Condition> conditions, double w);

/// One ancestral update z_t -> z_{t-1}. The additive noise is dropped at t == 1.
Image ancestral_step(const Image& z_t, const Image& eps_hat, int t, const VarianceSchedule& schedule,
                     const Image& eps_prime);
Batch ancestral_step(const Batch& z_t, const Batch& eps_hat, int t, const VarianceSchedule& schedule,
                     const Batch& eps_prime);

/// Deterministic (eta = 0) DDIM update z_t -> z_{t_prev}.
Image ddim_step(const Image& z_t, const Image& eps_hat, int t, int t_prev, const VarianceSchedule& schedule);
Batch ddim_step(const Batch& z_t, const Batch& eps_hat, int t, int t_prev, const VarianceSchedule& schedule);

/// Strided DDIM step sequence from `start` down to 0, both included.
std::vector<int> ddim_timesteps(int start, int count);

/// Image-guided generation: noise the source to t(lambda), then denoise with
/// classifier-free guidance. lambda with t(lambda) == 0 returns the source.
Image generate_guided(const NoiseEstimator& model, const Image& z_real, Condition c, const GenerationConfig& cfg,
                      const VarianceSchedule& schedule);

struct GuidedJob {
  const Image* source = nullptr;
  Condition condition = Condition::unconditional();
  std::uint64_t seed = 0;
};

/// Runs many jobs sharing one guidance level in lock-step. Row i draws all of
/// its noise from Rng(jobs[i].seed), exactly as generate_guided does with
/// cfg.seed, so results do not depend on how jobs are grouped beyond float
/// rounding in the batched matrix products.
std::vector<Image> generate_guided_batch(const NoiseEstimator& model, std::span<const GuidedJob> jobs,
                                         const GenerationConfig& cfg, const VarianceSchedule& schedule);

struct NoiseTrainConfig {
  int epochs = 60;
  int batch_size = 64;
  double learn_rate = 1e-3;
  double cond_dropout_p = 0.1;
  std::uint64_t seed = 0;
  /// Observes the condition vector of every training batch.
  std::function<void(std::span<const Condition>)> on_batch;
};

struct NoiseTrainResult {
  NoiseModel model;
  std::vector<double> epoch_loss;
};

/// Standard denoising objective with condition dropout for the unconditional
/// branch. Throws std::runtime_error on a non-finite loss.
NoiseTrainResult train_noise_model(std::span<const LabeledImage> train, const VarianceSchedule& schedule,
                                   const NoiseArchitecture& arch, const NoiseTrainConfig& cfg);

/// Noise-prediction MSE of `model` at step t over `data`, averaged over `draws`
/// noise samples per image.
double noise_prediction_mse(const NoiseEstimator& model, std::span<const LabeledImage> data, int t,
                            const VarianceSchedule& schedule, int draws, std::uint64_t seed);

Batch to_batch(std::span<const Image> images);
Image row_to_image(const Batch& batch, Eigen::Index row, int height, int width);

}  // namespace discl
