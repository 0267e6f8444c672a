#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "discl/image.hpp"
#include "discl/nn.hpp"
#include "discl/schedule.hpp"

namespace discl {

/// Batched diffusion state: one flattened image per row.
using Batch = nn::RowMat<double>;

/// eps_theta(z_t, t | c). Implementations must be deterministic and safe for
/// concurrent const calls.
class NoiseEstimator {
 public:
  virtual ~NoiseEstimator() = default;
  virtual int dim() const = 0;
  virtual Batch predict(const Batch& z, int t, std::span<const Condition> conditions) const = 0;
};

enum class Activation : std::uint16_t { silu = 0, relu = 1 };

struct NoiseArchitecture {
  int height = 16;
  int width = 16;
  int num_classes = 10;
  int time_dim = 32;
  int class_dim = 16;
  std::vector<int> hidden{256, 256, 256};
  Activation activation = Activation::silu;
  /// Linear path from (z_t, step embedding) straight to the output.
  bool input_skip = true;
  /// Re-feed the step and class embeddings into every layer, not just the first.
  bool condition_every_layer = true;

  int pixels() const noexcept { return height * width; }
  friend bool operator==(const NoiseArchitecture&, const NoiseArchitecture&) = default;
};

/// Sinusoidal embedding of integer diffusion steps, one row per step.
template <class S>
nn::RowMat<S> time_embedding(std::span<const int> steps, int dim);

/// Fully connected conditional noise predictor. Input is the flattened z_t
/// concatenated with a sinusoidal step embedding and a learned class
/// embedding; row `num_classes` of the embedding table is the unconditional
/// token. Optionally the embeddings are appended to every hidden layer's
/// input, and a linear skip maps (z_t, step embedding) onto the output.
template <class S>
class BasicNoiseModel final : public NoiseEstimator {
 public:
  BasicNoiseModel(NoiseArchitecture arch, std::uint64_t seed);

  const NoiseArchitecture& architecture() const noexcept { return arch_; }
  nn::ParamStore<S>& params() noexcept { return params_; }
  const nn::ParamStore<S>& params() const noexcept { return params_; }

  int dim() const override { return arch_.pixels(); }
  Batch predict(const Batch& z, int t, std::span<const Condition> conditions) const override;

  nn::RowMat<S> forward(const nn::RowMat<S>& z, std::span<const int> steps,
                        std::span<const Condition> conditions) const;

  /// Mean squared error against `target`, accumulating parameter gradients.
  double loss_and_grad(const nn::RowMat<S>& z, std::span<const int> steps,
                       std::span<const Condition> conditions, const nn::RowMat<S>& target);

 private:
  struct Cache {
    std::vector<nn::RowMat<S>> inputs;  // input of every dense layer, output layer last
    std::vector<nn::RowMat<S>> pre;     // pre-activations of hidden layers
    nn::RowMat<S> skip_input;
  };

  nn::RowMat<S> run(const nn::RowMat<S>& z, std::span<const int> steps, std::span<const Condition> conditions,
                    Cache* cache) const;
  int embedding_row(const Condition& c) const;

  int cond_dim() const noexcept { return arch_.time_dim + arch_.class_dim; }

  NoiseArchitecture arch_;
  nn::ParamStore<S> params_;
  nn::Slot class_table_;
  std::vector<nn::Dense> layers_;
  nn::Dense skip_;
};

using NoiseModel = BasicNoiseModel<float>;

extern template class BasicNoiseModel<float>;
extern template class BasicNoiseModel<double>;

/// Exact minimum-MSE noise predictor for data ~ N(mu, sigma2 I). Ignores the
/// condition, so conditional and unconditional predictions coincide.
class AnalyticGaussianModel final : public NoiseEstimator {
 public:
  AnalyticGaussianModel(std::vector<double> mu, double sigma2, const VarianceSchedule& schedule);

  int dim() const override { return static_cast<int>(mu_.size()); }
  Batch predict(const Batch& z, int t, std::span<const Condition> conditions) const override;

 private:
  std::vector<double> mu_;
  double sigma2_;
  std::vector<double> alpha_bar_;
};

inline AnalyticGaussianModel analytic_gaussian_model(std::vector<double> mu, double sigma2,
                                                     const VarianceSchedule& schedule) {
  return AnalyticGaussianModel(std::move(mu), sigma2, schedule);
}

// "DSNM" checkpoint container.
void save_noise_model(const NoiseModel& model, std::ostream& out);
NoiseModel load_noise_model(std::istream& in);
void save_noise_model(const NoiseModel& model, const std::string& path);
NoiseModel load_noise_model(const std::string& path);

}  // namespace discl
