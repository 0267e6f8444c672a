#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "discl/data.hpp"
#include "discl/image.hpp"
#include "discl/nn.hpp"
#include "discl/sample.hpp"

namespace discl {

struct ClassifierArchitecture {
  int height = 16;
  int width = 16;
  int channels = 8;
  int embed_dim = 32;
  int num_classes = 10;

  friend bool operator==(const ClassifierArchitecture&, const ClassifierArchitecture&) = default;
};

/// 3x3 same-padded convolution -> ReLU -> dense embedding -> ReLU -> dense
/// logits. The post-ReLU embedding doubles as the fidelity-filter feature.
template <class S>
class BasicClassifier {
 public:
  BasicClassifier(ClassifierArchitecture arch, std::uint64_t seed);

  const ClassifierArchitecture& architecture() const noexcept { return arch_; }
  nn::ParamStore<S>& params() noexcept { return params_; }
  const nn::ParamStore<S>& params() const noexcept { return params_; }
  int num_classes() const noexcept { return arch_.num_classes; }

  nn::RowMat<S> logits(const nn::RowMat<S>& x) const;
  nn::RowMat<S> embed(const nn::RowMat<S>& x) const;
  nn::RowMat<S> probabilities(const nn::RowMat<S>& x) const;

  /// Mean cross-entropy over the batch, accumulating parameter gradients.
  double loss_and_grad(const nn::RowMat<S>& x, std::span<const int> labels);
  double loss(const nn::RowMat<S>& x, std::span<const int> labels) const;

  void zero_output_layer();

 private:
  struct Cache {
    nn::RowMat<S> patches;
    nn::RowMat<S> conv_pre;
    nn::RowMat<S> flat;
    nn::RowMat<S> embed_pre;
    nn::RowMat<S> embed_post;
  };
  nn::RowMat<S> run(const nn::RowMat<S>& x, Cache& cache) const;
  nn::RowMat<S> im2col(const nn::RowMat<S>& x) const;

  ClassifierArchitecture arch_;
  nn::ParamStore<S> params_;
  nn::Slot kernel_;
  nn::Slot kernel_bias_;
  nn::Dense hidden_;
  nn::Dense output_;
};

using Classifier = BasicClassifier<float>;

extern template class BasicClassifier<float>;
extern template class BasicClassifier<double>;

enum class Loss { cross_entropy };

struct TrainConfig {
  /// Total epochs E; also the horizon of the cosine learning-rate decay.
  int epochs = 10;
  /// Curriculum epochs E_CL, 0 <= E_CL <= E.
  int curriculum_epochs = 8;
  int batch_size = 32;
  double learn_rate = 1e-2;
  double momentum = 0.9;
  Loss loss = Loss::cross_entropy;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t samples = 0;
};

/// Learning rate of global epoch `epoch` under cosine decay over cfg.epochs.
double epoch_learn_rate(const TrainConfig& cfg, int epoch);

/// Runs `n` epochs of mini-batch SGD starting at global epoch `first_epoch`.
/// The momentum buffer is reset at each epoch boundary.
/// Shuffling is seeded from (cfg.seed, stream, epoch). Throws on a
/// non-finite loss.
std::vector<EpochStats> train_epochs(Classifier& clf, std::span<const LabeledImage> data, const TrainConfig& cfg,
                                     int n, int first_epoch = 0, std::uint64_t stream = 0);

std::vector<double> predict_proba(const Classifier& clf, const Image& image);
/// Probability matrix, one row per sample.
nn::RowMat<double> predict_proba(const Classifier& clf, std::span<const LabeledImage> data);
std::vector<int> predict_labels(const Classifier& clf, std::span<const LabeledImage> data);
/// Ground-truth-class probability per sample.
std::vector<double> true_class_probability(const Classifier& clf, std::span<const LabeledImage> data);
nn::RowMat<double> embed(const Classifier& clf, std::span<const LabeledImage> data);

/// Indices i with probabilities[i] < h_hard (strict). h_hard must lie in [0, 1].
std::vector<std::size_t> hard_indices(std::span<const double> probabilities, double h_hard);
/// Probability rule: samples whose ground-truth probability is below h_hard.
Dataset identify_hard(const Classifier& clf, std::span<const LabeledImage> data, double h_hard);
/// Tail rule: every sample of a few-group class.
Dataset identify_hard_tail(std::span<const LabeledImage> data, const std::map<int, ClassGroup>& group_of_class);

nn::RowMat<float> images_to_rows(std::span<const LabeledImage> data);

// "DSCF" checkpoint container.
void save_classifier(const Classifier& clf, std::ostream& out);
Classifier load_classifier(std::istream& in);
void save_classifier(const Classifier& clf, const std::string& path);
Classifier load_classifier(const std::string& path);

}  // namespace discl
