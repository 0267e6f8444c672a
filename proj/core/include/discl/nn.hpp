#pragma once

// Minimal dense-network toolkit shared by the noise model and the classifier.
// Parameters of a network live in one flat buffer so that checkpointing,
// optimizers and finite-difference checks can treat them uniformly.

#include <Eigen/Core>
#include <Eigen/StdVector>

#include <cmath>
#include <cstddef>
#include <vector>

#include "discl/random.hpp"

namespace discl::nn {

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

struct Slot {
  std::size_t offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::size_t size() const noexcept { return static_cast<std::size_t>(rows * cols); }
};

// Buffers are aligned to Eigen's packet size: vectorized reductions peel by
// address, so an arbitrary heap alignment would change summation order (and
// the low bits of results) from run to run.
template <class S>
using AlignedVector = std::vector<S, Eigen::aligned_allocator<S>>;

template <class S>
class ParamStore {
 public:
  Slot add(Eigen::Index rows, Eigen::Index cols) {
    Slot s{values_.size(), rows, cols};
    values_.resize(values_.size() + s.size(), S(0));
    grads_.resize(values_.size(), S(0));
    return s;
  }

  Eigen::Map<RowMat<S>> value(const Slot& s) { return {values_.data() + s.offset, s.rows, s.cols}; }
  Eigen::Map<const RowMat<S>> value(const Slot& s) const {
    return {values_.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<RowMat<S>> grad(const Slot& s) { return {grads_.data() + s.offset, s.rows, s.cols}; }

  AlignedVector<S>& values() noexcept { return values_; }
  const AlignedVector<S>& values() const noexcept { return values_; }
  AlignedVector<S>& grads() noexcept { return grads_; }
  const AlignedVector<S>& grads() const noexcept { return grads_; }
  std::size_t size() const noexcept { return values_.size(); }

  void zero_grad() { std::fill(grads_.begin(), grads_.end(), S(0)); }

  /// Gaussian init scaled by 1/sqrt(fan_in) times gain.
  void init_normal(const Slot& s, Rng& rng, double gain) {
    const double scale = gain / std::sqrt(static_cast<double>(s.rows));
    for (std::size_t i = 0; i < s.size(); ++i) values_[s.offset + i] = static_cast<S>(rng.normal() * scale);
  }

 private:
  AlignedVector<S> values_;
  AlignedVector<S> grads_;
};

/// Affine layer y = x W + b with W stored in x in-by-out order.
struct Dense {
  Slot weight;
  Slot bias;

  template <class S>
  static Dense create(ParamStore<S>& params, Eigen::Index in, Eigen::Index out) {
    return Dense{params.add(in, out), params.add(1, out)};
  }

  template <class S>
  RowMat<S> forward(const ParamStore<S>& params, const RowMat<S>& x) const {
    RowMat<S> y = x * params.value(weight);
    y.rowwise() += params.value(bias).row(0);
    return y;
  }

  /// Accumulates parameter gradients; returns the input gradient when asked.
  template <class S>
  void backward(ParamStore<S>& params, const RowMat<S>& x, const RowMat<S>& dy, RowMat<S>* dx) const {
    params.grad(weight).noalias() += x.transpose() * dy;
    params.grad(bias).row(0) += dy.colwise().sum();
    if (dx != nullptr) dx->noalias() = dy * params.value(weight).transpose();
  }
};

template <class S>
inline RowMat<S> silu(const RowMat<S>& x) {
  return x.array() / (S(1) + (-x.array()).exp());
}

template <class S>
inline RowMat<S> silu_backward(const RowMat<S>& x, const RowMat<S>& dy) {
  const auto sig = (S(1) / (S(1) + (-x.array()).exp())).eval();
  return dy.array() * (sig * (S(1) + x.array() * (S(1) - sig)));
}

template <class S>
inline RowMat<S> relu(const RowMat<S>& x) {
  return x.cwiseMax(S(0));
}

template <class S>
inline RowMat<S> relu_backward(const RowMat<S>& x, const RowMat<S>& dy) {
  return (x.array() > S(0)).select(dy, S(0));
}

/// Row-wise numerically stable softmax.
template <class S>
inline RowMat<S> softmax_rows(const RowMat<S>& logits) {
  RowMat<S> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const S m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

class Adam {
 public:
  explicit Adam(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(n, 0.0), v_(n, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  template <class S>
  void step(ParamStore<S>& params, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto& w = params.values();
    const auto& g = params.grads();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * gi;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * gi * gi;
      const double update = lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
      w[i] = static_cast<S>(static_cast<double>(w[i]) - update);
    }
  }

 private:
  std::vector<double> m_;
  std::vector<double> v_;
  double beta1_;
  double beta2_;
  double eps_;
  long long t_ = 0;
};

/// SGD with heavy-ball momentum.
class Sgd {
 public:
  explicit Sgd(std::size_t n, double momentum = 0.9) : velocity_(n, 0.0), momentum_(momentum) {}

  template <class S>
  void step(ParamStore<S>& params, double lr) {
    auto& w = params.values();
    const auto& g = params.grads();
    for (std::size_t i = 0; i < w.size(); ++i) {
      velocity_[i] = momentum_ * velocity_[i] + static_cast<double>(g[i]);
      w[i] = static_cast<S>(static_cast<double>(w[i]) - lr * velocity_[i]);
    }
  }

 private:
  std::vector<double> velocity_;
  double momentum_;
};

}  // namespace discl::nn
