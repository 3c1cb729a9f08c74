#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vidistill/tensor.hpp"

namespace vidistill {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments for one parameter group. Shapes are fixed at construction.
class AdamState {
 public:
  AdamState(std::span<const Tensor> params, AdamOptions options);

  const AdamOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }
  std::int64_t step_count() const { return step_; }
  std::span<const float> first_moment(std::size_t index) const { return m_.at(index); }
  std::span<const float> second_moment(std::size_t index) const { return v_.at(index); }

 private:
  friend void adam_step(std::span<Tensor> params, AdamState& state);

  AdamOptions options_;
  std::vector<Shape> shapes_;
  std::vector<std::vector<float>> m_, v_;
  std::int64_t step_ = 0;
};

/// Bias-corrected Adam update in place, reading each parameter's grad
/// (a parameter without an accumulated grad is treated as g = 0).
void adam_step(std::span<Tensor> params, AdamState& state);

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

class SgdMomentumState {
 public:
  SgdMomentumState(std::span<const Tensor> params, SgdOptions options);

  const SgdOptions& options() const { return options_; }
  std::span<float> velocity(std::size_t index) { return velocity_.at(index); }

 private:
  friend void sgd_momentum_step(std::span<Tensor> params, SgdMomentumState& state);

  SgdOptions options_;
  std::vector<Shape> shapes_;
  std::vector<std::vector<float>> velocity_;
};

/// v <- momentum·v + (g + weight_decay·θ);  θ <- θ - lr·v.
void sgd_momentum_step(std::span<Tensor> params, SgdMomentumState& state);

void zero_grads(std::span<Tensor> params);

}  // namespace vidistill
