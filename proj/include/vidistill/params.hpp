#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vidistill/rng.hpp"
#include "vidistill/tensor.hpp"

namespace vidistill {

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights.
Tensor fan_in_uniform(const Shape& shape, std::size_t fan_in, Rng& rng);
/// Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)) weights for layers followed by ReLU.
Tensor he_uniform(const Shape& shape, std::size_t fan_in, Rng& rng);

template <typename U, typename T>
std::vector<BasicTensor<U>> cast_all(std::span<const BasicTensor<T>> tensors, bool requires_grad) {
  std::vector<BasicTensor<U>> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) out.push_back(t.template cast<U>(requires_grad));
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> detach_all(std::span<const BasicTensor<T>> tensors, bool requires_grad) {
  std::vector<BasicTensor<T>> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) {
    auto d = t.detach();
    d.set_requires_grad(requires_grad);
    out.push_back(d);
  }
  return out;
}

template <typename T>
void set_requires_grad(std::span<BasicTensor<T>> tensors, bool value) {
  for (auto& t : tensors) t.set_requires_grad(value);
}

bool all_finite(std::span<const Tensor> tensors);

}  // namespace vidistill
