#include "vidistill/params.hpp"

#include <cmath>

namespace vidistill {

Tensor fan_in_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<float> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor::from_data(shape, std::move(values));
}

Tensor he_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<float> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor::from_data(shape, std::move(values));
}

bool all_finite(std::span<const Tensor> tensors) {
  for (const auto& t : tensors) {
    for (const auto v : t.data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

}  // namespace vidistill
