#include "vidistill/gumbel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "vidistill/ops.hpp"

namespace vidistill {

double gumbel_from_uniform(double u) {
  u = std::clamp(u, kGumbelClamp, 1.0 - kGumbelClamp);
  return -std::log(-std::log(u));
}

std::vector<double> sample_gumbel_values(std::size_t count, Rng& rng) {
  std::vector<double> out(count);
  for (auto& g : out) g = gumbel_from_uniform(rng.uniform());
  return out;
}

Tensor sample_gumbel(const Shape& shape, Rng& rng) {
  const auto values = sample_gumbel_values(shape_numel(shape), rng);
  return Tensor::from_data(shape, std::vector<float>(values.begin(), values.end()));
}

template <typename T>
BasicTensor<T> gumbel_softmax(const BasicTensor<T>& q, const BasicTensor<T>& noise, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel_softmax: tau must be positive, got " + std::to_string(tau));
  const bool batched = q.rank() == 2;
  if ((q.rank() != 1 && !batched) || noise.rank() != q.rank() + 1 || noise.size(noise.rank() - 1) != q.size(q.rank() - 1) ||
      (batched && noise.size(0) != q.size(0))) {
    throw ShapeError("gumbel_softmax: logits " + shape_str(q.shape()) + " incompatible with noise " +
                     shape_str(noise.shape()));
  }
  const std::size_t k = noise.size(noise.rank() - 2);
  auto perturbed = add(repeat_rows(q, k), noise);
  return softmax(scale(perturbed, static_cast<T>(1.0 / tau)));
}

template <typename T>
BasicTensor<T> soft_aggregate(const BasicTensor<T>& frames, const BasicTensor<T>& weights) {
  if (weights.rank() == 2) {
    if (frames.rank() < 2 || frames.size(0) != weights.size(1)) {
      throw ShapeError("soft_aggregate: weights " + shape_str(weights.shape()) + " vs frames " +
                       shape_str(frames.shape()));
    }
    const std::size_t t = frames.size(0);
    const std::size_t d = frames.numel() / t;
    Shape out_shape = frames.shape();
    out_shape[0] = weights.size(0);
    return reshape(matmul(weights, reshape(frames, {t, d})), out_shape);
  }
  if (weights.rank() != 3 || frames.rank() < 3 || frames.size(0) != weights.size(0) ||
      frames.size(1) != weights.size(2)) {
    throw ShapeError("soft_aggregate: weights " + shape_str(weights.shape()) + " vs frames " +
                     shape_str(frames.shape()));
  }
  const std::size_t b = frames.size(0), t = frames.size(1);
  const std::size_t d = frames.numel() / (b * t);
  Shape out_shape = frames.shape();
  out_shape[1] = weights.size(1);
  return reshape(bmm(weights, reshape(frames, {b, t, d})), out_shape);
}

template BasicTensor<float> gumbel_softmax(const BasicTensor<float>&, const BasicTensor<float>&, double);
template BasicTensor<double> gumbel_softmax(const BasicTensor<double>&, const BasicTensor<double>&, double);
template BasicTensor<float> soft_aggregate(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> soft_aggregate(const BasicTensor<double>&, const BasicTensor<double>&);

namespace {

template <typename T>
std::vector<std::size_t> top_k_impl(std::span<const T> q, std::size_t k) {
  if (k > q.size()) {
    throw std::invalid_argument("top_k: K=" + std::to_string(k) + " exceeds T=" + std::to_string(q.size()));
  }
  std::vector<std::size_t> order(q.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return q[a] > q[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace

std::vector<std::size_t> top_k(std::span<const float> q, std::size_t k) { return top_k_impl(q, k); }
std::vector<std::size_t> top_k(std::span<const double> q, std::size_t k) { return top_k_impl(q, k); }

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::vector<double> softmax_values(std::span<const double> q) {
  const double m = *std::max_element(q.begin(), q.end());
  std::vector<double> p(q.size());
  double total = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) total += p[i] = std::exp(q[i] - m);
  for (auto& v : p) v /= total;
  return p;
}

std::vector<double> gumbel_max_frequency(std::span<const double> q, std::size_t trials, Rng& rng) {
  std::vector<double> counts(q.size(), 0.0);
  std::vector<double> perturbed(q.size());
  for (std::size_t n = 0; n < trials; ++n) {
    for (std::size_t i = 0; i < q.size(); ++i) perturbed[i] = q[i] + gumbel_from_uniform(rng.uniform());
    counts[argmax(perturbed)] += 1.0;
  }
  for (auto& c : counts) c /= static_cast<double>(trials);
  return counts;
}

GapInstance make_gap_instance(Rng& rng, std::size_t frames, std::size_t dim, std::size_t classes) {
  GapInstance inst;
  inst.frames_count = frames;
  inst.dim = dim;
  inst.classes = classes;
  auto fill = [&](std::vector<double>& v, std::size_t n) {
    v.resize(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  };
  fill(inst.frames, frames * dim);
  fill(inst.scorer, dim);
  inst.offset.assign(frames, 0.0);
  fill(inst.classifier_w, classes * dim);
  fill(inst.classifier_b, classes);
  inst.label = static_cast<int>(rng.below(classes));
  return inst;
}

std::vector<double> selection_gradient(const GapInstance& inst, std::span<const double> noise, double tau,
                                       bool use_straight_through) {
  const auto t = inst.frames_count;
  if (noise.size() != t) throw ShapeError("selection_gradient: noise length must equal frame count");
  auto w = TensorD::from_data({inst.dim, 1}, inst.scorer, true);
  const auto frames = TensorD::from_data({t, inst.dim}, inst.frames);
  const auto offset = TensorD::from_data({t}, inst.offset);
  const auto q = add(reshape(matmul(frames, w), {t}), offset);
  auto soft = gumbel_softmax(q, TensorD::from_data({1, t}, std::vector<double>(noise.begin(), noise.end())), tau);
  if (use_straight_through) {
    std::vector<double> perturbed(t);
    for (std::size_t i = 0; i < t; ++i) perturbed[i] = q.data()[i] + noise[i];
    std::vector<double> onehot(t, 0.0);
    onehot[argmax(perturbed)] = 1.0;
    soft = straight_through(soft, TensorD::from_data({1, t}, std::move(onehot)));
  }
  const auto feature = matmul(soft, frames);
  const auto logits = linear(feature, TensorD::from_data({inst.classes, inst.dim}, inst.classifier_w),
                             TensorD::from_data({inst.classes}, inst.classifier_b));
  const int target[1] = {inst.label};
  cross_entropy(logits, std::span<const int>(target)).backward();
  return std::vector<double>(w.grad().begin(), w.grad().end());
}

double gradient_gap(const GapInstance& inst, std::span<const std::vector<double>> noise_draws, double tau) {
  if (noise_draws.empty()) throw std::invalid_argument("gradient_gap: need at least one noise draw");
  double total = 0.0;
  for (const auto& noise : noise_draws) {
    const auto gs = selection_gradient(inst, noise, tau, false);
    const auto st = selection_gradient(inst, noise, tau, true);
    double sq = 0.0;
    for (std::size_t i = 0; i < gs.size(); ++i) sq += (gs[i] - st[i]) * (gs[i] - st[i]);
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(noise_draws.size());
}

}  // namespace vidistill
