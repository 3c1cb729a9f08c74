#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vidistill/rng.hpp"
#include "vidistill/tensor.hpp"

namespace vidistill {

inline constexpr double kGumbelClamp = 1e-12;

/// -log(-log u) with u clamped to (1e-12, 1 - 1e-12).
double gumbel_from_uniform(double u);
/// I.i.d. standard Gumbel noise.
Tensor sample_gumbel(const Shape& shape, Rng& rng);
std::vector<double> sample_gumbel_values(std::size_t count, Rng& rng);

/// Row k = softmax((q + noise_k) / tau).
/// q of length T with noise K×T gives K×T; q of B×T with noise B×K×T gives B×K×T.
template <typename T>
BasicTensor<T> gumbel_softmax(const BasicTensor<T>& q, const BasicTensor<T>& noise, double tau);

/// Convex combinations of frames: weights K×T with frames T×C×H×W gives K×C×H×W;
/// weights B×K×T with frames B×T×C×H×W gives B×K×C×H×W.
template <typename T>
BasicTensor<T> soft_aggregate(const BasicTensor<T>& frames, const BasicTensor<T>& weights);

/// Indices of the K largest entries, ties to the earlier index, returned ascending.
std::vector<std::size_t> top_k(std::span<const float> q, std::size_t k);
std::vector<std::size_t> top_k(std::span<const double> q, std::size_t k);

std::size_t argmax(std::span<const double> values);
std::vector<double> softmax_values(std::span<const double> q);

/// Empirical frequency of argmax_i(q_i + g_i) over `trials` noise draws.
std::vector<double> gumbel_max_frequency(std::span<const double> q, std::size_t trials, Rng& rng);

/// Small selection problem for comparing Gumbel-Softmax and straight-through
/// gradients: frame features F (T×D), scorer weights w (D) giving q = F·w + offset,
/// and a fixed linear classifier (C×D, C) with one target label.
struct GapInstance {
  std::vector<double> frames;
  std::vector<double> scorer;
  std::vector<double> offset;
  std::vector<double> classifier_w;
  std::vector<double> classifier_b;
  std::size_t frames_count = 0;
  std::size_t dim = 0;
  std::size_t classes = 0;
  int label = 0;
};

GapInstance make_gap_instance(Rng& rng, std::size_t frames, std::size_t dim, std::size_t classes);

/// Gradient of the classifier loss with respect to the scorer weights, for one
/// fixed noise draw. `straight_through` selects the hard one-hot forward with
/// the soft Jacobian backward; otherwise the soft weights are used directly.
std::vector<double> selection_gradient(const GapInstance& inst, std::span<const double> noise, double tau,
                                       bool straight_through);

/// Mean over draws of ‖g_GS - g_ST‖₂; both gradients share each noise draw.
double gradient_gap(const GapInstance& inst, std::span<const std::vector<double>> noise_draws, double tau);

}  // namespace vidistill
