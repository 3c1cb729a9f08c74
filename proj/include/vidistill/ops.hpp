#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vidistill/tensor.hpp"

namespace vidistill {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Elementwise; operands must have identical shapes.
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
template <typename T> BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& x);

// Full reductions to a scalar, accumulated in double.
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);

/// (m×k)·(k×n).
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// Batched (B×m×k)·(B×k×n).
template <typename T> BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// x (N×in), weight (out×in), bias (out) -> N×out.
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

/// x (N×C×H×W), weight (O×C×k×k), bias (O).
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      Conv2dOptions options = {});
/// x (N×Cin×H×W), weight (Cin×Cout×k×k), bias (Cout). Output side (H-1)·s - 2p + k.
template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                                const BasicTensor<T>& bias, Conv2dOptions options = {});
/// N×C×H×W -> N×C.
template <typename T> BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

/// Same data, new shape of equal element count.
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
/// Concatenate along the leading axis.
template <typename T> BasicTensor<T> concat0(std::span<const BasicTensor<T>> parts);
/// x viewed as (B×T) -> (B×copies×T); a 1-D x of length T gives (copies×T).
template <typename T> BasicTensor<T> repeat_rows(const BasicTensor<T>& x, std::size_t copies);

/// Row-wise max-subtracted softmax over the last axis.
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& x);
/// Mean over rows of -log softmax(logits)[target]; logits N×C.
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets);
/// Σ_t w_t · x_t over the leading axis of x; w has length x.size(0).
template <typename T>
BasicTensor<T> weighted_sum(const BasicTensor<T>& weights, const BasicTensor<T>& x);
/// Forward value of `hard`, gradient routed to `soft` unchanged.
template <typename T>
BasicTensor<T> straight_through(const BasicTensor<T>& soft, const BasicTensor<T>& hard);

template <typename T> BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) { return add(a, b); }
template <typename T> BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) { return sub(a, b); }
template <typename T> BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) { return mul(a, b); }

}  // namespace vidistill
