#pragma once

#include <span>
#include <vector>

#include "vidistill/rng.hpp"
#include "vidistill/tensor.hpp"

namespace vidistill {

/// Frame scorer φ: conv(3→8, 3×3, s2, p1) → ReLU → conv(8→16, 3×3, s2, p1) → ReLU
/// → global average pool → linear(16→1). Applied to each frame independently.
template <typename T>
struct BasicScorer {
  enum Index { kConv1W, kConv1B, kConv2W, kConv2B, kFcW, kFcB, kCount };
  std::vector<BasicTensor<T>> params;

  template <typename U>
  BasicScorer<U> cast(bool requires_grad) const {
    BasicScorer<U> out;
    for (const auto& p : params) out.params.push_back(p.template cast<U>(requires_grad));
    return out;
  }
};

using Scorer = BasicScorer<float>;

Scorer init_scorer(Rng& rng);

/// Scores N frames (N×3×H×W, H and W divisible by 4) into a length-N logit vector.
template <typename T>
BasicTensor<T> score_frames(const BasicScorer<T>& scorer, const BasicTensor<T>& frames);

/// Checks parameter count and shapes.
void validate_scorer(const Scorer& scorer);

}  // namespace vidistill
