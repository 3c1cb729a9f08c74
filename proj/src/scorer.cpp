#include "vidistill/scorer.hpp"

#include <string>

#include "vidistill/ops.hpp"
#include "vidistill/params.hpp"

namespace vidistill {

namespace {
const Shape kScorerShapes[] = {{8, 3, 3, 3}, {8}, {16, 8, 3, 3}, {16}, {1, 16}, {1}};
}

Scorer init_scorer(Rng& rng) {
  Scorer s;
  s.params = {fan_in_uniform(kScorerShapes[0], 27, rng), Tensor::zeros({8}),
              fan_in_uniform(kScorerShapes[2], 72, rng), Tensor::zeros({16}),
              fan_in_uniform(kScorerShapes[4], 16, rng), Tensor::zeros({1})};
  return s;
}

void validate_scorer(const Scorer& scorer) {
  if (scorer.params.size() != Scorer::kCount) {
    throw ShapeError("scorer: expected " + std::to_string(Scorer::kCount) + " tensors, got " +
                     std::to_string(scorer.params.size()));
  }
  for (std::size_t i = 0; i < scorer.params.size(); ++i) {
    if (scorer.params[i].shape() != kScorerShapes[i]) {
      throw ShapeError("scorer: tensor " + std::to_string(i) + " has shape " + shape_str(scorer.params[i].shape()) +
                       ", expected " + shape_str(kScorerShapes[i]));
    }
  }
}

template <typename T>
BasicTensor<T> score_frames(const BasicScorer<T>& scorer, const BasicTensor<T>& frames) {
  if (frames.rank() != 4 || frames.size(1) != 3) {
    throw ShapeError("score_frames: expected N×3×H×W frames, got " + shape_str(frames.shape()));
  }
  if (frames.size(2) % 4 != 0 || frames.size(3) % 4 != 0) {
    throw ShapeError("score_frames: spatial dims must be divisible by 4, got " + shape_str(frames.shape()));
  }
  const auto& p = scorer.params;
  using S = BasicScorer<T>;
  auto h = relu(conv2d(frames, p[S::kConv1W], p[S::kConv1B], {2, 1}));
  h = relu(conv2d(h, p[S::kConv2W], p[S::kConv2B], {2, 1}));
  const auto logits = linear(global_avg_pool(h), p[S::kFcW], p[S::kFcB]);
  return reshape(logits, {frames.size(0)});
}

template BasicTensor<float> score_frames(const BasicScorer<float>&, const BasicTensor<float>&);
template BasicTensor<double> score_frames(const BasicScorer<double>&, const BasicTensor<double>&);

}  // namespace vidistill
