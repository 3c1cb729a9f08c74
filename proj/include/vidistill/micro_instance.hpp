#pragma once

#include <vector>

#include "vidistill/classifier.hpp"
#include "vidistill/codec.hpp"
#include "vidistill/distill.hpp"
#include "vidistill/gumbel.hpp"
#include "vidistill/scorer.hpp"

namespace vidistill {

// Two classes, one sequence each, T=4 frames of 8×8 (2×2 latents), K=2, frozen noise.
struct MicroStage2 {
  BasicCodecWeights<double> codec;
  std::vector<TensorD> latents;
  std::vector<int> labels{0, 1};
  BasicScorer<double> scorer;
  BasicClassifier<double> classifier;
  TensorD noise;
  double tau = 1.0;

  TensorD loss() const { return stage2_loss<double>(codec, latents, labels, scorer, classifier, noise, tau); }

  // Latents first, then scorer, then classifier parameters.
  std::vector<TensorD> all_params() const {
    std::vector<TensorD> out(latents);
    out.insert(out.end(), scorer.params.begin(), scorer.params.end());
    out.insert(out.end(), classifier.params.begin(), classifier.params.end());
    return out;
  }
};

inline MicroStage2 make_micro_stage2(std::uint64_t seed) {
  Rng rng(seed);
  MicroStage2 m;
  m.codec = init_codec_weights(rng).cast<double>(false);
  for (int i = 0; i < 2; ++i) {
    std::vector<double> z(4 * 4 * 2 * 2);
    for (auto& v : z) v = rng.uniform(-1.0, 1.0);
    m.latents.push_back(TensorD::from_data({4, 4, 2, 2}, std::move(z), true));
  }
  m.scorer = init_scorer(rng).cast<double>(true);
  m.classifier = init_classifier(Arch::ConvNet3, 3 * 2, 8, 8, 2, rng).cast<double>(true);
  m.noise = sample_gumbel({2, 2, 4}, rng).cast<double>();
  return m;
}

}  // namespace vidistill
