#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vidistill/classifier.hpp"
#include "vidistill/codec.hpp"
#include "vidistill/optim.hpp"
#include "vidistill/scorer.hpp"
#include "vidistill/synth_video.hpp"

namespace vidistill {

struct DistillConfig {
  std::size_t budget_per_class = 1;
  std::size_t k = 4;
  double tau = 1.0;
  double latent_lr = 1e-2;
  double scorer_lr = 1e-3;
  double classifier_lr = 1e-3;
  /// Latent updates per outer iteration; 0 keeps the latents at their encoded values.
  std::size_t latent_steps = 4;
  std::size_t batch_size = 64;
  std::size_t iterations = 300;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const DistillConfig& c);
void from_json(const nlohmann::json& j, DistillConfig& c);

/// Per-class video counts for a budget ratio: max(C, round(ratio·N)) in total,
/// spread evenly with the remainder going to the lowest class ids.
std::vector<std::size_t> budget_from_ratio(double ratio, std::size_t dataset_size, std::size_t classes);

struct LatentSeq {
  Tensor z;  // T×4×h×w
  int label = 0;
  std::uint64_t source_id = 0;
};

/// Picks per_class[c] training videos of each class without replacement and encodes every frame.
std::vector<LatentSeq> init_latents(const VideoSet& train, std::span<const std::size_t> per_class, const Codec& codec,
                                    std::uint64_t seed);

/// Classification loss of a batch of decoded sequences (B×T×3×H×W): score every
/// frame, relax K selections per video with `noise` (B×K×T), aggregate, stack the
/// K expected frames along channels and classify. Mean cross-entropy.
template <typename T>
BasicTensor<T> selection_loss(const BasicTensor<T>& frames, std::span<const int> labels, const BasicScorer<T>& scorer,
                              const BasicClassifier<T>& classifier, const BasicTensor<T>& noise, double tau);

/// Decodes B latent sequences (each T×4×h×w) into B×T×3×H×W.
template <typename T>
BasicTensor<T> decode_sequences(const BasicCodecWeights<T>& codec, std::span<const BasicTensor<T>> latents);

/// Full objective: decode, then selection_loss.
template <typename T>
BasicTensor<T> stage2_loss(const BasicCodecWeights<T>& codec, std::span<const BasicTensor<T>> latents,
                           std::span<const int> labels, const BasicScorer<T>& scorer,
                           const BasicClassifier<T>& classifier, const BasicTensor<T>& noise, double tau);

struct TrainingLogEntry {
  std::size_t iteration = 0;
  double loss = 0.0;
  /// Mean entropy of softmax(q) over the batch.
  double logit_entropy = 0.0;
  /// Count of top-K hits per frame index over the batch.
  std::vector<std::size_t> selection_histogram;
  double wall_ms = 0.0;
};

struct DistillState {
  std::vector<LatentSeq> latents;
  Scorer scorer;
  Classifier classifier;
};

/// Raised when the loss stops being finite. Carries the state from before the failing iteration.
class DistillDivergence : public NumericError {
 public:
  DistillDivergence(const std::string& what, DistillState last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const DistillState& last_good() const { return last_good_; }

 private:
  DistillState last_good_;
};

/// Stage 2. Each outer iteration takes one Adam step on scorer and classifier
/// from the first evaluation and `latent_steps` Adam steps on the batch latents,
/// one per evaluation, each evaluation with fresh Gumbel noise.
using IterationCallback = std::function<void(const TrainingLogEntry&, const DistillState&)>;
std::vector<TrainingLogEntry> joint_optimize(DistillState& state, const Codec& codec, const DistillConfig& config,
                                             const IterationCallback& on_iteration = {});

struct DistilledRecord {
  int label = 0;
  std::uint64_t source_id = 0;
  std::vector<std::size_t> indices;
  Tensor latents;  // K×4×h×w
};

struct DistilledDataset {
  std::vector<DistilledRecord> records;
  std::string codec_digest;
  std::size_t k = 0;
  std::size_t classes = 0;
  Scorer scorer;
  nlohmann::json config;

  /// Writes distilled.vct, scorer.vct and distilled.json.
  void save(const std::filesystem::path& dir) const;
  static DistilledDataset load(const std::filesystem::path& dir);
};

/// Stage 3: keep, for each sequence, the optimized latents of its top-K scored frames.
DistilledDataset extract_topk(std::span<const LatentSeq> latents, const Scorer& scorer, const Codec& codec,
                              std::size_t k, std::size_t classes);

struct DistillOutcome {
  DistilledDataset dataset;
  DistillState state;
  std::vector<TrainingLogEntry> log;
  std::string codec_digest_before;
  std::string codec_digest_after;
};

/// Stages 1 to 3 on a frozen codec.
DistillOutcome run_distillation(const VideoSet& train, const Codec& codec, const DistillConfig& config,
                                const IterationCallback& on_iteration = {});

/// Wall time is kept out of the default output so logs stay reproducible.
std::string training_log_csv(std::span<const TrainingLogEntry> log, bool wall_time = false);

}  // namespace vidistill
