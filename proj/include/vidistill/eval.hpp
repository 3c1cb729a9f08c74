#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "vidistill/classifier.hpp"
#include "vidistill/codec.hpp"
#include "vidistill/distill.hpp"
#include "vidistill/scorer.hpp"
#include "vidistill/synth_video.hpp"

namespace vidistill {

struct EvalConfig {
  Arch arch = Arch::ConvNet3;
  std::size_t epochs = 100;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Clamped to the dataset size.
  std::size_t batch_size = 256;
  std::size_t runs = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

/// idx_i = floor(i·T/K).
std::vector<std::size_t> uniform_indices(std::size_t t, std::size_t k);
std::vector<std::size_t> first_k_indices(std::size_t t, std::size_t k);
/// Frame 0 always kept; otherwise the K largest L1 differences to the previous
/// frame, ties to the earlier frame, returned ascending. `video` is T×3×H×W.
std::vector<std::size_t> pixel_diff_indices(std::span<const float> video, std::size_t t, std::size_t k);

enum class SelectionRule { ScorerTopK, Uniform, PixelDiff, FirstK };
std::string rule_name(SelectionRule rule);

/// K frames per video stacked along channels, N×3K×H×W, tagged with the split they came from.
struct ClipDataset {
  Split split = Split::Train;
  Tensor clips;
  std::vector<int> labels;
  std::size_t classes = 0;
  std::size_t k = 0;

  std::size_t size() const { return labels.size(); }
};

/// Applies `rule` to every video of `set`. ScorerTopK needs `scorer`.
ClipDataset select_clips(const VideoSet& set, SelectionRule rule, std::size_t k, const Scorer* scorer = nullptr);
ClipDataset select_clips(const VideoSet& set, std::span<const std::size_t> videos, SelectionRule rule, std::size_t k,
                         const Scorer* scorer = nullptr);
/// Indices chosen by `rule` for one video.
std::vector<std::size_t> select_indices(std::span<const float> video, const GenConfig& g, SelectionRule rule,
                                        std::size_t k, const Scorer* scorer);

/// Decodes every distilled record into a training clip.
ClipDataset clips_from_distilled(const DistilledDataset& dataset, const Codec& codec);

struct Coreset {
  ClipDataset clips;
  std::vector<std::uint64_t> ids;
};

/// per_class[c] random real training videos of class c with uniform frame selection.
Coreset random_coreset(const VideoSet& train, std::span<const std::size_t> per_class, std::size_t k,
                       std::uint64_t seed);

/// SGD with momentum on mean cross-entropy. Rejects data from the test split.
Classifier train_from_scratch(const ClipDataset& data, const EvalConfig& config, std::uint64_t seed);

/// Top-1 accuracy.
double evaluate_accuracy(const Classifier& model, const ClipDataset& data);
std::vector<int> predict(const Classifier& model, const ClipDataset& data);

struct RunSummary {
  double mean = 0.0;
  /// Sample standard deviation; 0 for a single run.
  double std = 0.0;
};

RunSummary summarize(std::span<const double> values);

/// Pearson correlation; zero-variance input gives 0 and sets `degenerate`.
double pearson(std::span<const float> a, std::span<const float> b, bool* degenerate = nullptr);

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct RedundancyResult {
  /// One T×T frame-correlation matrix per video.
  std::vector<Matrix> intra;
  /// n×n correlation between the mean frames of different videos.
  Matrix inter;
  std::size_t degenerate_entries = 0;
  std::vector<std::uint64_t> ids;
};

/// Uses the first `max_videos` videos of `label` (0 = all). Needs at least two.
RedundancyResult redundancy_matrices(const VideoSet& set, int label, std::size_t max_videos = 0);
double mean_adjacent_correlation(const RedundancyResult& r);
double mean_off_diagonal(const Matrix& m);
std::string matrix_csv(const Matrix& m);

/// Runs fn(0..n-1) on up to `workers` threads; results keep index order.
template <typename R>
std::vector<R> parallel_map(std::size_t n, std::size_t workers, const std::function<R(std::size_t)>& fn) {
  std::vector<R> out(n);
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          out[i] = fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
  return out;
}

}  // namespace vidistill
