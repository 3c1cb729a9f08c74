#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vidistill/codec.hpp"
#include "vidistill/distill.hpp"
#include "vidistill/eval.hpp"
#include "vidistill/run_config.hpp"
#include "vidistill/synth_video.hpp"

namespace vidistill {

/// Where every subcommand reads and writes under one output root.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path codec_dir() const { return root / "codec"; }
  std::filesystem::path codec_stem() const { return root / "codec" / "codec"; }
  std::filesystem::path distilled(std::uint64_t seed) const {
    return root / "distilled" / ("seed_" + std::to_string(seed));
  }
  std::filesystem::path eval_dir() const { return root / "eval"; }
  std::filesystem::path analysis() const { return root / "analysis"; }
  std::filesystem::path checks() const { return root / "checks"; }
  std::filesystem::path log_file() const { return root / "run.log"; }
};

/// Timestamped progress lines, appended to run.log. Never part of a digested artifact.
class RunLog {
 public:
  RunLog() = default;
  explicit RunLog(const std::filesystem::path& path, bool echo = false);
  void line(const std::string& text);

 private:
  std::ofstream out_;
  bool echo_ = false;
  std::mutex mutex_;
};

/// Writes config.json (the effective config minus output_dir) and run.json (command, seed and
/// sha256 of every listed artifact, relative to `dir`).
void write_run_record(const std::filesystem::path& dir, const RunConfig& config, const std::string& command,
                      std::span<const std::filesystem::path> artifacts);

/// Generates (or, when already present with a matching config, reuses) the dataset.
DatasetManifest ensure_dataset(const RunConfig& config, const Layout& layout, RunLog& log);

/// Pretrains on every experiment.codec_stride-th training video and freezes.
Codec pretrain_frozen_codec(const RunConfig& config, const VideoSet& train);

/// Loads the codec and refuses an unfrozen one.
Codec load_frozen_codec(const Layout& layout);

struct MethodRuns {
  std::string method;
  double ratio = 0.0;
  /// Distillation (or experiment) seed the runs belong to.
  std::uint64_t experiment_seed = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;
};

/// Names accepted by evaluate_baseline.
const std::vector<std::string>& baseline_methods();

/// eval.runs from-scratch trainings with seeds derived from `experiment_seed`
/// (the same seeds for every method), each scored on `test_clips`.
MethodRuns evaluate_method(const std::string& method, double ratio, const ClipDataset& train_clips,
                           const ClipDataset& test_clips, const RunConfig& config, std::uint64_t experiment_seed);

/// Train on decoded distilled clips, test on scorer top-K frames of the test split.
MethodRuns evaluate_distilled(const RunConfig& config, const DistilledDataset& distilled, const Codec& codec,
                              const VideoSet& test, std::uint64_t experiment_seed);

/// random_coreset and full_data use uniform frames of raw videos. uniform,
/// pixel_diff and first_k use the raw source videos of `matched` with that rule,
/// so `matched` is required for them.
MethodRuns evaluate_baseline(const RunConfig& config, const std::string& method, const VideoSet& train,
                             const VideoSet& test, std::uint64_t experiment_seed,
                             const DistilledDataset* matched = nullptr);

/// Training seed of run `run` for an experiment seed; shared by every method.
std::uint64_t eval_seed(std::uint64_t experiment_seed, std::size_t run);

/// Rows of method,ratio,seed,accuracy, one per training run in run order;
/// `seed` is the experiment seed. Full precision, so parsing loses nothing.
std::string results_csv(std::span<const MethodRuns> runs);
std::vector<MethodRuns> parse_results_csv(const std::string& text);

/// Per method: runs pooled over experiment seeds, mean ± sample std, and the
/// gap to full_data when present.
nlohmann::json summarize_methods(std::span<const MethodRuns> runs);

/// Intra (mean over videos) and inter matrices per class, plus redundancy.csv.
/// Returns the per-class means.
nlohmann::json write_redundancy(const VideoSet& train, const RunConfig& config, const std::filesystem::path& dir,
                                std::vector<std::filesystem::path>& written);

/// frame,logit for one video.
std::string logits_csv(const Scorer& scorer, const VideoSet& set, std::size_t video);

struct ReproduceResult {
  nlohmann::json summary;
  std::vector<MethodRuns> runs;
};

/// gen-data, pretrain-codec, then per experiment seed: distill, evaluate the
/// distilled set and the baselines; full_data once. Writes results.csv,
/// summary.json and the redundancy analysis under `layout.root`.
ReproduceResult reproduce(const RunConfig& config, const Layout& layout, RunLog& log);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace vidistill
