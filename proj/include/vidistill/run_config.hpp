#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "vidistill/codec.hpp"
#include "vidistill/distill.hpp"
#include "vidistill/eval.hpp"
#include "vidistill/synth_video.hpp"

namespace vidistill {

/// A rejected configuration. `key()` is the dotted path of the offending entry.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& what) : std::invalid_argument(what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct ExperimentConfig {
  /// Distillation seeds are seed, seed+1, ..., seed+seeds-1.
  std::size_t seeds = 5;
  /// Threads used for independent evaluation runs.
  std::size_t workers = 1;
  /// Every n-th training video feeds codec pretraining.
  std::size_t codec_stride = 4;
  /// Videos per class in the redundancy analysis (0 = all).
  std::size_t redundancy_videos = 20;
};

struct CheckConfig {
  std::size_t gumbel_vectors = 5;
  std::size_t gumbel_categories = 8;
  std::size_t gumbel_trials = 100000;
  double gumbel_logit_range = 2.0;
  std::size_t gap_instances = 5;
  std::size_t gap_draws = 100;
  std::vector<double> gap_taus{1.0, 0.5, 0.25};
  double grad_step = 1e-3;
  double grad_tolerance = 1e-3;
};

/// Everything one invocation needs. Section seeds are not configurable on
/// their own; they all follow from `seed` (see apply_seed).
struct RunConfig {
  static constexpr int kSchemaVersion = 1;

  std::uint64_t seed = 0;
  /// Empty means: $VIDISTILL_OUT if set, else ./vidistill_out.
  std::string output_dir;
  GenConfig generator;
  CodecTrainOptions codec;
  DistillConfig distill;
  EvalConfig eval;
  ExperimentConfig experiment;
  CheckConfig checks;

  RunConfig() { apply_seed(0); }

  void apply_seed(std::uint64_t s);
  /// Cross-section checks on top of each section's own validation.
  void validate() const;
  nlohmann::json to_json() const;
};

/// Starts from the defaults and overrides the keys present in `j`. Unknown keys,
/// type mismatches and invalid values raise ConfigError naming the key.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

std::filesystem::path resolve_output_dir(const RunConfig& config);

}  // namespace vidistill
