#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "vidistill/tensor.hpp"

namespace vidistill {

enum class Split { Train, Test };

std::string split_name(Split split);
Split parse_split(const std::string& name);

/// Raised when a training path is handed held-out data.
class SplitError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct GenConfig {
  std::size_t classes = 8;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  std::size_t frames = 16;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t event_width = 2;
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const GenConfig& c);
void from_json(const nlohmann::json& j, GenConfig& c);

/// One rendered video. Classes 2p and 2p+1 form a pair: generated from the same
/// pair seed they are identical except inside the event window, where the
/// core of the shape turns red (even class) or blue (odd class).
struct VideoSample {
  Tensor frames;  // T×3×H×W in [0, 1]
  int label = 0;
  std::size_t event_start = 0;
  std::uint64_t id = 0;
};

/// Renders the video of `label` for pair draw `pair_seed`.
VideoSample render_video(const GenConfig& config, int label, std::uint64_t pair_seed, std::size_t event_width);

/// A split held as one N×T×3×H×W block.
struct VideoSet {
  Split split = Split::Train;
  GenConfig config;
  Tensor frames;
  std::vector<int> labels;
  std::vector<std::size_t> event_starts;
  std::vector<std::uint64_t> ids;

  std::size_t size() const { return labels.size(); }
  std::size_t frame_count() const { return config.frames; }
  /// Copy of video i as T×3×H×W.
  Tensor video(std::size_t i) const;
  std::span<const float> video_data(std::size_t i) const;
  /// Indices of videos with the given label, in storage order.
  std::vector<std::size_t> indices_of_class(int label) const;
};

/// Samples are ordered by class, then by draw index within the class.
VideoSet generate_split(const GenConfig& config, Split split);

/// Sample ids encode split, class and draw index, so the two splits never share one.
std::uint64_t sample_id(Split split, int label, std::size_t draw);

struct DatasetManifest {
  static constexpr int kFormatVersion = 1;
  GenConfig config;
  struct FileEntry {
    std::string name;
    std::string split;
    std::string sha256;
    std::size_t count = 0;
  };
  std::vector<FileEntry> files;
  nlohmann::json samples;  // per split: list of {id, label, event_start}

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

/// Writes train.vct, test.vct and manifest.json into `dir`.
DatasetManifest generate_dataset(const GenConfig& config, const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& dir);
/// Loads one split, verifying the file digest against the manifest.
VideoSet load_split(const std::filesystem::path& dir, Split split);

/// Seeded permutation of [0, n).
std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed);

}  // namespace vidistill
