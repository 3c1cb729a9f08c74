#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "vidistill/rng.hpp"
#include "vidistill/tensor.hpp"

namespace vidistill {

/// Autoencoder weights. Encoder: conv(3→8, 3×3, s2, p1) → ReLU → conv(8→4, 3×3, s2, p1).
/// Decoder: convT(4→8, 4×4, s2, p1) → ReLU → convT(8→3, 4×4, s2, p1) → sigmoid.
template <typename T>
struct BasicCodecWeights {
  enum Index { kEnc1W, kEnc1B, kEnc2W, kEnc2B, kDec1W, kDec1B, kDec2W, kDec2B, kCount };
  std::vector<BasicTensor<T>> params;

  template <typename U>
  BasicCodecWeights<U> cast(bool requires_grad) const {
    BasicCodecWeights<U> out;
    for (const auto& p : params) out.params.push_back(p.template cast<U>(requires_grad));
    return out;
  }
};

using CodecWeights = BasicCodecWeights<float>;

inline constexpr std::size_t kLatentChannels = 4;

CodecWeights init_codec_weights(Rng& rng);

/// N×3×H×W -> N×4×(H/4)×(W/4).
template <typename T>
BasicTensor<T> encode_frames(const BasicCodecWeights<T>& w, const BasicTensor<T>& frames);
/// N×4×h×w -> N×3×(4h)×(4w), values in [0, 1].
template <typename T>
BasicTensor<T> decode_latents(const BasicCodecWeights<T>& w, const BasicTensor<T>& latents);

class FrozenCodecError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Codec {
 public:
  Codec() = default;
  Codec(CodecWeights weights, std::uint64_t seed, double train_mse);

  const CodecWeights& weights() const { return weights_; }
  /// Write access for training; throws FrozenCodecError once frozen.
  CodecWeights& mutable_weights();

  /// Idempotent. Records the weight digest.
  void freeze();
  bool frozen() const { return frozen_; }
  /// Digest of the current weights.
  std::string digest() const;
  /// Throws FrozenCodecError unless frozen with weights still matching the recorded digest.
  void require_frozen(const std::string& who) const;

  std::uint64_t seed() const { return seed_; }
  double train_mse() const { return train_mse_; }
  void set_train_mse(double mse) { train_mse_ = mse; }

  // Weights never receive gradients here; gradients flow through to the input.
  Tensor encode(const Tensor& frames) const;
  Tensor decode(const Tensor& latents) const;

  /// Writes `<stem>.vct` (weights) and `<stem>.json` (sidecar).
  void save(const std::filesystem::path& stem) const;
  static Codec load(const std::filesystem::path& stem);

 private:
  CodecWeights weights_;
  bool frozen_ = false;
  std::string frozen_digest_;
  std::uint64_t seed_ = 0;
  double train_mse_ = 0.0;
};

struct CodecTrainOptions {
  std::size_t epochs = 8;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

/// Mean squared reconstruction error over all frames.
double reconstruction_mse(const CodecWeights& weights, const Tensor& frames);

/// Adam on mean squared reconstruction error. The result is not frozen and
/// carries the final MSE over the whole corpus.
Codec pretrain_codec(const Tensor& frames, const CodecTrainOptions& options);

}  // namespace vidistill
