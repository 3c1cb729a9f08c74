#include "vidistill/codec.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "vidistill/digest.hpp"
#include "vidistill/ops.hpp"
#include "vidistill/optim.hpp"
#include "vidistill/params.hpp"
#include "vidistill/tensor_io.hpp"

namespace vidistill {

namespace {

const Shape kCodecShapes[] = {{8, 3, 3, 3}, {8}, {4, 8, 3, 3}, {4}, {4, 8, 4, 4}, {8}, {8, 3, 4, 4}, {3}};

void validate(const CodecWeights& w) {
  if (w.params.size() != CodecWeights::kCount) throw ShapeError("codec: wrong number of weight tensors");
  for (std::size_t i = 0; i < w.params.size(); ++i) {
    if (w.params[i].shape() != kCodecShapes[i]) {
      throw ShapeError("codec: tensor " + std::to_string(i) + " has shape " + shape_str(w.params[i].shape()) +
                       ", expected " + shape_str(kCodecShapes[i]));
    }
  }
}

Tensor slice_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t row = x.numel() / x.size(0);
  std::vector<float> out;
  out.reserve(rows.size() * row);
  for (const auto r : rows) {
    const auto src = x.data().subspan(r * row, row);
    out.insert(out.end(), src.begin(), src.end());
  }
  Shape shape = x.shape();
  shape[0] = rows.size();
  return Tensor::from_data(std::move(shape), std::move(out));
}

}  // namespace

CodecWeights init_codec_weights(Rng& rng) {
  CodecWeights w;
  // Transposed-conv fan-in counts output channels × kernel area.
  w.params = {fan_in_uniform(kCodecShapes[0], 27, rng), Tensor::zeros({8}),
              fan_in_uniform(kCodecShapes[2], 72, rng), Tensor::zeros({4}),
              fan_in_uniform(kCodecShapes[4], 128, rng), Tensor::zeros({8}),
              fan_in_uniform(kCodecShapes[6], 48, rng), Tensor::zeros({3})};
  return w;
}

template <typename T>
BasicTensor<T> encode_frames(const BasicCodecWeights<T>& w, const BasicTensor<T>& frames) {
  if (frames.rank() != 4 || frames.size(1) != 3 || frames.size(2) % 4 != 0 || frames.size(3) % 4 != 0) {
    throw ShapeError("encode: expected N×3×H×W with H, W divisible by 4, got " + shape_str(frames.shape()));
  }
  using W = BasicCodecWeights<T>;
  const auto& p = w.params;
  const auto h = relu(conv2d(frames, p[W::kEnc1W], p[W::kEnc1B], {2, 1}));
  return conv2d(h, p[W::kEnc2W], p[W::kEnc2B], {2, 1});
}

template <typename T>
BasicTensor<T> decode_latents(const BasicCodecWeights<T>& w, const BasicTensor<T>& latents) {
  if (latents.rank() != 4 || latents.size(1) != kLatentChannels) {
    throw ShapeError("decode: expected N×4×h×w latents, got " + shape_str(latents.shape()));
  }
  using W = BasicCodecWeights<T>;
  const auto& p = w.params;
  const auto h = relu(conv_transpose2d(latents, p[W::kDec1W], p[W::kDec1B], {2, 1}));
  return sigmoid(conv_transpose2d(h, p[W::kDec2W], p[W::kDec2B], {2, 1}));
}

template BasicTensor<float> encode_frames(const BasicCodecWeights<float>&, const BasicTensor<float>&);
template BasicTensor<double> encode_frames(const BasicCodecWeights<double>&, const BasicTensor<double>&);
template BasicTensor<float> decode_latents(const BasicCodecWeights<float>&, const BasicTensor<float>&);
template BasicTensor<double> decode_latents(const BasicCodecWeights<double>&, const BasicTensor<double>&);

Codec::Codec(CodecWeights weights, std::uint64_t seed, double train_mse)
    : weights_(std::move(weights)), seed_(seed), train_mse_(train_mse) {
  validate(weights_);
}

CodecWeights& Codec::mutable_weights() {
  if (frozen_) throw FrozenCodecError("codec is frozen; weight updates are not allowed");
  return weights_;
}

void Codec::freeze() {
  if (frozen_) return;
  if (!all_finite(weights_.params)) throw NumericError("codec: cannot freeze non-finite weights");
  weights_.params = detach_all<float>(weights_.params, false);
  frozen_digest_ = digest();
  frozen_ = true;
}

std::string Codec::digest() const { return tensors_digest(weights_.params); }

void Codec::require_frozen(const std::string& who) const {
  if (!frozen_) throw FrozenCodecError(who + ": codec must be frozen");
  if (digest() != frozen_digest_) throw FrozenCodecError(who + ": frozen codec weights changed");
}

Tensor Codec::encode(const Tensor& frames) const { return encode_frames(weights_, frames); }

Tensor Codec::decode(const Tensor& latents) const { return decode_latents(weights_, latents); }

void Codec::save(const std::filesystem::path& stem) const {
  auto weights_path = stem;
  weights_path += ".vct";
  save_tensors(weights_path, weights_.params);
  nlohmann::json meta = {{"frozen", frozen_}, {"digest", digest()}, {"train_mse", train_mse_}, {"seed", seed_}};
  const auto text = meta.dump(2) + "\n";
  auto meta_path = stem;
  meta_path += ".json";
  write_file(meta_path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Codec Codec::load(const std::filesystem::path& stem) {
  auto weights_path = stem;
  weights_path += ".vct";
  auto meta_path = stem;
  meta_path += ".json";
  std::ifstream in(meta_path);
  if (!in) throw std::runtime_error("cannot open codec sidecar " + meta_path.string());
  const auto meta = nlohmann::json::parse(in);
  CodecWeights w;
  w.params = load_tensors(weights_path);
  Codec codec(std::move(w), meta.at("seed").get<std::uint64_t>(), meta.at("train_mse").get<double>());
  const auto expected = meta.at("digest").get<std::string>();
  if (codec.digest() != expected) {
    throw FormatError("codec digest mismatch: sidecar " + expected + ", weights " + codec.digest(), 0);
  }
  if (meta.at("frozen").get<bool>()) codec.freeze();
  return codec;
}

double reconstruction_mse(const CodecWeights& weights, const Tensor& frames) {
  NoGradGuard no_grad;
  const std::size_t n = frames.size(0);
  const std::size_t chunk = 256;
  double total = 0.0;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < n; start += chunk) {
    rows.resize(std::min(chunk, n - start));
    std::iota(rows.begin(), rows.end(), start);
    const auto x = slice_rows(frames, rows);
    const auto y = decode_latents(weights, encode_frames(weights, x));
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double d = static_cast<double>(y.data()[i]) - x.data()[i];
      total += d * d;
    }
  }
  return total / static_cast<double>(frames.numel());
}

Codec pretrain_codec(const Tensor& frames, const CodecTrainOptions& options) {
  if (frames.rank() != 4 || frames.size(0) == 0) throw ShapeError("pretrain_codec: expected a nonempty N×3×H×W corpus");
  Rng rng(options.seed);
  auto weights = init_codec_weights(rng);
  set_requires_grad<float>(weights.params, true);
  AdamState adam(weights.params, {.lr = options.lr});
  const std::size_t n = frames.size(0);
  const std::size_t batch = std::max<std::size_t>(1, std::min(options.batch_size, n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < n; start += batch) {
      const auto rows = std::span(order).subspan(start, std::min(batch, n - start));
      const auto x = slice_rows(frames, rows);
      zero_grads(weights.params);
      const auto diff = sub(decode_latents(weights, encode_frames(weights, x)), x);
      const auto loss = mean(mul(diff, diff));
      if (!std::isfinite(loss.item())) throw NumericError("pretrain_codec: reconstruction loss diverged");
      loss.backward();
      adam_step(weights.params, adam);
    }
  }
  weights.params = detach_all<float>(weights.params, false);
  const double mse = reconstruction_mse(weights, frames);
  if (!std::isfinite(mse)) throw NumericError("pretrain_codec: reconstruction loss diverged");
  return Codec(std::move(weights), options.seed, mse);
}

}  // namespace vidistill
