#include "vidistill/classifier.hpp"

#include <stdexcept>

#include "vidistill/ops.hpp"
#include "vidistill/params.hpp"

namespace vidistill {

std::string arch_name(Arch arch) { return arch == Arch::ConvNet3 ? "convnet3" : "mlp"; }

Arch parse_arch(const std::string& name) {
  if (name == "convnet3") return Arch::ConvNet3;
  if (name == "mlp") return Arch::Mlp;
  throw std::invalid_argument("unknown architecture '" + name + "' (expected convnet3 or mlp)");
}

Classifier init_classifier(Arch arch, std::size_t in_channels, std::size_t height, std::size_t width,
                           std::size_t classes, Rng& rng) {
  if (in_channels == 0 || classes == 0 || height == 0 || width == 0) {
    throw ShapeError("init_classifier: dimensions must be positive");
  }
  Classifier m{arch, in_channels, height, width, classes, {}};
  if (arch == Arch::ConvNet3) {
    const std::size_t widths[] = {in_channels, 32, 64, 128};
    for (int i = 0; i < 3; ++i) {
      m.params.push_back(he_uniform({widths[i + 1], widths[i], 3, 3}, widths[i] * 9, rng));
      m.params.push_back(Tensor::zeros({widths[i + 1]}));
    }
    m.params.push_back(fan_in_uniform({classes, 128}, 128, rng));
    m.params.push_back(Tensor::zeros({classes}));
  } else {
    const std::size_t in = in_channels * height * width;
    m.params.push_back(he_uniform({256, in}, in, rng));
    m.params.push_back(Tensor::zeros({256}));
    m.params.push_back(fan_in_uniform({classes, 256}, 256, rng));
    m.params.push_back(Tensor::zeros({classes}));
  }
  return m;
}

template <typename T>
BasicTensor<T> classify(const BasicClassifier<T>& model, const BasicTensor<T>& clips) {
  if (clips.rank() != 4 || clips.size(1) != model.in_channels || clips.size(2) != model.height ||
      clips.size(3) != model.width) {
    throw ShapeError("classify: expected N×" + std::to_string(model.in_channels) + "×" + std::to_string(model.height) +
                     "×" + std::to_string(model.width) + " clips, got " + shape_str(clips.shape()));
  }
  const auto& p = model.params;
  // Fixed input standardization: pixel values in [0, 1] map to [-2, 2].
  const auto x = scale(add(clips, BasicTensor<T>::full(clips.shape(), T(-0.5))), T(4));
  if (model.arch == Arch::ConvNet3) {
    auto h = x;
    for (int i = 0; i < 3; ++i) h = relu(conv2d(h, p[2 * i], p[2 * i + 1], {2, 1}));
    return linear(global_avg_pool(h), p[6], p[7]);
  }
  const auto flat = reshape(x, {x.size(0), x.numel() / x.size(0)});
  return linear(relu(linear(flat, p[0], p[1])), p[2], p[3]);
}

template BasicTensor<float> classify(const BasicClassifier<float>&, const BasicTensor<float>&);
template BasicTensor<double> classify(const BasicClassifier<double>&, const BasicTensor<double>&);

}  // namespace vidistill
