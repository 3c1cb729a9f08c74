#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vidistill/rng.hpp"
#include "vidistill/tensor.hpp"

namespace vidistill {

enum class Arch { ConvNet3, Mlp };

std::string arch_name(Arch arch);
/// Accepts "convnet3" or "mlp".
Arch parse_arch(const std::string& name);

/// Clip classifier over K channel-stacked frames (N×3K×H×W). Inputs are
/// standardized as 4·(x - 0.5) before the first layer.
/// convnet3: three conv(3×3, s2, p1)+ReLU blocks 3K→32→64→128, global pool, linear to C.
/// mlp: flatten → 256 → ReLU → C.
template <typename T>
struct BasicClassifier {
  Arch arch = Arch::ConvNet3;
  std::size_t in_channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t classes = 0;
  std::vector<BasicTensor<T>> params;

  template <typename U>
  BasicClassifier<U> cast(bool requires_grad) const {
    BasicClassifier<U> out{arch, in_channels, height, width, classes, {}};
    for (const auto& p : params) out.params.push_back(p.template cast<U>(requires_grad));
    return out;
  }
};

using Classifier = BasicClassifier<float>;

Classifier init_classifier(Arch arch, std::size_t in_channels, std::size_t height, std::size_t width,
                           std::size_t classes, Rng& rng);

/// N×3K×H×W -> N×C logits.
template <typename T>
BasicTensor<T> classify(const BasicClassifier<T>& model, const BasicTensor<T>& clips);

}  // namespace vidistill
