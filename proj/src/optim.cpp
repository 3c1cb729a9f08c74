#include "vidistill/optim.hpp"

#include <cmath>
#include <string>

namespace vidistill {

namespace {

void check_group(const char* who, std::span<Tensor> params, const std::vector<Shape>& shapes) {
  if (params.size() != shapes.size()) {
    throw ShapeError(std::string(who) + ": state tracks " + std::to_string(shapes.size()) + " parameters, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != shapes[i]) {
      throw ShapeError(std::string(who) + ": parameter " + std::to_string(i) + " has shape " +
                       shape_str(params[i].shape()) + ", state expects " + shape_str(shapes[i]));
    }
    for (const auto g : params[i].grad()) {
      if (!std::isfinite(g)) throw NumericError(std::string(who) + ": non-finite gradient in parameter " + std::to_string(i));
    }
  }
}

}  // namespace

AdamState::AdamState(std::span<const Tensor> params, AdamOptions options) : options_(options) {
  for (const auto& p : params) {
    shapes_.push_back(p.shape());
    m_.emplace_back(p.numel(), 0.0f);
    v_.emplace_back(p.numel(), 0.0f);
  }
}

void adam_step(std::span<Tensor> params, AdamState& state) {
  check_group("adam_step", params, state.shapes_);
  const auto& o = state.options_;
  ++state.step_;
  const double t = static_cast<double>(state.step_);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto data = params[i].data();
    const auto grad = params[i].grad();
    auto& m = state.m_[i];
    auto& v = state.v_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      const double mj = o.beta1 * m[j] + (1.0 - o.beta1) * g;
      const double vj = o.beta2 * v[j] + (1.0 - o.beta2) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double m_hat = mj / correction1;
      const double v_hat = vj / correction2;
      data[j] = static_cast<float>(data[j] - o.lr * m_hat / (std::sqrt(v_hat) + o.eps));
    }
  }
}

SgdMomentumState::SgdMomentumState(std::span<const Tensor> params, SgdOptions options) : options_(options) {
  for (const auto& p : params) {
    shapes_.push_back(p.shape());
    velocity_.emplace_back(p.numel(), 0.0f);
  }
}

void sgd_momentum_step(std::span<Tensor> params, SgdMomentumState& state) {
  check_group("sgd_momentum_step", params, state.shapes_);
  const auto& o = state.options_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto data = params[i].data();
    const auto grad = params[i].grad();
    auto& vel = state.velocity_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = (grad.empty() ? 0.0 : grad[j]) + o.weight_decay * data[j];
      const double vj = o.momentum * vel[j] + g;
      vel[j] = static_cast<float>(vj);
      data[j] = static_cast<float>(data[j] - o.lr * vj);
    }
  }
}

void zero_grads(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace vidistill
