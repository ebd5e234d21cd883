#include "ubalab/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace uba {

SgdOptimizer::SgdOptimizer(double lr, double momentum, double weight_decay)
    : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  if (!(lr > 0.0)) throw std::invalid_argument("SgdOptimizer: lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("SgdOptimizer: momentum must be in [0, 1)");
  if (weight_decay < 0.0)
    throw std::invalid_argument("SgdOptimizer: weight_decay must be non-negative");
}

void SgdOptimizer::set_lr(double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("SgdOptimizer: lr must be positive");
  lr_ = lr;
}

void SgdOptimizer::step(std::span<Tensor* const> params) {
  if (velocity_.empty()) {
    velocity_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i)
      velocity_[i].assign(params[i]->data.size(), 0.0f);
  }
  if (velocity_.size() != params.size())
    throw ShapeError("SgdOptimizer: parameter count changed between steps");
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    if (p.grad.size() != p.data.size())
      throw ShapeError("SgdOptimizer: parameter " + std::to_string(i) +
                       " has no gradient of matching size");
    auto& vel = velocity_[i];
    if (vel.size() != p.data.size())
      throw ShapeError("SgdOptimizer: parameter " + std::to_string(i) +
                       " changed size between steps");
    for (size_t j = 0; j < p.data.size(); ++j) {
      const double g = static_cast<double>(p.grad[j]) + weight_decay_ * p.data[j];
      const double v = momentum_ * static_cast<double>(vel[j]) + g;
      if (!std::isfinite(v)) throw NumericError("non-finite velocity in sgd step");
      vel[j] = static_cast<float>(v);
      p.data[j] = static_cast<float>(p.data[j] - lr_ * v);
    }
    if (!all_finite(p.data)) throw NumericError("non-finite parameter after sgd step");
  }
}

}  // namespace uba
