#pragma once

#include <span>
#include <vector>

#include "ubalab/tensor.hpp"

namespace uba {

// SGD with classical momentum and L2 weight decay folded into the gradient:
//
//   v <- momentum * v + (g + weight_decay * p)
//   p <- p - lr * v
//
// Velocity buffers are created lazily on the first step and are keyed by
// parameter position, so the same parameter list must be passed every step.
class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double momentum = 0.9, double weight_decay = 1e-4);

  double lr() const { return lr_; }
  void set_lr(double lr);

  // Every tensor must carry a filled grad of matching size.
  void step(std::span<Tensor* const> params);
  void step(std::initializer_list<Tensor*> params) {
    std::vector<Tensor*> v(params);
    step(std::span<Tensor* const>(v.data(), v.size()));
  }

  // Velocity buffer for parameter slot i (empty before the first step).
  const std::vector<float>& velocity(size_t i) const { return velocity_.at(i); }

 private:
  double lr_, momentum_, weight_decay_;
  std::vector<std::vector<float>> velocity_;
};

}  // namespace uba
