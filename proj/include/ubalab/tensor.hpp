#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace uba {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value detected during numeric work (forward op, backward pass,
// optimizer step). Carries the name of the operation that produced it.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline int64_t shape_numel(std::span<const int> shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(std::span<const int> shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major float32 tensor. `grad` is empty until a backward pass (or
// ensure_grad) fills it; when present it has the same length as `data`.
struct Tensor {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;

  Tensor() = default;
  Tensor(Shape s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("tensor data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) {
    auto n = shape_numel(s);
    return Tensor(std::move(s), std::vector<float>(static_cast<size_t>(n), 0.0f));
  }

  static Tensor full(Shape s, float v) {
    auto n = shape_numel(s);
    return Tensor(std::move(s), std::vector<float>(static_cast<size_t>(n), v));
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  bool has_grad() const { return !grad.empty(); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
  }
  void zero_grad() {
    if (!grad.empty()) grad.assign(grad.size(), 0.0f);
  }
};

inline bool all_finite(std::span<const float> v) {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void require_finite(const Tensor& t, const char* what) {
  if (!all_finite(t.data))
    throw NumericError(std::string("non-finite value in ") + what);
}

}  // namespace uba
