#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ubalab/tensor.hpp"

namespace uba {

// Reverse-mode autodiff on a linear tape (define-by-run). Leaves are f32
// tensors widened to double on entry; all intermediate values and adjoints
// are double, and gradients narrow back to f32 when written into a Tensor.
// Single-threaded, fixed evaluation order, so results are bit-reproducible.
//
// Every forward op validates its operand shapes and scans its output for
// non-finite values, throwing NumericError named after the op.
class Tape {
 public:
  using NodeId = int32_t;

  enum class Op : uint8_t {
    kLeaf,
    kMatmul,
    kAdd,
    kAddBias,
    kMul,
    kScale,
    kAddScalar,
    kRelu,
    kTanh,
    kClamp01,
    kClampMin,
    kLog,
    kReshape,
    kRow,
    kReduceMean,
    kReduceSum,
    kMse,
    kRowwiseMse,
    kSoftmaxCrossEntropy,
    kConv2d,
    kAvgPool2,
  };
  static const char* op_name(Op op);

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Copies the tensor's f32 data onto the tape as doubles. Gradients are
  // accumulated only for needs_grad leaves (and anything downstream).
  NodeId leaf(const Tensor& t, bool needs_grad = false);

  NodeId matmul(NodeId a, NodeId b);           // [m,k] x [k,n] -> [m,n]
  NodeId add(NodeId a, NodeId b);              // same shape
  NodeId add_bias(NodeId m, NodeId bias);      // [m,n] + [n] broadcast over rows
  NodeId mul(NodeId a, NodeId b);              // elementwise, same shape
  NodeId scale(NodeId a, double c);
  NodeId add_scalar(NodeId a, double c);
  NodeId relu(NodeId a);
  NodeId tanh(NodeId a);
  NodeId clamp01(NodeId a);                    // clamp to [0,1]
  NodeId clamp_min(NodeId a, double lo);       // max(x, lo)
  NodeId log(NodeId a);                        // natural log; domain error if x <= 0
  NodeId reshape(NodeId a, Shape s);
  NodeId row(NodeId a, int r);                 // [m,n] -> [n]
  NodeId reduce_mean(NodeId a);                // -> [1]
  NodeId reduce_sum(NodeId a);                 // -> [1]
  NodeId mse(NodeId a, NodeId b);              // mean squared error -> [1]
  NodeId rowwise_mse(NodeId a, NodeId b);      // [m,n] pairs -> [m] per-row MSE
  // Mean cross-entropy of softmax(logits) against integer labels. logits is
  // [B,K] with labels.size() == B (or [K] with one label).
  NodeId softmax_cross_entropy(NodeId logits, std::span<const int> labels);
  // 2-D convolution, stride 1, square zero padding. x [B,C,H,W],
  // w [O,C,kh,kw], bias [O] -> [B,O,H',W'].
  NodeId conv2d(NodeId x, NodeId w, NodeId bias, int pad);
  NodeId avgpool2(NodeId x);                   // 2x2 window, stride 2

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. `loss` must be
  // a scalar (numel 1). A tape can be consumed only once.
  void backward(NodeId loss);
  bool consumed() const { return consumed_; }
  size_t node_count() const { return nodes_.size(); }

  const Shape& shape(NodeId id) const { return node(id).shape; }
  std::span<const double> value(NodeId id) const { return node(id).value; }
  double scalar(NodeId id) const;
  Tensor value_tensor(NodeId id) const;  // f32 snapshot of the node's value
  std::span<const double> grad(NodeId id) const;
  // Narrows the node's adjoint into t.grad (t must match the node's numel).
  void write_grad(NodeId id, Tensor& t) const;

 private:
  struct Node {
    Op op = Op::kLeaf;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    NodeId a = -1, b = -1, c = -1;
    bool needs_grad = false;
    std::vector<double> daux;  // op-specific double payload (softmax probs, scalars)
    std::vector<int> iaux;     // op-specific int payload (labels, conv geometry)
  };

  const Node& node(NodeId id) const;
  Node& node(NodeId id);
  NodeId push(Node n);
  void check_same_shape(NodeId a, NodeId b, const char* op) const;
  void backward_one(Node& n);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace uba
