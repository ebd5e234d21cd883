#include "ubalab/tape.hpp"

#include <algorithm>
#include <cmath>

namespace uba {

const char* Tape::op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatmul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kAddBias: return "add_bias";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kRelu: return "relu";
    case Op::kTanh: return "tanh";
    case Op::kClamp01: return "clamp01";
    case Op::kClampMin: return "clamp_min";
    case Op::kLog: return "log";
    case Op::kReshape: return "reshape";
    case Op::kRow: return "row";
    case Op::kReduceMean: return "reduce_mean";
    case Op::kReduceSum: return "reduce_sum";
    case Op::kMse: return "mse";
    case Op::kRowwiseMse: return "rowwise_mse";
    case Op::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case Op::kConv2d: return "conv2d";
    case Op::kAvgPool2: return "avgpool2";
  }
  return "?";
}

const Tape::Node& Tape::node(NodeId id) const {
  if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
    throw ShapeError("invalid tape node id " + std::to_string(id));
  return nodes_[static_cast<size_t>(id)];
}

Tape::Node& Tape::node(NodeId id) {
  return const_cast<Node&>(static_cast<const Tape*>(this)->node(id));
}

Tape::NodeId Tape::push(Node n) {
  if (!all_finite(n.value))
    throw NumericError(std::string("non-finite output of op '") + op_name(n.op) + "'");
  if (n.needs_grad) n.grad.assign(n.value.size(), 0.0);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::check_same_shape(NodeId a, NodeId b, const char* op) const {
  if (node(a).shape != node(b).shape)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(node(a).shape) +
                     " vs " + shape_str(node(b).shape));
}

Tape::NodeId Tape::leaf(const Tensor& t, bool needs_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.shape = t.shape;
  n.value.assign(t.data.begin(), t.data.end());
  n.needs_grad = needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  const Node& A = node(a);
  const Node& B = node(b);
  if (A.shape.size() != 2 || B.shape.size() != 2)
    throw ShapeError("matmul: operands must be rank 2, got " + shape_str(A.shape) + " and " +
                     shape_str(B.shape));
  const int m = A.shape[0], k = A.shape[1], k2 = B.shape[0], p = B.shape[1];
  if (k != k2)
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(A.shape) + " x " +
                     shape_str(B.shape));
  Node n;
  n.op = Op::kMatmul;
  n.shape = {m, p};
  n.a = a;
  n.b = b;
  n.needs_grad = A.needs_grad || B.needs_grad;
  n.value.assign(static_cast<size_t>(m) * static_cast<size_t>(p), 0.0);
  const double* av = A.value.data();
  const double* bv = B.value.data();
  double* out = n.value.data();
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const double aik = av[static_cast<size_t>(i) * k + kk];
      if (aik == 0.0) continue;
      const double* brow = bv + static_cast<size_t>(kk) * p;
      double* orow = out + static_cast<size_t>(i) * p;
      for (int j = 0; j < p; ++j) orow[j] += aik * brow[j];
    }
  }
  return push(std::move(n));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  check_same_shape(a, b, "add");
  const Node& A = node(a);
  const Node& B = node(b);
  Node n;
  n.op = Op::kAdd;
  n.shape = A.shape;
  n.a = a;
  n.b = b;
  n.needs_grad = A.needs_grad || B.needs_grad;
  n.value.resize(A.value.size());
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = A.value[i] + B.value[i];
  return push(std::move(n));
}

Tape::NodeId Tape::add_bias(NodeId m, NodeId bias) {
  const Node& M = node(m);
  const Node& B = node(bias);
  if (M.shape.size() != 2 || B.shape.size() != 1 || B.shape[0] != M.shape[1])
    throw ShapeError("add_bias: need [m,n] and [n], got " + shape_str(M.shape) + " and " +
                     shape_str(B.shape));
  Node n;
  n.op = Op::kAddBias;
  n.shape = M.shape;
  n.a = m;
  n.b = bias;
  n.needs_grad = M.needs_grad || B.needs_grad;
  n.value.resize(M.value.size());
  const int rows = M.shape[0], cols = M.shape[1];
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      n.value[static_cast<size_t>(i) * cols + j] =
          M.value[static_cast<size_t>(i) * cols + j] + B.value[static_cast<size_t>(j)];
  return push(std::move(n));
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
  check_same_shape(a, b, "mul");
  const Node& A = node(a);
  const Node& B = node(b);
  Node n;
  n.op = Op::kMul;
  n.shape = A.shape;
  n.a = a;
  n.b = b;
  n.needs_grad = A.needs_grad || B.needs_grad;
  n.value.resize(A.value.size());
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = A.value[i] * B.value[i];
  return push(std::move(n));
}

Tape::NodeId Tape::scale(NodeId a, double c) {
  const Node& A = node(a);
  Node n;
  n.op = Op::kScale;
  n.shape = A.shape;
  n.a = a;
  n.needs_grad = A.needs_grad;
  n.daux = {c};
  n.value.resize(A.value.size());
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = c * A.value[i];
  return push(std::move(n));
}

Tape::NodeId Tape::add_scalar(NodeId a, double c) {
  const Node& A = node(a);
  Node n;
  n.op = Op::kAddScalar;
  n.shape = A.shape;
  n.a = a;
  n.needs_grad = A.needs_grad;
  n.value.resize(A.value.size());
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = A.value[i] + c;
  return push(std::move(n));
}

Tape::NodeId Tape::relu(NodeId a) {
  const Node& A = node(a);
  Node n;
  n.op = Op::kRelu;
  n.shape = A.shape;
  n.a = a;
  n.needs_grad = A.needs_grad;
  n.value.resize(A.value.size());
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = A.value[i] > 0.0 ? A.value[i] : 0.0;
  return push(std::move(n));
}

Tape::NodeId Tape::tanh(NodeId a) {
  const Node& A = node(a);
  Node n;
  n.op = Op::kTanh;
  n.shape = A.shape;
  n.a = a;
  n.needs_grad = A.needs_grad;
  n.value.resize(A.value.size());
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::tanh(A.value[i]);
  return push(std::move(n));
}

Tape::NodeId Tape::clamp01(NodeId a) {
  const Node& A = node(a);
  Node n;
  n.op = Op::kClamp01;
  n.shape = A.shape;
  n.a = a;
  n.needs_grad = A.needs_grad;
  n.value.resize(A.value.size());
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::clamp(A.value[i], 0.0, 1.0);
  return push(std::move(n));
}

Tape::NodeId Tape::clamp_min(NodeId a, double lo) {
  const Node& A = node(a);
  Node n;
  n.op = Op::kClampMin;
  n.shape = A.shape;
  n.a = a;
  n.needs_grad = A.needs_grad;
  n.daux = {lo};
  n.value.resize(A.value.size());
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::max(A.value[i], lo);
  return push(std::move(n));
}

Tape::NodeId Tape::log(NodeId a) {
  const Node& A = node(a);
  Node n;
  n.op = Op::kLog;
  n.shape = A.shape;
  n.a = a;
  n.needs_grad = A.needs_grad;
  n.value.resize(A.value.size());
  for (size_t i = 0; i < n.value.size(); ++i) {
    if (A.value[i] <= 0.0)
      throw NumericError("log: non-positive input " + std::to_string(A.value[i]));
    n.value[i] = std::log(A.value[i]);
  }
  return push(std::move(n));
}

Tape::NodeId Tape::reshape(NodeId a, Shape s) {
  const Node& A = node(a);
  if (shape_numel(s) != static_cast<int64_t>(A.value.size()))
    throw ShapeError("reshape: cannot reshape " + shape_str(A.shape) + " to " + shape_str(s));
  Node n;
  n.op = Op::kReshape;
  n.shape = std::move(s);
  n.a = a;
  n.needs_grad = A.needs_grad;
  n.value = A.value;
  return push(std::move(n));
}

Tape::NodeId Tape::row(NodeId a, int r) {
  const Node& A = node(a);
  if (A.shape.size() != 2)
    throw ShapeError("row: operand must be rank 2, got " + shape_str(A.shape));
  if (r < 0 || r >= A.shape[0])
    throw ShapeError("row: index " + std::to_string(r) + " out of range for " + shape_str(A.shape));
  const int cols = A.shape[1];
  Node n;
  n.op = Op::kRow;
  n.shape = {cols};
  n.a = a;
  n.needs_grad = A.needs_grad;
  n.iaux = {r};
  n.value.assign(A.value.begin() + static_cast<size_t>(r) * cols,
                 A.value.begin() + static_cast<size_t>(r + 1) * cols);
  return push(std::move(n));
}

Tape::NodeId Tape::reduce_mean(NodeId a) {
  const Node& A = node(a);
  if (A.value.empty()) throw ShapeError("reduce_mean: empty operand");
  Node n;
  n.op = Op::kReduceMean;
  n.shape = {1};
  n.a = a;
  n.needs_grad = A.needs_grad;
  double s = 0.0;
  for (double v : A.value) s += v;
  n.value = {s / static_cast<double>(A.value.size())};
  return push(std::move(n));
}

Tape::NodeId Tape::reduce_sum(NodeId a) {
  const Node& A = node(a);
  Node n;
  n.op = Op::kReduceSum;
  n.shape = {1};
  n.a = a;
  n.needs_grad = A.needs_grad;
  double s = 0.0;
  for (double v : A.value) s += v;
  n.value = {s};
  return push(std::move(n));
}

Tape::NodeId Tape::mse(NodeId a, NodeId b) {
  check_same_shape(a, b, "mse");
  const Node& A = node(a);
  const Node& B = node(b);
  if (A.value.empty()) throw ShapeError("mse: empty operand");
  Node n;
  n.op = Op::kMse;
  n.shape = {1};
  n.a = a;
  n.b = b;
  n.needs_grad = A.needs_grad || B.needs_grad;
  double s = 0.0;
  for (size_t i = 0; i < A.value.size(); ++i) {
    const double d = A.value[i] - B.value[i];
    s += d * d;
  }
  n.value = {s / static_cast<double>(A.value.size())};
  return push(std::move(n));
}

Tape::NodeId Tape::rowwise_mse(NodeId a, NodeId b) {
  check_same_shape(a, b, "rowwise_mse");
  const Node& A = node(a);
  const Node& B = node(b);
  if (A.shape.size() != 2 || A.shape[1] == 0)
    throw ShapeError("rowwise_mse: need rank-2 operands with nonzero columns, got " +
                     shape_str(A.shape));
  const int rows = A.shape[0], cols = A.shape[1];
  Node n;
  n.op = Op::kRowwiseMse;
  n.shape = {rows};
  n.a = a;
  n.b = b;
  n.needs_grad = A.needs_grad || B.needs_grad;
  n.value.resize(static_cast<size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double d = A.value[static_cast<size_t>(i) * cols + j] -
                       B.value[static_cast<size_t>(i) * cols + j];
      s += d * d;
    }
    n.value[static_cast<size_t>(i)] = s / cols;
  }
  return push(std::move(n));
}

Tape::NodeId Tape::softmax_cross_entropy(NodeId logits, std::span<const int> labels) {
  const Node& L = node(logits);
  int batch, classes;
  if (L.shape.size() == 2) {
    batch = L.shape[0];
    classes = L.shape[1];
  } else if (L.shape.size() == 1) {
    batch = 1;
    classes = L.shape[0];
  } else {
    throw ShapeError("softmax_cross_entropy: logits must be rank 1 or 2, got " +
                     shape_str(L.shape));
  }
  if (static_cast<int>(labels.size()) != batch)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(batch));
  if (batch == 0 || classes == 0) throw ShapeError("softmax_cross_entropy: empty logits");
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(y) +
                       " out of range for " + std::to_string(classes) + " classes");
  Node n;
  n.op = Op::kSoftmaxCrossEntropy;
  n.shape = {1};
  n.a = logits;
  n.needs_grad = L.needs_grad;
  n.iaux.assign(labels.begin(), labels.end());
  n.daux.resize(static_cast<size_t>(batch) * classes);  // softmax probabilities
  double total = 0.0;
  for (int i = 0; i < batch; ++i) {
    const double* z = L.value.data() + static_cast<size_t>(i) * classes;
    double zmax = z[0];
    for (int k = 1; k < classes; ++k) zmax = std::max(zmax, z[k]);
    double denom = 0.0;
    for (int k = 0; k < classes; ++k) denom += std::exp(z[k] - zmax);
    const double logdenom = std::log(denom);
    for (int k = 0; k < classes; ++k)
      n.daux[static_cast<size_t>(i) * classes + k] = std::exp(z[k] - zmax) / denom;
    total += logdenom + zmax - z[labels[static_cast<size_t>(i)]];
  }
  n.value = {total / batch};
  return push(std::move(n));
}

Tape::NodeId Tape::conv2d(NodeId x, NodeId w, NodeId bias, int pad) {
  const Node& X = node(x);
  const Node& W = node(w);
  const Node& B = node(bias);
  if (X.shape.size() != 4 || W.shape.size() != 4 || B.shape.size() != 1)
    throw ShapeError("conv2d: need x [B,C,H,W], w [O,C,kh,kw], bias [O]");
  const int nb = X.shape[0], ci = X.shape[1], h = X.shape[2], wd = X.shape[3];
  const int co = W.shape[0], kh = W.shape[2], kw = W.shape[3];
  if (W.shape[1] != ci)
    throw ShapeError("conv2d: channel mismatch, x " + shape_str(X.shape) + " w " +
                     shape_str(W.shape));
  if (B.shape[0] != co) throw ShapeError("conv2d: bias length must equal output channels");
  if (pad < 0) throw ShapeError("conv2d: negative padding");
  const int ho = h + 2 * pad - kh + 1;
  const int wo = wd + 2 * pad - kw + 1;
  if (ho <= 0 || wo <= 0)
    throw ShapeError("conv2d: kernel larger than padded input");
  Node n;
  n.op = Op::kConv2d;
  n.shape = {nb, co, ho, wo};
  n.a = x;
  n.b = w;
  n.c = bias;
  n.needs_grad = X.needs_grad || W.needs_grad || B.needs_grad;
  n.iaux = {nb, ci, h, wd, co, kh, kw, pad, ho, wo};
  n.value.assign(static_cast<size_t>(nb) * co * ho * wo, 0.0);
  for (int ib = 0; ib < nb; ++ib)
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = B.value[static_cast<size_t>(oc)];
          for (int icC = 0; icC < ci; ++icC)
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy + ky - pad;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox + kx - pad;
                if (ix < 0 || ix >= wd) continue;
                acc += X.value[((static_cast<size_t>(ib) * ci + icC) * h + iy) * wd + ix] *
                       W.value[((static_cast<size_t>(oc) * ci + icC) * kh + ky) * kw + kx];
              }
            }
          n.value[((static_cast<size_t>(ib) * co + oc) * ho + oy) * wo + ox] = acc;
        }
  return push(std::move(n));
}

Tape::NodeId Tape::avgpool2(NodeId x) {
  const Node& X = node(x);
  if (X.shape.size() != 4) throw ShapeError("avgpool2: need rank-4 input");
  const int nb = X.shape[0], c = X.shape[1], h = X.shape[2], w = X.shape[3];
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("avgpool2: spatial dims must be even, got " + shape_str(X.shape));
  const int ho = h / 2, wo = w / 2;
  Node n;
  n.op = Op::kAvgPool2;
  n.shape = {nb, c, ho, wo};
  n.a = x;
  n.needs_grad = X.needs_grad;
  n.value.resize(static_cast<size_t>(nb) * c * ho * wo);
  for (int ib = 0; ib < nb; ++ib)
    for (int ic = 0; ic < c; ++ic)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const size_t base = ((static_cast<size_t>(ib) * c + ic) * h + 2 * oy) * w + 2 * ox;
          const double s = X.value[base] + X.value[base + 1] + X.value[base + w] +
                           X.value[base + w + 1];
          n.value[((static_cast<size_t>(ib) * c + ic) * ho + oy) * wo + ox] = 0.25 * s;
        }
  return push(std::move(n));
}

double Tape::scalar(NodeId id) const {
  const Node& n = node(id);
  if (n.value.size() != 1)
    throw ShapeError("scalar: node has shape " + shape_str(n.shape));
  return n.value[0];
}

Tensor Tape::value_tensor(NodeId id) const {
  const Node& n = node(id);
  Tensor t;
  t.shape = n.shape;
  t.data.resize(n.value.size());
  for (size_t i = 0; i < n.value.size(); ++i) t.data[i] = static_cast<float>(n.value[i]);
  return t;
}

std::span<const double> Tape::grad(NodeId id) const {
  const Node& n = node(id);
  if (!n.needs_grad)
    throw ShapeError("grad requested for node that does not track gradients");
  return n.grad;
}

void Tape::write_grad(NodeId id, Tensor& t) const {
  auto g = grad(id);
  if (static_cast<int64_t>(g.size()) != t.numel())
    throw ShapeError("write_grad: size mismatch");
  t.grad.resize(g.size());
  for (size_t i = 0; i < g.size(); ++i) t.grad[i] = static_cast<float>(g[i]);
}

namespace {
// Adds g into dst if dst tracks gradients.
inline void accum(Tape::NodeId, std::vector<double>& dst, size_t idx, double g) {
  dst[idx] += g;
}
}  // namespace

void Tape::backward_one(Node& n) {
  auto parent_grad = [&](NodeId id) -> std::vector<double>* {
    Node& p = node(id);
    return p.needs_grad ? &p.grad : nullptr;
  };
  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kMatmul: {
      const Node& A = node(n.a);
      const Node& B = node(n.b);
      const int m = A.shape[0], k = A.shape[1], p = B.shape[1];
      if (auto* ga = parent_grad(n.a)) {
        // dA = dY * B^T
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            double s = 0.0;
            const double* gy = n.grad.data() + static_cast<size_t>(i) * p;
            const double* br = B.value.data() + static_cast<size_t>(kk) * p;
            for (int j = 0; j < p; ++j) s += gy[j] * br[j];
            (*ga)[static_cast<size_t>(i) * k + kk] += s;
          }
      }
      if (auto* gb = parent_grad(n.b)) {
        // dB = A^T * dY
        for (int kk = 0; kk < k; ++kk)
          for (int i = 0; i < m; ++i) {
            const double aik = A.value[static_cast<size_t>(i) * k + kk];
            if (aik == 0.0) continue;
            const double* gy = n.grad.data() + static_cast<size_t>(i) * p;
            double* gr = gb->data() + static_cast<size_t>(kk) * p;
            for (int j = 0; j < p; ++j) gr[j] += aik * gy[j];
          }
      }
      break;
    }
    case Op::kAdd: {
      if (auto* ga = parent_grad(n.a))
        for (size_t i = 0; i < n.grad.size(); ++i) accum(n.a, *ga, i, n.grad[i]);
      if (auto* gb = parent_grad(n.b))
        for (size_t i = 0; i < n.grad.size(); ++i) accum(n.b, *gb, i, n.grad[i]);
      break;
    }
    case Op::kAddBias: {
      const int rows = n.shape[0], cols = n.shape[1];
      if (auto* ga = parent_grad(n.a))
        for (size_t i = 0; i < n.grad.size(); ++i) (*ga)[i] += n.grad[i];
      if (auto* gb = parent_grad(n.b))
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < cols; ++j)
            (*gb)[static_cast<size_t>(j)] += n.grad[static_cast<size_t>(i) * cols + j];
      break;
    }
    case Op::kMul: {
      const Node& A = node(n.a);
      const Node& B = node(n.b);
      if (auto* ga = parent_grad(n.a))
        for (size_t i = 0; i < n.grad.size(); ++i) (*ga)[i] += n.grad[i] * B.value[i];
      if (auto* gb = parent_grad(n.b))
        for (size_t i = 0; i < n.grad.size(); ++i) (*gb)[i] += n.grad[i] * A.value[i];
      break;
    }
    case Op::kScale: {
      if (auto* ga = parent_grad(n.a))
        for (size_t i = 0; i < n.grad.size(); ++i) (*ga)[i] += n.daux[0] * n.grad[i];
      break;
    }
    case Op::kAddScalar: {
      if (auto* ga = parent_grad(n.a))
        for (size_t i = 0; i < n.grad.size(); ++i) (*ga)[i] += n.grad[i];
      break;
    }
    case Op::kRelu: {
      const Node& A = node(n.a);
      if (auto* ga = parent_grad(n.a))
        for (size_t i = 0; i < n.grad.size(); ++i)
          if (A.value[i] > 0.0) (*ga)[i] += n.grad[i];
      break;
    }
    case Op::kTanh: {
      if (auto* ga = parent_grad(n.a))
        for (size_t i = 0; i < n.grad.size(); ++i)
          (*ga)[i] += n.grad[i] * (1.0 - n.value[i] * n.value[i]);
      break;
    }
    case Op::kClamp01: {
      const Node& A = node(n.a);
      if (auto* ga = parent_grad(n.a))
        for (size_t i = 0; i < n.grad.size(); ++i)
          if (A.value[i] > 0.0 && A.value[i] < 1.0) (*ga)[i] += n.grad[i];
      break;
    }
    case Op::kClampMin: {
      const Node& A = node(n.a);
      const double lo = n.daux[0];
      if (auto* ga = parent_grad(n.a))
        for (size_t i = 0; i < n.grad.size(); ++i)
          if (A.value[i] > lo) (*ga)[i] += n.grad[i];
      break;
    }
    case Op::kLog: {
      const Node& A = node(n.a);
      if (auto* ga = parent_grad(n.a))
        for (size_t i = 0; i < n.grad.size(); ++i) (*ga)[i] += n.grad[i] / A.value[i];
      break;
    }
    case Op::kReshape: {
      if (auto* ga = parent_grad(n.a))
        for (size_t i = 0; i < n.grad.size(); ++i) (*ga)[i] += n.grad[i];
      break;
    }
    case Op::kRow: {
      const Node& A = node(n.a);
      const int cols = A.shape[1];
      const int r = n.iaux[0];
      if (auto* ga = parent_grad(n.a))
        for (int j = 0; j < cols; ++j)
          (*ga)[static_cast<size_t>(r) * cols + j] += n.grad[static_cast<size_t>(j)];
      break;
    }
    case Op::kReduceMean: {
      const Node& A = node(n.a);
      const double g = n.grad[0] / static_cast<double>(A.value.size());
      if (auto* ga = parent_grad(n.a))
        for (size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g;
      break;
    }
    case Op::kReduceSum: {
      const double g = n.grad[0];
      if (auto* ga = parent_grad(n.a))
        for (size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g;
      break;
    }
    case Op::kMse: {
      const Node& A = node(n.a);
      const Node& B = node(n.b);
      const double g = 2.0 * n.grad[0] / static_cast<double>(A.value.size());
      if (auto* ga = parent_grad(n.a))
        for (size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g * (A.value[i] - B.value[i]);
      if (auto* gb = parent_grad(n.b))
        for (size_t i = 0; i < gb->size(); ++i) (*gb)[i] -= g * (A.value[i] - B.value[i]);
      break;
    }
    case Op::kRowwiseMse: {
      const Node& A = node(n.a);
      const Node& B = node(n.b);
      const int rows = A.shape[0], cols = A.shape[1];
      for (int i = 0; i < rows; ++i) {
        const double g = 2.0 * n.grad[static_cast<size_t>(i)] / cols;
        for (int j = 0; j < cols; ++j) {
          const size_t idx = static_cast<size_t>(i) * cols + j;
          const double d = A.value[idx] - B.value[idx];
          if (auto* ga = parent_grad(n.a)) (*ga)[idx] += g * d;
          if (auto* gb = parent_grad(n.b)) (*gb)[idx] -= g * d;
        }
      }
      break;
    }
    case Op::kSoftmaxCrossEntropy: {
      const int batch = static_cast<int>(n.iaux.size());
      const int classes = static_cast<int>(n.daux.size()) / batch;
      const double g = n.grad[0] / batch;
      if (auto* ga = parent_grad(n.a))
        for (int i = 0; i < batch; ++i)
          for (int k = 0; k < classes; ++k) {
            double p = n.daux[static_cast<size_t>(i) * classes + k];
            if (k == n.iaux[static_cast<size_t>(i)]) p -= 1.0;
            (*ga)[static_cast<size_t>(i) * classes + k] += g * p;
          }
      break;
    }
    case Op::kConv2d: {
      const Node& X = node(n.a);
      const Node& W = node(n.b);
      const int nb = n.iaux[0], ci = n.iaux[1], h = n.iaux[2], wd = n.iaux[3];
      const int co = n.iaux[4], kh = n.iaux[5], kw = n.iaux[6], pad = n.iaux[7];
      const int ho = n.iaux[8], wo = n.iaux[9];
      auto* gx = parent_grad(n.a);
      auto* gw = parent_grad(n.b);
      auto* gb = parent_grad(n.c);
      for (int ib = 0; ib < nb; ++ib)
        for (int oc = 0; oc < co; ++oc)
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
              const double gy = n.grad[((static_cast<size_t>(ib) * co + oc) * ho + oy) * wo + ox];
              if (gy == 0.0) continue;
              if (gb) (*gb)[static_cast<size_t>(oc)] += gy;
              for (int icC = 0; icC < ci; ++icC)
                for (int ky = 0; ky < kh; ++ky) {
                  const int iy = oy + ky - pad;
                  if (iy < 0 || iy >= h) continue;
                  for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox + kx - pad;
                    if (ix < 0 || ix >= wd) continue;
                    const size_t xi = ((static_cast<size_t>(ib) * ci + icC) * h + iy) * wd + ix;
                    const size_t wi = ((static_cast<size_t>(oc) * ci + icC) * kh + ky) * kw + kx;
                    if (gx) (*gx)[xi] += gy * W.value[wi];
                    if (gw) (*gw)[wi] += gy * X.value[xi];
                  }
                }
            }
      break;
    }
    case Op::kAvgPool2: {
      const Node& A = node(n.a);
      const int nb = A.shape[0], c = A.shape[1], h = A.shape[2], w = A.shape[3];
      const int ho = h / 2, wo = w / 2;
      if (auto* ga = parent_grad(n.a))
        for (int ib = 0; ib < nb; ++ib)
          for (int ic = 0; ic < c; ++ic)
            for (int oy = 0; oy < ho; ++oy)
              for (int ox = 0; ox < wo; ++ox) {
                const double g =
                    0.25 * n.grad[((static_cast<size_t>(ib) * c + ic) * ho + oy) * wo + ox];
                const size_t base = ((static_cast<size_t>(ib) * c + ic) * h + 2 * oy) * w + 2 * ox;
                (*ga)[base] += g;
                (*ga)[base + 1] += g;
                (*ga)[base + static_cast<size_t>(w)] += g;
                (*ga)[base + static_cast<size_t>(w) + 1] += g;
              }
      break;
    }
  }
}

void Tape::backward(NodeId loss) {
  if (consumed_) throw NumericError("backward: tape already consumed");
  consumed_ = true;
  Node& L = node(loss);
  if (L.value.size() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(L.shape));
  if (!L.needs_grad) return;  // nothing on this tape tracks gradients
  L.grad[0] = 1.0;
  for (NodeId i = loss; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.needs_grad) continue;
    backward_one(n);
  }
  for (NodeId i = loss; i >= 0; --i) {
    const Node& n = nodes_[static_cast<size_t>(i)];
    if (n.needs_grad && !all_finite(n.grad))
      throw NumericError(std::string("non-finite gradient at op '") + op_name(n.op) + "'");
  }
}

}  // namespace uba
