#include "ubalab/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ubalab/io.hpp"
#include "ubalab/optim.hpp"
#include "ubalab/rng.hpp"

namespace uba {

const char* arch_name(ArchKind k) {
  switch (k) {
    case ArchKind::kLinear: return "linear";
    case ArchKind::kMlp: return "mlp";
    case ArchKind::kCnn: return "cnn";
  }
  return "?";
}

ArchKind arch_from_string(const std::string& s) {
  if (s == "linear") return ArchKind::kLinear;
  if (s == "mlp") return ArchKind::kMlp;
  if (s == "cnn") return ArchKind::kCnn;
  throw std::invalid_argument("unknown architecture '" + s + "' (linear|mlp|cnn)");
}

Classifier::Classifier(ArchConfig arch, int class_count, int channels, int height, int width,
                       uint64_t init_seed)
    : arch_(arch), k_(class_count), c_(channels), h_(height), w_(width) {
  if (k_ < 2) throw std::invalid_argument("classifier needs at least 2 classes");
  if (c_ <= 0 || h_ <= 0 || w_ <= 0)
    throw std::invalid_argument("classifier input dimensions must be positive");
  if (arch_.width_multiplier < 1)
    throw std::invalid_argument("width_multiplier must be >= 1");
  if (arch_.kind == ArchKind::kCnn && (h_ % 4 != 0 || w_ % 4 != 0))
    throw std::invalid_argument("cnn architecture needs height and width divisible by 4");
  init_params(init_seed);
}

int Classifier::feature_dim() const {
  switch (arch_.kind) {
    case ArchKind::kLinear: return input_dim();
    case ArchKind::kMlp:
    case ArchKind::kCnn: return arch_.scaled_feature_dim();
  }
  return 0;
}

void Classifier::init_params(uint64_t seed) {
  Rng rng(seed);
  auto dense = [&](const std::string& name, int fan_in, int fan_out) {
    Tensor w = Tensor::zeros({fan_in, fan_out});
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : w.data) v = static_cast<float>(rng.uniform(-bound, bound));
    names_.push_back(name);
    params_.push_back(std::move(w));
    names_.push_back(name + "_bias");
    params_.push_back(Tensor::zeros({fan_out}));
  };
  auto conv = [&](const std::string& name, int out_ch, int in_ch) {
    Tensor w = Tensor::zeros({out_ch, in_ch, 3, 3});
    const double bound = std::sqrt(6.0 / (9.0 * (in_ch + out_ch)));
    for (auto& v : w.data) v = static_cast<float>(rng.uniform(-bound, bound));
    names_.push_back(name);
    params_.push_back(std::move(w));
    names_.push_back(name + "_bias");
    params_.push_back(Tensor::zeros({out_ch}));
  };

  switch (arch_.kind) {
    case ArchKind::kLinear:
      dense("out", input_dim(), k_);
      break;
    case ArchKind::kMlp:
      dense("hidden1", input_dim(), arch_.scaled_hidden());
      dense("hidden2", arch_.scaled_hidden(), arch_.scaled_feature_dim());
      dense("out", arch_.scaled_feature_dim(), k_);
      break;
    case ArchKind::kCnn: {
      conv("conv1", arch_.scaled_conv1(), c_);
      conv("conv2", arch_.scaled_conv2(), arch_.scaled_conv1());
      const int flat = arch_.scaled_conv2() * (h_ / 4) * (w_ / 4);
      dense("dense", flat, arch_.scaled_feature_dim());
      dense("out", arch_.scaled_feature_dim(), k_);
      break;
    }
  }
}

Classifier::Bound Classifier::bind(Tape& tape, bool trainable) const {
  Bound b;
  b.ids.reserve(params_.size());
  for (const auto& p : params_) b.ids.push_back(tape.leaf(p, trainable));
  return b;
}

Tape::NodeId Classifier::features_node(Tape& tape, const Bound& b, Tape::NodeId x) const {
  const auto& xs = tape.shape(x);
  if (xs.size() != 4 || xs[1] != c_ || xs[2] != h_ || xs[3] != w_)
    throw ShapeError("classifier input must be [B," + std::to_string(c_) + "," +
                     std::to_string(h_) + "," + std::to_string(w_) + "], got " + shape_str(xs));
  const int batch = xs[0];
  switch (arch_.kind) {
    case ArchKind::kLinear:
      return tape.reshape(x, {batch, input_dim()});
    case ArchKind::kMlp: {
      auto flat = tape.reshape(x, {batch, input_dim()});
      auto h1 = tape.relu(tape.add_bias(tape.matmul(flat, b.ids[0]), b.ids[1]));
      return tape.relu(tape.add_bias(tape.matmul(h1, b.ids[2]), b.ids[3]));
    }
    case ArchKind::kCnn: {
      auto a1 = tape.avgpool2(tape.relu(tape.conv2d(x, b.ids[0], b.ids[1], 1)));
      auto a2 = tape.avgpool2(tape.relu(tape.conv2d(a1, b.ids[2], b.ids[3], 1)));
      const int flat = arch_.scaled_conv2() * (h_ / 4) * (w_ / 4);
      auto f = tape.reshape(a2, {batch, flat});
      return tape.relu(tape.add_bias(tape.matmul(f, b.ids[4]), b.ids[5]));
    }
  }
  throw std::logic_error("unreachable");
}

Tape::NodeId Classifier::logits_node(Tape& tape, const Bound& b, Tape::NodeId phi) const {
  const size_t n = b.ids.size();
  return tape.add_bias(tape.matmul(phi, b.ids[n - 2]), b.ids[n - 1]);
}

namespace {
constexpr int kInferenceChunk = 128;
}

Mat Classifier::logits(const Tensor& images) const {
  if (images.rank() != 4) throw ShapeError("logits: images must be [N,C,H,W]");
  const int n = images.dim(0);
  Mat out(n, k_);
  const size_t pix = static_cast<size_t>(input_dim());
  for (int start = 0; start < n; start += kInferenceChunk) {
    const int count = std::min(kInferenceChunk, n - start);
    Tensor chunk({count, c_, h_, w_},
                 std::vector<float>(images.data.begin() + static_cast<size_t>(start) * pix,
                                    images.data.begin() + static_cast<size_t>(start + count) * pix));
    Tape tape;
    auto b = bind(tape, false);
    auto z = logits_node(tape, b, features_node(tape, b, tape.leaf(chunk)));
    auto v = tape.value(z);
    for (int i = 0; i < count; ++i)
      for (int k = 0; k < k_; ++k)
        out.at(start + i, k) = v[static_cast<size_t>(i) * k_ + k];
  }
  return out;
}

Mat Classifier::features(const Tensor& images) const {
  if (images.rank() != 4) throw ShapeError("features: images must be [N,C,H,W]");
  const int n = images.dim(0);
  const int d = feature_dim();
  Mat out(n, d);
  const size_t pix = static_cast<size_t>(input_dim());
  for (int start = 0; start < n; start += kInferenceChunk) {
    const int count = std::min(kInferenceChunk, n - start);
    Tensor chunk({count, c_, h_, w_},
                 std::vector<float>(images.data.begin() + static_cast<size_t>(start) * pix,
                                    images.data.begin() + static_cast<size_t>(start + count) * pix));
    Tape tape;
    auto b = bind(tape, false);
    auto phi = features_node(tape, b, tape.leaf(chunk));
    auto v = tape.value(phi);
    for (int i = 0; i < count; ++i)
      for (int j = 0; j < d; ++j)
        out.at(start + i, j) = v[static_cast<size_t>(i) * d + j];
  }
  return out;
}

std::vector<int> argmax_rows(const Mat& m) {
  std::vector<int> out(static_cast<size_t>(m.rows));
  for (int i = 0; i < m.rows; ++i) {
    int best = 0;
    for (int j = 1; j < m.cols; ++j)
      if (m.at(i, j) > m.at(i, best)) best = j;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

std::vector<int> Classifier::predict(const Tensor& images) const {
  return argmax_rows(logits(images));
}

Mat Classifier::softmax_probs(const Tensor& images) const {
  Mat z = logits(images);
  for (int i = 0; i < z.rows; ++i) {
    double zmax = z.at(i, 0);
    for (int j = 1; j < z.cols; ++j) zmax = std::max(zmax, z.at(i, j));
    double denom = 0;
    for (int j = 0; j < z.cols; ++j) denom += std::exp(z.at(i, j) - zmax);
    for (int j = 0; j < z.cols; ++j) z.at(i, j) = std::exp(z.at(i, j) - zmax) / denom;
  }
  return z;
}

Mat Classifier::last_layer_weight() const {
  const Tensor& w = params_[params_.size() - 2];  // [d, K]
  const int d = w.dim(0);
  Mat out(k_, d);
  for (int k = 0; k < k_; ++k)
    for (int j = 0; j < d; ++j) out.at(k, j) = w.data[static_cast<size_t>(j) * k_ + k];
  return out;
}

std::vector<double> Classifier::last_layer_bias() const {
  const Tensor& b = params_.back();
  return {b.data.begin(), b.data.end()};
}

std::vector<double> Classifier::mean_feature_activation(const Dataset& data) const {
  if (data.size() == 0) throw std::invalid_argument("mean_feature_activation: empty dataset");
  Mat phi = features(data.images);
  std::vector<double> mean(static_cast<size_t>(phi.cols), 0.0);
  for (int i = 0; i < phi.rows; ++i)
    for (int j = 0; j < phi.cols; ++j) mean[static_cast<size_t>(j)] += std::abs(phi.at(i, j));
  for (auto& v : mean) v /= phi.rows;
  return mean;
}

void Classifier::zero_feature_units(const std::vector<int>& units) {
  if (arch_.kind == ArchKind::kLinear)
    throw std::invalid_argument("zero_feature_units: linear model has no hidden units");
  // The penultimate dense layer sits two slots before the output layer:
  // weight [in, d] and bias [d]; unit u is column u.
  Tensor& w = params_[params_.size() - 4];
  Tensor& b = params_[params_.size() - 3];
  const int d = w.dim(1);
  for (int u : units) {
    if (u < 0 || u >= d)
      throw std::invalid_argument("zero_feature_units: unit " + std::to_string(u) +
                                  " out of range");
    for (int i = 0; i < w.dim(0); ++i) w.data[static_cast<size_t>(i) * d + u] = 0.0f;
    b.data[static_cast<size_t>(u)] = 0.0f;
  }
}

void Classifier::save(const std::string& path) const {
  NamedTensors ts;
  Tensor meta({10}, {static_cast<float>(static_cast<int>(arch_.kind)), static_cast<float>(k_),
                     static_cast<float>(c_), static_cast<float>(h_), static_cast<float>(w_),
                     static_cast<float>(arch_.hidden), static_cast<float>(arch_.feature_dim),
                     static_cast<float>(arch_.conv1), static_cast<float>(arch_.conv2),
                     static_cast<float>(arch_.width_multiplier)});
  ts.emplace_back("__meta", std::move(meta));
  for (size_t i = 0; i < params_.size(); ++i) ts.emplace_back(names_[i], params_[i]);
  save_checkpoint(path, ts);
}

Classifier Classifier::load(const std::string& path) {
  NamedTensors ts = load_checkpoint(path);
  if (ts.empty() || ts[0].first != "__meta" || ts[0].second.numel() != 10)
    throw FormatError("checkpoint is missing its __meta record", 0);
  const auto& m = ts[0].second.data;
  ArchConfig arch;
  arch.kind = static_cast<ArchKind>(static_cast<int>(m[0]));
  arch.hidden = static_cast<int>(m[5]);
  arch.feature_dim = static_cast<int>(m[6]);
  arch.conv1 = static_cast<int>(m[7]);
  arch.conv2 = static_cast<int>(m[8]);
  arch.width_multiplier = static_cast<int>(m[9]);
  Classifier model(arch, static_cast<int>(m[1]), static_cast<int>(m[2]), static_cast<int>(m[3]),
                   static_cast<int>(m[4]), 0);
  if (ts.size() - 1 != model.params_.size())
    throw FormatError("checkpoint has wrong parameter count for its architecture", 0);
  for (size_t i = 0; i < model.params_.size(); ++i) {
    if (ts[i + 1].first != model.names_[i] ||
        ts[i + 1].second.shape != model.params_[i].shape)
      throw FormatError("checkpoint parameter '" + ts[i + 1].first +
                        "' does not match the expected layout", 0);
    model.params_[i] = std::move(ts[i + 1].second);
  }
  return model;
}

namespace {

void run_training_epochs(Classifier& model, const Dataset& data, const TrainConfig& cfg,
                         Rng& rng, const std::vector<int>& masked_units,
                         std::vector<EpochStat>* log) {
  if (cfg.batch_size <= 0) throw std::invalid_argument("train: batch_size must be positive");
  if (cfg.epochs < 0) throw std::invalid_argument("train: epochs must be non-negative");
  data.validate();
  if (data.class_count != model.class_count())
    throw std::invalid_argument("train: dataset class count does not match the model");
  const int n = data.size();
  if (n == 0) throw std::invalid_argument("train: empty dataset");

  SgdOptimizer opt(cfg.lr, cfg.momentum, cfg.weight_decay);
  std::vector<Tensor*> param_ptrs;
  for (auto& p : model.params()) param_ptrs.push_back(&p);

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const size_t pix = static_cast<size_t>(model.input_dim());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Step decay: divide by 10 at 1/3 and 2/3 of the run.
    const int stage = cfg.epochs > 0 ? (3 * epoch) / cfg.epochs : 0;
    const double lr = cfg.lr * std::pow(0.1, std::min(stage, 2));
    opt.set_lr(lr);
    rng.shuffle(order);
    double loss_sum = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int count = std::min(cfg.batch_size, n - start);
      Tensor xb = Tensor::zeros({count, model.channels(), model.height(), model.width()});
      std::vector<int> yb(static_cast<size_t>(count));
      for (int i = 0; i < count; ++i) {
        const int src = order[static_cast<size_t>(start + i)];
        auto img = data.image(src);
        std::copy(img.begin(), img.end(), xb.data.begin() + static_cast<size_t>(i) * pix);
        yb[static_cast<size_t>(i)] = data.labels[static_cast<size_t>(src)];
      }
      Tape tape;
      auto bound = model.bind(tape, true);
      auto logits = model.logits_node(tape, bound, model.features_node(tape, bound, tape.leaf(xb)));
      auto loss = tape.softmax_cross_entropy(logits, yb);
      tape.backward(loss);
      for (size_t i = 0; i < param_ptrs.size(); ++i) tape.write_grad(bound.ids[i], *param_ptrs[i]);
      opt.step(param_ptrs);
      if (!masked_units.empty()) model.zero_feature_units(masked_units);
      loss_sum += tape.scalar(loss);
      ++batches;
    }
    if (log) log->push_back({epoch, loss_sum / std::max(batches, 1), lr});
  }
}

}  // namespace

Classifier train_classifier(const Dataset& train, const ArchConfig& arch, const TrainConfig& cfg,
                            uint64_t seed, std::vector<EpochStat>* log) {
  uint64_t s = seed;
  const uint64_t init_seed = splitmix64(s);
  const uint64_t shuffle_seed = splitmix64(s);
  Classifier model(arch, train.class_count, train.channels(), train.height(), train.width(),
                   init_seed);
  Rng rng(shuffle_seed);
  run_training_epochs(model, train, cfg, rng, {}, log);
  return model;
}

void continue_training(Classifier& model, const Dataset& data, const TrainConfig& cfg,
                       uint64_t seed, const std::vector<int>& masked_units,
                       std::vector<EpochStat>* log) {
  Rng rng(seed);
  run_training_epochs(model, data, cfg, rng, masked_units, log);
}

double accuracy(const Classifier& model, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("accuracy: empty dataset");
  auto pred = model.predict(data.images);
  int hits = 0;
  for (int i = 0; i < data.size(); ++i)
    if (pred[static_cast<size_t>(i)] == data.labels[static_cast<size_t>(i)]) ++hits;
  return static_cast<double>(hits) / data.size();
}

}  // namespace uba
