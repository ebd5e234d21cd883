#pragma once

#include <string>
#include <vector>

#include "ubalab/dataset.hpp"
#include "ubalab/linalg.hpp"
#include "ubalab/tape.hpp"

namespace uba {

enum class ArchKind : uint8_t { kLinear = 0, kMlp = 1, kCnn = 2 };
const char* arch_name(ArchKind k);
ArchKind arch_from_string(const std::string& s);

struct ArchConfig {
  ArchKind kind = ArchKind::kMlp;
  int hidden = 128;       // first MLP hidden width
  int feature_dim = 64;   // penultimate width, the feature map phi
  int conv1 = 8;          // CNN channel widths
  int conv2 = 16;
  int width_multiplier = 1;  // scales all widths (the "wide" victim variant)

  int scaled_hidden() const { return hidden * width_multiplier; }
  int scaled_feature_dim() const { return feature_dim * width_multiplier; }
  int scaled_conv1() const { return conv1 * width_multiplier; }
  int scaled_conv2() const { return conv2 * width_multiplier; }
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 0.05;  // 0.1 diverges on the desk-scale MLP
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

struct EpochStat {
  int epoch;
  double mean_loss;
  double lr;
};

// Softmax classifier f(x) = softmax(W phi(x) + b) with phi given by the
// architecture; the last layer is strictly linear so W and phi stay
// separately addressable (the separability analysis depends on that).
class Classifier {
 public:
  Classifier(ArchConfig arch, int class_count, int channels, int height, int width,
             uint64_t init_seed);

  void save(const std::string& path) const;
  static Classifier load(const std::string& path);

  int class_count() const { return k_; }
  int channels() const { return c_; }
  int height() const { return h_; }
  int width() const { return w_; }
  int input_dim() const { return c_ * h_ * w_; }
  int feature_dim() const;
  const ArchConfig& arch() const { return arch_; }

  // --- tape plumbing -------------------------------------------------------
  struct Bound {
    std::vector<Tape::NodeId> ids;  // parallel to params()
  };
  // Places every parameter on the tape. trainable=false freezes them (no
  // gradients flow into the model), which is how the trigger generator uses
  // the surrogate.
  Bound bind(Tape& tape, bool trainable) const;
  // x must be a [B,C,H,W] node; returns phi as [B, feature_dim].
  Tape::NodeId features_node(Tape& tape, const Bound& b, Tape::NodeId x) const;
  Tape::NodeId logits_node(Tape& tape, const Bound& b, Tape::NodeId phi) const;

  // --- plain inference (internally batched) --------------------------------
  Mat logits(const Tensor& images) const;     // [N, K]
  Mat features(const Tensor& images) const;   // [N, d]
  std::vector<int> predict(const Tensor& images) const;  // argmax, ties -> lowest
  Mat softmax_probs(const Tensor& images) const;

  // Last linear layer as [K, d] (row k is the class-k weight vector w_k).
  Mat last_layer_weight() const;
  std::vector<double> last_layer_bias() const;

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }

  // Mean absolute activation of each penultimate unit over a dataset
  // (the fine-pruning ranking signal).
  std::vector<double> mean_feature_activation(const Dataset& data) const;
  // Structurally silences penultimate units: zeroes the weights/bias that
  // produce them so phi_u stays 0 through later fine-tuning steps.
  void zero_feature_units(const std::vector<int>& units);

 private:
  void init_params(uint64_t seed);
  ArchConfig arch_;
  int k_, c_, h_, w_;
  std::vector<std::string> names_;
  std::vector<Tensor> params_;
};

std::vector<int> argmax_rows(const Mat& m);  // ties -> lowest index

Classifier train_classifier(const Dataset& train, const ArchConfig& arch,
                            const TrainConfig& cfg, uint64_t seed,
                            std::vector<EpochStat>* log = nullptr);

// Further epochs on an existing model (defense fine-tuning). If
// masked_units is non-empty the corresponding penultimate units are
// re-zeroed after every optimizer step.
void continue_training(Classifier& model, const Dataset& data, const TrainConfig& cfg,
                       uint64_t seed, const std::vector<int>& masked_units = {},
                       std::vector<EpochStat>* log = nullptr);

double accuracy(const Classifier& model, const Dataset& data);

}  // namespace uba
