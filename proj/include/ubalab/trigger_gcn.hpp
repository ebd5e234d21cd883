#pragma once

#include <string>
#include <vector>

#include "ubalab/class_graph.hpp"
#include "ubalab/classifier.hpp"
#include "ubalab/dataset.hpp"
#include "ubalab/tape.hpp"

namespace uba {

struct GcnConfig {
  int hidden1 = 64;
  int hidden2 = 64;
  double alpha = 0.2;  // trigger amplitude: T = alpha * tanh(.)
};

// Two-layer graph-convolutional trigger generator. Node features are the
// binary class codes; each propagation multiplies by the normalized
// adjacency, so coupled classes shape each other's triggers:
//
//   H1 = relu(A X W1 + b1)
//   H2 = relu(A H1 W2 + b2)
//   T  = alpha * tanh(H2 W_out + b_out)   reshaped to [K, C, H, W]
struct GcnGenerator {
  GcnConfig cfg;
  int code_length = 0;
  int channels = 0, height = 0, width = 0;
  Tensor w1, b1, w2, b2, w_out, b_out;

  static GcnGenerator init(int code_length, const GcnConfig& cfg, int channels, int height,
                           int width, uint64_t seed);
  std::vector<Tensor*> param_ptrs();
  void save(const std::string& path) const;
  static GcnGenerator load(const std::string& path);
};

struct GcnBound {
  std::vector<Tape::NodeId> ids;  // w1, b1, w2, b2, w_out, b_out
};
GcnBound bind_gcn(Tape& tape, const GcnGenerator& gen, bool trainable);
// Returns the [K, C*H*W] trigger matrix node.
Tape::NodeId gcn_triggers_node(Tape& tape, const GcnGenerator& gen, const GcnBound& b,
                               const ClassGraph& graph);
// Value-level forward; returns [K, C, H, W].
Tensor generate_triggers(const GcnGenerator& gen, const ClassGraph& graph);

// --- loss pieces, value level (reports and tests) --------------------------
// mean_i max(0, threshold - PSNR(poisoned_i, clean_i)); PSNR capped at 100.
double stealth_loss_value(const Tensor& poisoned, const Tensor& clean, double psnr_threshold);
// mean cross-entropy of the surrogate's softmax against the fixed target.
double attack_loss_value(const Classifier& surrogate, const Tensor& poisoned, int target);
// (1 - beta) * stealth + beta * attack.
double total_loss_value(double stealth, double attack, double beta);

struct TriggerEpochStat {
  int epoch;
  double stealth, attack, total;
};

// One epoch = one optimization step over (batch_size images) x
// (targets_per_step classes); the full image-by-class sweep is subsampled.
struct TriggerTrainConfig {
  GcnConfig gcn;
  double beta = 0.01;           // objective mix
  double psnr_threshold = 30.0; // stealth hinge (dB)
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;    // decay on the generator fights the attack term
  int epochs = 200;
  int batch_size = 32;
  int targets_per_step = 8;     // class subsample per step, clipped to K
  uint64_t seed = 0;
};

struct TriggerTrainResult {
  GcnGenerator generator;
  Tensor triggers;  // [K, C, H, W], regenerated from the final parameters
  std::vector<TriggerEpochStat> curve;
};

// Phase-1 attack optimization: the surrogate stays frozen; triggers are
// regenerated from the current generator parameters every step.
TriggerTrainResult train_trigger_generator(const Dataset& train, const ClassGraph& graph,
                                           const Classifier& surrogate,
                                           const TriggerTrainConfig& cfg);

void export_loss_curve_csv(const std::string& path,
                           const std::vector<TriggerEpochStat>& curve);

// Mean/min PSNR of triggered probe images vs their clean versions, over all
// (image, class) pairs -- the stealth report numbers.
struct TriggerPsnrStats {
  double mean = 0, min = 0;
};
TriggerPsnrStats trigger_psnr_stats(const Tensor& triggers, const Dataset& probe);

}  // namespace uba
