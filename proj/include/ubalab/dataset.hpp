#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ubalab/tensor.hpp"

namespace uba {

enum class Split : uint8_t { kTrain = 0, kTest = 1, kSample = 2 };
const char* split_name(Split s);

// Labeled image set: images [N,C,H,W] in [0,1], labels in [0, class_count).
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int class_count = 0;
  Split split = Split::kTrain;

  int size() const { return images.rank() == 4 ? images.dim(0) : 0; }
  int channels() const { return images.dim(1); }
  int height() const { return images.dim(2); }
  int width() const { return images.dim(3); }
  int64_t image_numel() const {
    return static_cast<int64_t>(channels()) * height() * width();
  }
  std::span<const float> image(int i) const;
  std::span<float> image_mut(int i);
  Tensor image_tensor(int i) const;  // [C,H,W] copy
  void validate() const;
};

struct DataGenSpec {
  int classes = 16;
  int channels = 3;
  int height = 16;
  int width = 16;
  int train_per_class = 60;
  int test_per_class = 20;
  int sample_per_class = 20;
  double contrast = 0.5;    // prototype pixel spread around mid-gray
  double noise_std = 0.05;  // per-pixel Gaussian noise, clamped to [0,1]
  uint64_t seed = 0;
};

struct SyntheticData {
  Dataset train, test, sample;
  Tensor prototypes;  // [K,C,H,W]
};

// Class-prototype images plus Gaussian pixel noise. Prototypes come in
// families: a full-contrast parent pattern shared by two classes, plus a
// half-contrast per-class offset, so sibling classes are genuinely similar
// the way natural label sets contain neighboring categories. Every pair is
// redrawn until it clears a floor distance, so classes stay linearly
// separable by construction at desk scale.
SyntheticData generate_synthetic_dataset(const DataGenSpec& spec);

// x' = clamp01(x + t). Trigger and image shapes must match.
Tensor apply_trigger(const Tensor& image, const Tensor& trigger);
void apply_trigger_inplace(std::span<float> image, std::span<const float> trigger);

struct InjectedRecord {
  int source_index;  // index into the training set that was replaced in place
  int target_class;  // label it was rewritten to
  int trigger_id;    // which trigger was stamped (== target_class)
};

struct PoisonedDataset {
  Dataset data;
  std::vector<InjectedRecord> injected;
  int per_class = 0;
  double poison_rate = 0.0;  // injected / total
};

// Replaces per_class images per target class, sampled uniformly without
// replacement across the whole training set, with triggered + relabeled
// versions. triggers is [K,C,H,W].
PoisonedDataset poison_dataset(const Dataset& train, const Tensor& triggers, int per_class,
                               uint64_t seed);

void save_dataset(const std::string& path, const Dataset& d);
Dataset load_dataset(const std::string& path);

}  // namespace uba
