#include "ubalab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ubalab/io.hpp"
#include "ubalab/rng.hpp"

namespace uba {

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    case Split::kSample: return "sample";
  }
  return "?";
}

std::span<const float> Dataset::image(int i) const {
  const size_t n = static_cast<size_t>(image_numel());
  return {images.data.data() + static_cast<size_t>(i) * n, n};
}

std::span<float> Dataset::image_mut(int i) {
  const size_t n = static_cast<size_t>(image_numel());
  return {images.data.data() + static_cast<size_t>(i) * n, n};
}

Tensor Dataset::image_tensor(int i) const {
  auto v = image(i);
  return Tensor({channels(), height(), width()}, std::vector<float>(v.begin(), v.end()));
}

void Dataset::validate() const {
  if (images.rank() != 4) throw ShapeError("dataset images must be [N,C,H,W]");
  if (static_cast<int>(labels.size()) != size())
    throw ShapeError("dataset label count does not match image count");
  if (class_count <= 0) throw ShapeError("dataset class_count must be positive");
  for (int y : labels)
    if (y < 0 || y >= class_count)
      throw ShapeError("dataset label " + std::to_string(y) + " out of range");
  for (float v : images.data)
    if (!(v >= 0.0f && v <= 1.0f))
      throw NumericError("dataset pixel outside [0,1]");
}

namespace {

double proto_distance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

void fill_prototype(std::span<float> proto, double contrast, Rng& rng) {
  for (auto& v : proto) {
    const double x = 0.5 + contrast * (rng.uniform() - 0.5);
    v = static_cast<float>(std::clamp(x, 0.0, 1.0));
  }
}

Dataset make_split(const Tensor& prototypes, int per_class, double noise_std, Split split,
                   Rng& rng) {
  const int k = prototypes.dim(0);
  const int c = prototypes.dim(1), h = prototypes.dim(2), w = prototypes.dim(3);
  const size_t pix = static_cast<size_t>(c) * h * w;
  Dataset d;
  d.class_count = k;
  d.split = split;
  d.images = Tensor::zeros({k * per_class, c, h, w});
  d.labels.resize(static_cast<size_t>(k) * per_class);
  size_t out = 0;
  for (int cls = 0; cls < k; ++cls) {
    const float* proto = prototypes.data.data() + static_cast<size_t>(cls) * pix;
    for (int s = 0; s < per_class; ++s) {
      float* img = d.images.data.data() + out * pix;
      for (size_t i = 0; i < pix; ++i) {
        const double x = proto[i] + noise_std * rng.normal();
        img[i] = static_cast<float>(std::clamp(x, 0.0, 1.0));
      }
      d.labels[out] = cls;
      ++out;
    }
  }
  return d;
}

}  // namespace

SyntheticData generate_synthetic_dataset(const DataGenSpec& spec) {
  if (spec.classes < 2) throw std::invalid_argument("generate: need at least 2 classes");
  if (spec.channels <= 0 || spec.height <= 0 || spec.width <= 0)
    throw std::invalid_argument("generate: image dimensions must be positive");
  if (spec.train_per_class <= 0 || spec.test_per_class <= 0 || spec.sample_per_class <= 0)
    throw std::invalid_argument("generate: samples per class per split must be positive");
  if (!(spec.contrast > 0.0) || spec.noise_std < 0.0)
    throw std::invalid_argument("generate: contrast must be positive, noise_std non-negative");

  Rng rng(spec.seed);
  const int k = spec.classes;
  const size_t pix =
      static_cast<size_t>(spec.channels) * spec.height * spec.width;
  // Classes come in sibling pairs: classes 2f and 2f+1 share a full-contrast
  // parent pattern and differ by a half-contrast offset. Expected pairwise
  // distance of two uniform draws at amplitude a is a * sqrt(pix/6); floors at
  // a quarter of that reject only rare near-collisions while keeping redraws
  // finite.
  const int families = (k + 1) / 2;
  const double child_amp = 0.5 * spec.contrast;
  const double parent_floor = 0.25 * spec.contrast * std::sqrt(static_cast<double>(pix) / 6.0);
  const double sibling_floor = 0.25 * child_amp * std::sqrt(static_cast<double>(pix) / 6.0);

  Tensor parents = Tensor::zeros({families, spec.channels, spec.height, spec.width});
  for (int f = 0; f < families; ++f) {
    std::span<float> parent(parents.data.data() + static_cast<size_t>(f) * pix, pix);
    for (int attempt = 0;; ++attempt) {
      fill_prototype(parent, spec.contrast, rng);
      bool ok = true;
      for (int prev = 0; prev < f && ok; ++prev) {
        std::span<const float> other(parents.data.data() + static_cast<size_t>(prev) * pix, pix);
        if (proto_distance(parent, other) < parent_floor) ok = false;
      }
      if (ok) break;
      if (attempt > 10000)
        throw NumericError("generate: could not place distinct prototypes (space too small)");
    }
  }

  Tensor protos = Tensor::zeros({k, spec.channels, spec.height, spec.width});
  for (int cls = 0; cls < k; ++cls) {
    const float* parent = parents.data.data() + static_cast<size_t>(cls / 2) * pix;
    std::span<float> proto(protos.data.data() + static_cast<size_t>(cls) * pix, pix);
    for (int attempt = 0;; ++attempt) {
      for (size_t i = 0; i < pix; ++i) {
        const double x = parent[i] + child_amp * (rng.uniform() - 0.5);
        proto[i] = static_cast<float>(std::clamp(x, 0.0, 1.0));
      }
      bool ok = true;
      for (int prev = 0; prev < cls && ok; ++prev) {
        std::span<const float> other(protos.data.data() + static_cast<size_t>(prev) * pix, pix);
        if (proto_distance(proto, other) < sibling_floor) ok = false;
      }
      if (ok) break;
      if (attempt > 10000)
        throw NumericError("generate: could not place distinct prototypes (space too small)");
    }
  }

  SyntheticData out;
  out.prototypes = std::move(protos);
  out.train = make_split(out.prototypes, spec.train_per_class, spec.noise_std, Split::kTrain, rng);
  out.test = make_split(out.prototypes, spec.test_per_class, spec.noise_std, Split::kTest, rng);
  out.sample =
      make_split(out.prototypes, spec.sample_per_class, spec.noise_std, Split::kSample, rng);
  return out;
}

void apply_trigger_inplace(std::span<float> image, std::span<const float> trigger) {
  if (image.size() != trigger.size())
    throw ShapeError("apply_trigger: image and trigger sizes differ");
  for (size_t i = 0; i < image.size(); ++i)
    image[i] = std::clamp(image[i] + trigger[i], 0.0f, 1.0f);
}

Tensor apply_trigger(const Tensor& image, const Tensor& trigger) {
  if (image.shape != trigger.shape)
    throw ShapeError("apply_trigger: shape mismatch " + shape_str(image.shape) + " vs " +
                     shape_str(trigger.shape));
  Tensor out = image;
  apply_trigger_inplace(out.data, trigger.data);
  return out;
}

PoisonedDataset poison_dataset(const Dataset& train, const Tensor& triggers, int per_class,
                               uint64_t seed) {
  train.validate();
  if (triggers.rank() != 4 || triggers.dim(0) != train.class_count ||
      triggers.dim(1) != train.channels() || triggers.dim(2) != train.height() ||
      triggers.dim(3) != train.width())
    throw ShapeError("poison_dataset: triggers must be [K,C,H,W] matching the dataset");
  if (per_class < 0) throw std::invalid_argument("poison_dataset: per_class must be >= 0");
  const int k = train.class_count;
  const int total = train.size();
  const long needed = static_cast<long>(per_class) * k;
  if (needed > total)
    throw std::invalid_argument("poison_dataset: " + std::to_string(needed) +
                                " injections requested but the training set has only " +
                                std::to_string(total) + " images");

  PoisonedDataset out;
  out.data = train;
  out.data.split = Split::kTrain;
  out.per_class = per_class;
  out.poison_rate = total > 0 ? static_cast<double>(needed) / total : 0.0;
  if (per_class == 0) return out;

  Rng rng(seed);
  const auto picks = rng.sample_without_replacement(total, static_cast<int>(needed));
  const size_t pix = static_cast<size_t>(train.image_numel());
  out.injected.reserve(static_cast<size_t>(needed));
  for (int target = 0; target < k; ++target) {
    std::span<const float> trig(triggers.data.data() + static_cast<size_t>(target) * pix, pix);
    for (int j = 0; j < per_class; ++j) {
      const int idx = picks[static_cast<size_t>(target) * per_class + j];
      apply_trigger_inplace(out.data.image_mut(idx), trig);
      out.data.labels[static_cast<size_t>(idx)] = target;
      out.injected.push_back({idx, target, target});
    }
  }
  return out;
}

void save_dataset(const std::string& path, const Dataset& d) {
  if (d.images.rank() != 4) throw ShapeError("save_dataset: images must be [N,C,H,W]");
  if (static_cast<int>(d.labels.size()) != d.size())
    throw ShapeError("save_dataset: label count does not match image count");
  ByteWriter w;
  write_ubds_header(w, kUbdsDataset);
  write_tensor_body(w, d.images);
  w.u32(static_cast<uint32_t>(d.labels.size()));
  for (int y : d.labels) w.u32(static_cast<uint32_t>(y));
  w.u32(static_cast<uint32_t>(d.class_count));
  w.u8(static_cast<uint8_t>(d.split));
  write_file(path, w.buffer());
}

Dataset load_dataset(const std::string& path) {
  ByteReader r(read_file(path));
  uint8_t kind = read_ubds_header(r);
  if (kind != kUbdsDataset) r.fail("expected dataset, got kind " + std::to_string(kind));
  Dataset d;
  d.images = read_tensor_body(r);
  if (d.images.rank() != 4) r.fail("dataset images must be rank 4");
  uint32_t count = r.u32();
  if (static_cast<int>(count) != d.images.dim(0))
    r.fail("label count " + std::to_string(count) + " does not match image count " +
           std::to_string(d.images.dim(0)));
  d.labels.resize(count);
  for (auto& y : d.labels) y = static_cast<int>(r.u32());
  d.class_count = static_cast<int>(r.u32());
  uint8_t tag = r.u8();
  if (tag > 2) r.fail("bad split tag " + std::to_string(tag));
  d.split = static_cast<Split>(tag);
  if (!r.at_end()) r.fail("trailing bytes after dataset payload");
  for (int y : d.labels)
    if (y < 0 || y >= d.class_count) r.fail("label out of range for class count");
  return d;
}

}  // namespace uba
