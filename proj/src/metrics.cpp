#include "ubalab/metrics.hpp"

#include <cmath>

namespace uba {

double mean_squared_error(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty())
    throw ShapeError("mean_squared_error: need equal non-empty spans");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double psnr(std::span<const float> a, std::span<const float> b) {
  const double mse = mean_squared_error(a, b);
  if (mse <= 0.0) return 100.0;
  const double v = -10.0 * std::log10(mse);
  return v > 100.0 ? 100.0 : v;
}

double psnr(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) throw ShapeError("psnr: shape mismatch");
  return psnr(std::span<const float>(a.data), std::span<const float>(b.data));
}

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

// SSIM of one window: population moments over win_h x win_w pixels starting
// at (y0, x0) of a height x width channel plane.
double window_ssim(const float* a, const float* b, int width, int y0, int x0, int win_h,
                   int win_w) {
  const int n = win_h * win_w;
  double ma = 0.0, mb = 0.0;
  for (int y = 0; y < win_h; ++y)
    for (int x = 0; x < win_w; ++x) {
      const size_t idx = static_cast<size_t>(y0 + y) * width + (x0 + x);
      ma += a[idx];
      mb += b[idx];
    }
  ma /= n;
  mb /= n;
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (int y = 0; y < win_h; ++y)
    for (int x = 0; x < win_w; ++x) {
      const size_t idx = static_cast<size_t>(y0 + y) * width + (x0 + x);
      const double da = a[idx] - ma;
      const double db = b[idx] - mb;
      va += da * da;
      vb += db * db;
      cov += da * db;
    }
  va /= n;
  vb /= n;
  cov /= n;
  return ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
         ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
}

}  // namespace

double ssim(std::span<const float> a, std::span<const float> b, int channels, int height,
            int width) {
  if (channels <= 0 || height <= 0 || width <= 0)
    throw ShapeError("ssim: dimensions must be positive");
  const size_t plane = static_cast<size_t>(height) * width;
  if (a.size() != b.size() || a.size() != static_cast<size_t>(channels) * plane)
    throw ShapeError("ssim: span size does not match dimensions");
  constexpr int kWin = 8, kStride = 4;
  double total = 0.0;
  long count = 0;
  for (int c = 0; c < channels; ++c) {
    const float* pa = a.data() + static_cast<size_t>(c) * plane;
    const float* pb = b.data() + static_cast<size_t>(c) * plane;
    if (height < kWin || width < kWin) {
      total += window_ssim(pa, pb, width, 0, 0, height, width);
      ++count;
      continue;
    }
    for (int y0 = 0; y0 + kWin <= height; y0 += kStride)
      for (int x0 = 0; x0 + kWin <= width; x0 += kStride) {
        total += window_ssim(pa, pb, width, y0, x0, kWin, kWin);
        ++count;
      }
  }
  return total / static_cast<double>(count);
}

double ssim(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) throw ShapeError("ssim: shape mismatch");
  if (a.rank() != 3) throw ShapeError("ssim: need a [C,H,W] image, got " + shape_str(a.shape));
  return ssim(std::span<const float>(a.data), std::span<const float>(b.data), a.dim(0), a.dim(1),
              a.dim(2));
}

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

}  // namespace uba
