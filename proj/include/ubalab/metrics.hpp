#pragma once

#include <span>

#include "ubalab/tensor.hpp"

namespace uba {

double mean_squared_error(std::span<const float> a, std::span<const float> b);

// Peak signal-to-noise ratio for signals in [0,1] (MAX = 1):
// 10*log10(1/mse), capped at 100 dB (identical inputs hit the cap).
double psnr(std::span<const float> a, std::span<const float> b);
double psnr(const Tensor& a, const Tensor& b);

// Windowed SSIM for a single [C,H,W] image pair in [0,1]. 8x8 windows with
// stride 4 per channel, population statistics, C1 = 0.01^2, C2 = 0.03^2,
// MAX = 1; the result is the mean over all windows and channels. Images
// smaller than the window in either spatial dimension use one window
// covering the whole image.
double ssim(const Tensor& a, const Tensor& b);
double ssim(std::span<const float> a, std::span<const float> b, int channels, int height,
            int width);

// Shannon entropy of a probability vector, natural log, 0*log(0) = 0.
double entropy(std::span<const double> probs);

}  // namespace uba
