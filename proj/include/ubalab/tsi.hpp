#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ubalab/classifier.hpp"
#include "ubalab/dataset.hpp"
#include "ubalab/linalg.hpp"
#include "ubalab/tensor.hpp"

namespace uba {

// Logit gaps of one target class against every competitor.
struct GapProfile {
  int target = 0;
  std::vector<double> gaps;  // (w_target - w_k)^T v, k != target, ascending k
  double mean = 0.0;
  double variance = 0.0;  // population variance over the K-1 gaps
};

// Mean feature displacement the trigger causes over a dataset:
// v = mean_x [phi(clamp01(x + trigger)) - phi(x)].
std::vector<double> effect_vector(const Classifier& f, const Dataset& data,
                                  const Tensor& trigger);

// Gaps from the last linear layer [K,d] and an effect vector of length d.
GapProfile logit_gaps(const Mat& last_layer_weight, std::span<const double> effect, int target);

// Trigger separability index: mean / (population std + eps).
double tsi(const GapProfile& profile, double eps = 1e-8);

// Tail/union lower bound on per-class attack success: max(0, 1-(K-1)e^(-t^2/2)).
double proposition_bound(double tsi_value, int class_count);

// TSI needed so the proposition bound reaches 1-delta: sqrt(2 ln((K-1)/delta)).
double corollary_threshold(int class_count, double delta);

// Lower bound on the expected minimum gap: mu - sigma*sqrt(2 ln(K-1)).
double expected_margin_bound(double mu, double sigma, int class_count);

struct McResult {
  double success_rate = 0.0;  // P(all K-1 gaps > 0)
  double success_se = 0.0;    // binomial standard error
  double margin_mean = 0.0;   // E[min gap]
  double margin_se = 0.0;     // standard error of that mean
  long trials = 0;
};

// Draws K-1 iid Normal(mu, sigma^2) gaps per trial and measures the
// quantities the bounds constrain. Gaussian satisfies the sub-Gaussian
// hypothesis, so bound violations beyond Monte Carlo error are bugs.
McResult monte_carlo_verify(double mu, double sigma, int class_count, long trials, uint64_t seed);

// 1-D Fisher discriminant ratio between two projected samples:
// (mean_a - mean_b)^2 / (var_a + var_b). Identical degenerate samples -> 0;
// distinct degenerate samples -> +infinity.
double fdr_pairwise(std::span<const double> triggered, std::span<const double> baseline);

// Spearman rank correlation with average ranks for ties; 0 if either side
// has zero rank variance.
double spearman(std::span<const double> a, std::span<const double> b);

// Whole-model separability snapshot, one entry per target class.
struct SeparabilityReport {
  double epsilon = 1e-8;
  double delta = 0.05;
  std::vector<std::vector<double>> effect_vectors;  // [K][feature_dim]
  std::vector<GapProfile> profiles;                 // [K]
  std::vector<double> tsi_values;                   // [K]
  std::vector<double> proposition_bounds;           // [K]
  std::vector<double> margin_bounds;                // [K]
  double corollary_tsi = 0.0;                       // threshold for this delta
  std::vector<double> empirical_asr;                // [K] when supplied, else empty
  double spearman_tsi_asr = 0.0;                    // 0 when empirical_asr is empty
};

// Runs the full per-class analysis of a victim against a trigger set
// [K,C,H,W] over a clean dataset. empirical_asr, when provided (length K),
// is stored and correlated against TSI.
SeparabilityReport analyze_separability(const Classifier& f, const Dataset& clean,
                                        const Tensor& triggers, double eps = 1e-8,
                                        double delta = 0.05,
                                        std::span<const double> empirical_asr = {});

}  // namespace uba
