#include "ubalab/tsi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "ubalab/errors.hpp"
#include "ubalab/rng.hpp"

namespace uba {

namespace {

void mean_and_population_variance(std::span<const double> xs, double& mean, double& var) {
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
}

}  // namespace

std::vector<double> effect_vector(const Classifier& f, const Dataset& data,
                                  const Tensor& trigger) {
  if (data.size() == 0) throw std::invalid_argument("effect_vector: empty dataset");
  if (trigger.shape != Shape{data.channels(), data.height(), data.width()})
    throw std::invalid_argument("effect_vector: trigger shape does not match images");

  Tensor poisoned = data.images;  // [N,C,H,W] copy
  const size_t pix = static_cast<size_t>(data.image_numel());
  for (int i = 0; i < data.size(); ++i)
    apply_trigger_inplace({poisoned.data.data() + i * pix, pix}, trigger.data);

  const Mat base = f.features(data.images);
  const Mat trig = f.features(poisoned);
  std::vector<double> v(static_cast<size_t>(base.cols), 0.0);
  for (int i = 0; i < base.rows; ++i)
    for (int j = 0; j < base.cols; ++j) v[j] += trig.at(i, j) - base.at(i, j);
  for (double& x : v) x /= static_cast<double>(base.rows);
  return v;
}

GapProfile logit_gaps(const Mat& last_layer_weight, std::span<const double> effect, int target) {
  const int k = last_layer_weight.rows;
  const int d = last_layer_weight.cols;
  if (static_cast<int>(effect.size()) != d)
    throw std::invalid_argument("logit_gaps: effect vector length does not match weight columns");
  if (target < 0 || target >= k) throw std::invalid_argument("logit_gaps: target out of range");
  if (k < 2) throw std::invalid_argument("logit_gaps: need at least 2 classes");

  double target_logit = 0.0;
  for (int j = 0; j < d; ++j) target_logit += last_layer_weight.at(target, j) * effect[j];

  GapProfile p;
  p.target = target;
  p.gaps.reserve(static_cast<size_t>(k) - 1);
  for (int cls = 0; cls < k; ++cls) {
    if (cls == target) continue;
    double other = 0.0;
    for (int j = 0; j < d; ++j) other += last_layer_weight.at(cls, j) * effect[j];
    p.gaps.push_back(target_logit - other);
  }
  mean_and_population_variance(p.gaps, p.mean, p.variance);
  return p;
}

double tsi(const GapProfile& profile, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("tsi: eps must be positive");
  if (profile.gaps.empty()) throw std::invalid_argument("tsi: empty gap profile");
  return profile.mean / (std::sqrt(profile.variance) + eps);
}

double proposition_bound(double tsi_value, int class_count) {
  if (class_count < 2) throw std::invalid_argument("proposition_bound: need K >= 2");
  const double raw =
      1.0 - static_cast<double>(class_count - 1) * std::exp(-0.5 * tsi_value * tsi_value);
  return std::max(0.0, raw);
}

double corollary_threshold(int class_count, double delta) {
  if (class_count < 2) throw std::invalid_argument("corollary_threshold: need K >= 2");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("corollary_threshold: delta must be in (0,1)");
  return std::sqrt(2.0 * std::log(static_cast<double>(class_count - 1) / delta));
}

double expected_margin_bound(double mu, double sigma, int class_count) {
  if (class_count < 2) throw std::invalid_argument("expected_margin_bound: need K >= 2");
  if (sigma < 0.0) throw std::invalid_argument("expected_margin_bound: sigma must be >= 0");
  return mu - sigma * std::sqrt(2.0 * std::log(static_cast<double>(class_count - 1)));
}

McResult monte_carlo_verify(double mu, double sigma, int class_count, long trials,
                            uint64_t seed) {
  if (class_count < 2) throw std::invalid_argument("monte_carlo_verify: need K >= 2");
  if (trials < 10000) throw std::invalid_argument("monte_carlo_verify: need >= 1e4 trials");
  if (sigma < 0.0) throw std::invalid_argument("monte_carlo_verify: sigma must be >= 0");

  Rng rng(seed);
  long successes = 0;
  double margin_sum = 0.0, margin_sq_sum = 0.0;
  for (long t = 0; t < trials; ++t) {
    double min_gap = std::numeric_limits<double>::infinity();
    for (int k = 1; k < class_count; ++k) min_gap = std::min(min_gap, rng.normal(mu, sigma));
    successes += (min_gap > 0.0);
    margin_sum += min_gap;
    margin_sq_sum += min_gap * min_gap;
  }
  McResult r;
  r.trials = trials;
  const double n = static_cast<double>(trials);
  r.success_rate = static_cast<double>(successes) / n;
  r.success_se = std::sqrt(r.success_rate * (1.0 - r.success_rate) / n);
  r.margin_mean = margin_sum / n;
  const double var = std::max(0.0, (margin_sq_sum - n * r.margin_mean * r.margin_mean) / (n - 1));
  r.margin_se = std::sqrt(var / n);
  return r;
}

double fdr_pairwise(std::span<const double> triggered, std::span<const double> baseline) {
  if (triggered.size() < 2 || baseline.size() < 2)
    throw std::invalid_argument("fdr_pairwise: need >= 2 samples on each side");
  double m_t, v_t, m_b, v_b;
  mean_and_population_variance(triggered, m_t, v_t);
  mean_and_population_variance(baseline, m_b, v_b);
  const double num = (m_t - m_b) * (m_t - m_b);
  const double den = v_t + v_b;
  if (den == 0.0) {
    if (num == 0.0) return 0.0;
    return std::numeric_limits<double>::infinity();
  }
  return num / den;
}

namespace {

std::vector<double> average_ranks(std::span<const double> xs) {
  const size_t n = xs.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("spearman: need >= 2 pairs");
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  double ma, va, mb, vb;
  mean_and_population_variance(ra, ma, va);
  mean_and_population_variance(rb, mb, vb);
  if (va == 0.0 || vb == 0.0) return 0.0;
  double cov = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) cov += (ra[i] - ma) * (rb[i] - mb);
  cov /= static_cast<double>(ra.size());
  return cov / std::sqrt(va * vb);
}

SeparabilityReport analyze_separability(const Classifier& f, const Dataset& clean,
                                        const Tensor& triggers, double eps, double delta,
                                        std::span<const double> empirical_asr) {
  const int k = f.class_count();
  if (triggers.rank() != 4 || triggers.dim(0) != k)
    throw std::invalid_argument("analyze_separability: trigger set must be [K,C,H,W]");
  if (!empirical_asr.empty() && static_cast<int>(empirical_asr.size()) != k)
    throw std::invalid_argument("analyze_separability: empirical ASR length must be K");

  const Mat w = f.last_layer_weight();
  const size_t pix = triggers.data.size() / static_cast<size_t>(k);

  SeparabilityReport rep;
  rep.epsilon = eps;
  rep.delta = delta;
  rep.corollary_tsi = corollary_threshold(k, delta);
  for (int y = 0; y < k; ++y) {
    Tensor trig = Tensor::zeros({triggers.dim(1), triggers.dim(2), triggers.dim(3)});
    std::copy(triggers.data.begin() + static_cast<int64_t>(y) * pix,
              triggers.data.begin() + static_cast<int64_t>(y + 1) * pix, trig.data.begin());
    std::vector<double> v = effect_vector(f, clean, trig);
    GapProfile prof = logit_gaps(w, v, y);
    const double t = tsi(prof, eps);
    rep.tsi_values.push_back(t);
    rep.proposition_bounds.push_back(proposition_bound(t, k));
    rep.margin_bounds.push_back(expected_margin_bound(prof.mean, std::sqrt(prof.variance), k));
    rep.effect_vectors.push_back(std::move(v));
    rep.profiles.push_back(std::move(prof));
  }
  if (!empirical_asr.empty()) {
    rep.empirical_asr.assign(empirical_asr.begin(), empirical_asr.end());
    rep.spearman_tsi_asr = spearman(rep.tsi_values, rep.empirical_asr);
  }
  return rep;
}

}  // namespace uba
