#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ubalab/classifier.hpp"
#include "ubalab/linalg.hpp"

namespace uba {

// Rows of penultimate-layer features with their class labels.
struct LatentTable {
  Mat features;             // [count, dim]
  std::vector<int> labels;  // count entries in [0, class_count)
  int class_count = 0;
};

LatentTable extract_latents(const Classifier& surrogate, const Dataset& sample);

// Within-class and between-class scatter of a labeled table. Exposed so the
// tests can check them against brute-force sums.
void scatter_matrices(const LatentTable& t, Mat& s_w, Mat& s_b);

struct LdaProjection {
  Mat directions;     // [dim, achieved_dim], generalized eigenvectors
  double lambda = 0;  // ridge added to S_w for the factorization
  int requested_dim = 0;
  int achieved_dim = 0;
  bool clipped = false;
  std::vector<std::string> warnings;
};

// Fits Fisher LDA by whitening S_w + lambda*I with its Cholesky factor and
// eigensolving the whitened between-class scatter. The requested dimension
// is clipped to min(requested, class_count - 1, dim) with a warning.
LdaProjection lda_fit(const LatentTable& table, int requested_dim);
Mat lda_project(const LdaProjection& p, const Mat& features);

// Fisher criterion tr((P^T (S_w + lambda I) P)^-1 (P^T S_b P)) used by the
// tests to confirm the fitted directions beat random ones.
double fisher_criterion(const Mat& s_w_reg, const Mat& s_b, const Mat& p);

struct BinaryCodeSet {
  int class_count = 0;
  int code_length = 0;
  std::vector<uint8_t> codes;     // [class_count * code_length], row-major
  Mat class_means;                // [class_count, code_length] projected means
  std::vector<double> centroid;   // unweighted mean of class means
  std::vector<std::string> warnings;

  uint8_t bit(int cls, int i) const {
    return codes[static_cast<size_t>(cls) * code_length + i];
  }
};

// Algorithm: per-class means of the projected latents, their unweighted
// centroid, and bit i of class y set iff (mean_y - centroid)_i > 0.
BinaryCodeSet binarize_codes(const Mat& projected, const std::vector<int>& labels,
                             int class_count);

void export_codes_csv(const std::string& path, const BinaryCodeSet& codes);

}  // namespace uba
