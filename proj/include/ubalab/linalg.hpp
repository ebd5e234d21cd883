#pragma once

#include <span>
#include <stdexcept>
#include <vector>

namespace uba {

// Small dense double-precision matrix for the statistical pieces (LDA,
// graph normalization, scatter matrices). Row-major.
struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {
    if (r < 0 || c < 0) throw std::invalid_argument("Mat: negative dimension");
  }
  Mat(int r, int c, std::vector<double> v) : rows(r), cols(c), a(std::move(v)) {
    if (static_cast<size_t>(r) * static_cast<size_t>(c) != a.size())
      throw std::invalid_argument("Mat: data size does not match dimensions");
  }
  static Mat identity(int n);

  double& at(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  double at(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }
  std::span<const double> row(int i) const { return {a.data() + static_cast<size_t>(i) * cols, static_cast<size_t>(cols)}; }
};

Mat matmul(const Mat& x, const Mat& y);
Mat transpose(const Mat& x);
Mat add(const Mat& x, const Mat& y);
Mat scale(const Mat& x, double c);
double trace(const Mat& x);

// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
// Throws NumericError (via std::runtime_error) when a pivot is not positive.
Mat cholesky(const Mat& spd);

// Solves L x = b / L^T x = b for lower-triangular L, column by column.
Mat solve_lower(const Mat& l, const Mat& b);
Mat solve_lower_transpose(const Mat& l, const Mat& b);

// Solves the SPD system A x = b through its Cholesky factorization.
Mat solve_spd(const Mat& a, const Mat& b);

struct SymEig {
  std::vector<double> values;  // descending
  Mat vectors;                 // columns are the matching eigenvectors
};

// Cyclic Jacobi eigensolver for symmetric matrices. Eigenvalues sorted
// descending; each eigenvector's first component of magnitude > 1e-12 is
// made positive so the decomposition is deterministic up to that convention.
SymEig jacobi_eigensolve(Mat a, int max_sweeps = 64);

}  // namespace uba
