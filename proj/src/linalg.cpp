#include "ubalab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ubalab/tensor.hpp"

namespace uba {

Mat Mat::identity(int n) {
  Mat m(n, n);
  for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Mat matmul(const Mat& x, const Mat& y) {
  if (x.cols != y.rows) throw std::invalid_argument("matmul: inner dimensions differ");
  Mat out(x.rows, y.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int k = 0; k < x.cols; ++k) {
      const double v = x.at(i, k);
      if (v == 0.0) continue;
      for (int j = 0; j < y.cols; ++j) out.at(i, j) += v * y.at(k, j);
    }
  return out;
}

Mat transpose(const Mat& x) {
  Mat out(x.cols, x.rows);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) out.at(j, i) = x.at(i, j);
  return out;
}

Mat add(const Mat& x, const Mat& y) {
  if (x.rows != y.rows || x.cols != y.cols) throw std::invalid_argument("add: shape mismatch");
  Mat out = x;
  for (size_t i = 0; i < out.a.size(); ++i) out.a[i] += y.a[i];
  return out;
}

Mat scale(const Mat& x, double c) {
  Mat out = x;
  for (auto& v : out.a) v *= c;
  return out;
}

double trace(const Mat& x) {
  if (x.rows != x.cols) throw std::invalid_argument("trace: matrix not square");
  double t = 0.0;
  for (int i = 0; i < x.rows; ++i) t += x.at(i, i);
  return t;
}

Mat cholesky(const Mat& spd) {
  if (spd.rows != spd.cols) throw std::invalid_argument("cholesky: matrix not square");
  const int n = spd.rows;
  Mat l(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = spd.at(i, j);
      for (int k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
      if (i == j) {
        if (s <= 0.0 || !std::isfinite(s))
          throw NumericError("cholesky: matrix is not positive definite (pivot " +
                             std::to_string(s) + " at " + std::to_string(i) + ")");
        l.at(i, i) = std::sqrt(s);
      } else {
        l.at(i, j) = s / l.at(j, j);
      }
    }
  }
  return l;
}

Mat solve_lower(const Mat& l, const Mat& b) {
  if (l.rows != l.cols || l.rows != b.rows)
    throw std::invalid_argument("solve_lower: dimension mismatch");
  const int n = l.rows;
  Mat x = b;
  for (int col = 0; col < b.cols; ++col)
    for (int i = 0; i < n; ++i) {
      double s = x.at(i, col);
      for (int k = 0; k < i; ++k) s -= l.at(i, k) * x.at(k, col);
      x.at(i, col) = s / l.at(i, i);
    }
  return x;
}

Mat solve_lower_transpose(const Mat& l, const Mat& b) {
  if (l.rows != l.cols || l.rows != b.rows)
    throw std::invalid_argument("solve_lower_transpose: dimension mismatch");
  const int n = l.rows;
  Mat x = b;
  for (int col = 0; col < b.cols; ++col)
    for (int i = n - 1; i >= 0; --i) {
      double s = x.at(i, col);
      for (int k = i + 1; k < n; ++k) s -= l.at(k, i) * x.at(k, col);
      x.at(i, col) = s / l.at(i, i);
    }
  return x;
}

Mat solve_spd(const Mat& a, const Mat& b) {
  Mat l = cholesky(a);
  return solve_lower_transpose(l, solve_lower(l, b));
}

SymEig jacobi_eigensolve(Mat a, int max_sweeps) {
  if (a.rows != a.cols) throw std::invalid_argument("jacobi: matrix not square");
  const int n = a.rows;
  Mat v = Mat::identity(n);
  if (n == 0) return {{}, v};

  double off = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) off += a.at(i, j) * a.at(i, j);
  double norm = 0.0;
  for (double x : a.a) norm += x * x;
  const double tol = 1e-28 * std::max(norm, 1e-300);

  for (int sweep = 0; sweep < max_sweeps && off > tol; ++sweep) {
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (apq == 0.0) continue;
        const double app = a.at(p, p), aqq = a.at(q, q);
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v.at(k, p), vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
    off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += a.at(i, j) * a.at(i, j);
  }

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return a.at(x, x) > a.at(y, y); });

  SymEig out;
  out.values.resize(static_cast<size_t>(n));
  out.vectors = Mat(n, n);
  for (int j = 0; j < n; ++j) {
    const int src = order[static_cast<size_t>(j)];
    out.values[static_cast<size_t>(j)] = a.at(src, src);
    double sign = 1.0;
    for (int i = 0; i < n; ++i)
      if (std::abs(v.at(i, src)) > 1e-12) {
        sign = v.at(i, src) > 0 ? 1.0 : -1.0;
        break;
      }
    for (int i = 0; i < n; ++i) out.vectors.at(i, j) = sign * v.at(i, src);
  }
  return out;
}

}  // namespace uba
