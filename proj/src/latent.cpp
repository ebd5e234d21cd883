#include "ubalab/latent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace uba {

LatentTable extract_latents(const Classifier& surrogate, const Dataset& sample) {
  sample.validate();
  if (sample.size() == 0) throw std::invalid_argument("extract_latents: empty sample set");
  if (sample.class_count != surrogate.class_count())
    throw std::invalid_argument("extract_latents: class count mismatch");
  std::vector<int> per_class(static_cast<size_t>(sample.class_count), 0);
  for (int y : sample.labels) ++per_class[static_cast<size_t>(y)];
  for (int c = 0; c < sample.class_count; ++c)
    if (per_class[static_cast<size_t>(c)] == 0)
      throw std::invalid_argument("extract_latents: class " + std::to_string(c) +
                                  " has no samples");
  LatentTable t;
  t.features = surrogate.features(sample.images);
  t.labels = sample.labels;
  t.class_count = sample.class_count;
  return t;
}

void scatter_matrices(const LatentTable& t, Mat& s_w, Mat& s_b) {
  const int n = t.features.rows, d = t.features.cols, k = t.class_count;
  if (n == 0 || d == 0) throw std::invalid_argument("scatter_matrices: empty table");
  if (static_cast<int>(t.labels.size()) != n)
    throw std::invalid_argument("scatter_matrices: label count mismatch");
  for (int y : t.labels)
    if (y < 0 || y >= k) throw std::invalid_argument("scatter_matrices: label out of range");

  Mat means(k, d);
  std::vector<int> counts(static_cast<size_t>(k), 0);
  std::vector<double> global(static_cast<size_t>(d), 0.0);
  for (int i = 0; i < n; ++i) {
    const int y = t.labels[static_cast<size_t>(i)];
    ++counts[static_cast<size_t>(y)];
    for (int j = 0; j < d; ++j) {
      means.at(y, j) += t.features.at(i, j);
      global[static_cast<size_t>(j)] += t.features.at(i, j);
    }
  }
  for (int c = 0; c < k; ++c) {
    if (counts[static_cast<size_t>(c)] == 0)
      throw std::invalid_argument("scatter_matrices: class " + std::to_string(c) + " is empty");
    for (int j = 0; j < d; ++j) means.at(c, j) /= counts[static_cast<size_t>(c)];
  }
  for (auto& g : global) g /= n;

  s_w = Mat(d, d);
  for (int i = 0; i < n; ++i) {
    const int y = t.labels[static_cast<size_t>(i)];
    for (int a = 0; a < d; ++a) {
      const double da = t.features.at(i, a) - means.at(y, a);
      if (da == 0.0) continue;
      for (int b = 0; b < d; ++b)
        s_w.at(a, b) += da * (t.features.at(i, b) - means.at(y, b));
    }
  }
  s_b = Mat(d, d);
  for (int c = 0; c < k; ++c) {
    const double w = counts[static_cast<size_t>(c)];
    for (int a = 0; a < d; ++a) {
      const double da = means.at(c, a) - global[static_cast<size_t>(a)];
      for (int b = 0; b < d; ++b)
        s_b.at(a, b) += w * da * (means.at(c, b) - global[static_cast<size_t>(b)]);
    }
  }
}

LdaProjection lda_fit(const LatentTable& table, int requested_dim) {
  if (requested_dim <= 0) throw std::invalid_argument("lda_fit: requested_dim must be positive");
  const int d = table.features.cols;
  const int k = table.class_count;

  LdaProjection out;
  out.requested_dim = requested_dim;
  out.achieved_dim = std::min({requested_dim, k - 1, d});
  if (out.achieved_dim <= 0) throw std::invalid_argument("lda_fit: no usable directions");
  if (out.achieved_dim < requested_dim) {
    out.clipped = true;
    out.warnings.push_back("code length clipped from " + std::to_string(requested_dim) + " to " +
                           std::to_string(out.achieved_dim) + " (limit is min(classes-1, dim) = " +
                           std::to_string(std::min(k - 1, d)) + ")");
  }

  Mat s_w, s_b;
  scatter_matrices(table, s_w, s_b);

  double tr = trace(s_w);
  out.lambda = tr > 0 ? 1e-4 * tr / d : 1e-4;
  Mat reg = s_w;
  for (int i = 0; i < d; ++i) reg.at(i, i) += out.lambda;

  // Whiten: with S_w + lambda I = L L^T, the generalized problem
  // S_b p = mu (S_w + lambda I) p becomes (L^-1 S_b L^-T) q = mu q, p = L^-T q.
  Mat l = cholesky(reg);
  Mat whitened = solve_lower(l, transpose(solve_lower(l, s_b)));
  // Symmetrize against roundoff before the eigensolve.
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      const double v = 0.5 * (whitened.at(i, j) + whitened.at(j, i));
      whitened.at(i, j) = v;
      whitened.at(j, i) = v;
    }
  SymEig eig = jacobi_eigensolve(whitened);

  Mat q(d, out.achieved_dim);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < out.achieved_dim; ++j) q.at(i, j) = eig.vectors.at(i, j);
  Mat p = solve_lower_transpose(l, q);

  // Deterministic sign: first component with magnitude > 1e-12 is positive.
  for (int j = 0; j < p.cols; ++j) {
    double sign = 1.0;
    for (int i = 0; i < p.rows; ++i)
      if (std::abs(p.at(i, j)) > 1e-12) {
        sign = p.at(i, j) > 0 ? 1.0 : -1.0;
        break;
      }
    if (sign < 0)
      for (int i = 0; i < p.rows; ++i) p.at(i, j) = -p.at(i, j);
  }
  out.directions = std::move(p);
  return out;
}

Mat lda_project(const LdaProjection& p, const Mat& features) {
  if (features.cols != p.directions.rows)
    throw std::invalid_argument("lda_project: feature dimension mismatch");
  return matmul(features, p.directions);
}

double fisher_criterion(const Mat& s_w_reg, const Mat& s_b, const Mat& p) {
  Mat pwp = matmul(transpose(p), matmul(s_w_reg, p));
  Mat pbp = matmul(transpose(p), matmul(s_b, p));
  return trace(solve_spd(pwp, pbp));
}

BinaryCodeSet binarize_codes(const Mat& projected, const std::vector<int>& labels,
                             int class_count) {
  if (projected.rows != static_cast<int>(labels.size()))
    throw std::invalid_argument("binarize_codes: row/label count mismatch");
  if (projected.rows == 0 || projected.cols == 0)
    throw std::invalid_argument("binarize_codes: empty projection");

  BinaryCodeSet out;
  out.class_count = class_count;
  out.code_length = projected.cols;
  out.class_means = Mat(class_count, projected.cols);
  std::vector<int> counts(static_cast<size_t>(class_count), 0);
  for (int i = 0; i < projected.rows; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= class_count)
      throw std::invalid_argument("binarize_codes: label out of range");
    ++counts[static_cast<size_t>(y)];
    for (int j = 0; j < projected.cols; ++j) out.class_means.at(y, j) += projected.at(i, j);
  }
  for (int c = 0; c < class_count; ++c) {
    if (counts[static_cast<size_t>(c)] == 0)
      throw std::invalid_argument("binarize_codes: class " + std::to_string(c) + " is empty");
    for (int j = 0; j < projected.cols; ++j)
      out.class_means.at(c, j) /= counts[static_cast<size_t>(c)];
  }

  out.centroid.assign(static_cast<size_t>(projected.cols), 0.0);
  for (int c = 0; c < class_count; ++c)
    for (int j = 0; j < projected.cols; ++j)
      out.centroid[static_cast<size_t>(j)] += out.class_means.at(c, j) / class_count;

  out.codes.resize(static_cast<size_t>(class_count) * projected.cols);
  for (int c = 0; c < class_count; ++c)
    for (int j = 0; j < projected.cols; ++j)
      out.codes[static_cast<size_t>(c) * projected.cols + j] =
          out.class_means.at(c, j) - out.centroid[static_cast<size_t>(j)] > 0.0 ? 1 : 0;

  for (int a = 0; a < class_count; ++a)
    for (int b = a + 1; b < class_count; ++b) {
      bool same = true;
      for (int j = 0; j < projected.cols && same; ++j)
        same = out.bit(a, j) == out.bit(b, j);
      if (same)
        out.warnings.push_back("classes " + std::to_string(a) + " and " + std::to_string(b) +
                               " received identical codes");
    }
  return out;
}

void export_codes_csv(const std::string& path, const BinaryCodeSet& codes) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "class";
  for (int j = 0; j < codes.code_length; ++j) f << ",bit" << j;
  f << "\n";
  for (int c = 0; c < codes.class_count; ++c) {
    f << c;
    for (int j = 0; j < codes.code_length; ++j) f << ',' << static_cast<int>(codes.bit(c, j));
    f << "\n";
  }
}

}  // namespace uba
