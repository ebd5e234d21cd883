#include <cmath>

#include "doctest.h"
#include "ubalab/dataset.hpp"
#include "ubalab/latent.hpp"
#include "ubalab/rng.hpp"

#ifdef UBALAB_HAVE_EIGEN
#include <Eigen/Dense>
#endif

using namespace uba;

namespace {

// Three well-separated Gaussian blobs in 5-d; LDA on this is unambiguous.
LatentTable blob_table(uint64_t seed = 1, int per_class = 40) {
  Rng rng(seed);
  const int k = 3, d = 5;
  const double centers[3][5] = {
      {4.0, 0.0, 0.0, 1.0, -2.0}, {0.0, 4.0, 0.0, -1.0, 2.0}, {0.0, 0.0, 4.0, 1.0, 2.0}};
  LatentTable t;
  t.class_count = k;
  t.features = Mat(k * per_class, d);
  t.labels.resize(static_cast<size_t>(k) * per_class);
  int row = 0;
  for (int c = 0; c < k; ++c)
    for (int s = 0; s < per_class; ++s) {
      for (int j = 0; j < d; ++j) t.features.at(row, j) = centers[c][j] + 0.4 * rng.normal();
      t.labels[static_cast<size_t>(row)] = c;
      ++row;
    }
  return t;
}

}  // namespace

TEST_CASE("scatter matrices match brute-force definitions on a tiny table") {
  // 4 points, 2 classes, hand-verifiable.
  LatentTable t;
  t.class_count = 2;
  t.features = Mat(4, 2, {0, 0, 2, 0, 4, 4, 6, 4});
  t.labels = {0, 0, 1, 1};
  Mat sw, sb;
  scatter_matrices(t, sw, sb);
  // Class means: (1,0), (5,4); global (3,2).
  // S_w = sum over class-centered outer products = [[2,0],[0,0]]*... :
  // class 0: (-1,0),(1,0) -> [[2,0],[0,0]]; class 1: (-1,0),(1,0) -> same.
  CHECK(sw.at(0, 0) == doctest::Approx(4.0));
  CHECK(sw.at(0, 1) == doctest::Approx(0.0));
  CHECK(sw.at(1, 1) == doctest::Approx(0.0));
  // S_b = 2*(-2,-2)(-2,-2)^T + 2*(2,2)(2,2)^T = [[16,16],[16,16]].
  CHECK(sb.at(0, 0) == doctest::Approx(16.0));
  CHECK(sb.at(0, 1) == doctest::Approx(16.0));
  CHECK(sb.at(1, 1) == doctest::Approx(16.0));
}

TEST_CASE("lda separates blob classes and clips the dimension") {
  auto t = blob_table();
  LdaProjection p = lda_fit(t, 8);  // request more than K-1 = 2
  CHECK(p.clipped);
  CHECK(p.achieved_dim == 2);
  CHECK(p.requested_dim == 8);
  REQUIRE(p.warnings.size() == 1);

  Mat z = lda_project(p, t.features);
  // Projected class means must be far apart relative to within-class spread.
  Mat sums(3, 2);
  std::vector<int> counts(3, 0);
  for (int i = 0; i < z.rows; ++i) {
    ++counts[static_cast<size_t>(t.labels[static_cast<size_t>(i)])];
    for (int j = 0; j < 2; ++j) sums.at(t.labels[static_cast<size_t>(i)], j) += z.at(i, j);
  }
  for (int c = 0; c < 3; ++c)
    for (int j = 0; j < 2; ++j) sums.at(c, j) /= counts[static_cast<size_t>(c)];
  double min_gap = 1e300, max_spread = 0;
  for (int a = 0; a < 3; ++a) {
    for (int b = a + 1; b < 3; ++b) {
      double g = std::hypot(sums.at(a, 0) - sums.at(b, 0), sums.at(a, 1) - sums.at(b, 1));
      min_gap = std::min(min_gap, g);
    }
    double spread = 0;
    int cnt = 0;
    for (int i = 0; i < z.rows; ++i)
      if (t.labels[static_cast<size_t>(i)] == a) {
        spread += std::hypot(z.at(i, 0) - sums.at(a, 0), z.at(i, 1) - sums.at(a, 1));
        ++cnt;
      }
    max_spread = std::max(max_spread, spread / cnt);
  }
  CHECK(min_gap > 4.0 * max_spread);
}

TEST_CASE("lda directions beat random projections on the Fisher criterion") {
  auto t = blob_table(9);
  LdaProjection p = lda_fit(t, 2);
  Mat sw, sb;
  scatter_matrices(t, sw, sb);
  Mat reg = sw;
  for (int i = 0; i < reg.rows; ++i) reg.at(i, i) += p.lambda;
  const double fitted = fisher_criterion(reg, sb, p.directions);

  Rng rng(33);
  for (int trial = 0; trial < 8; ++trial) {
    Mat r(5, 2);
    for (auto& v : r.a) v = rng.normal();
    CHECK(fitted >= fisher_criterion(reg, sb, r) - 1e-9);
  }
}

TEST_CASE("lda is deterministic including direction signs") {
  auto t = blob_table(4);
  LdaProjection a = lda_fit(t, 2);
  LdaProjection b = lda_fit(t, 2);
  CHECK(a.directions.a == b.directions.a);
  for (int j = 0; j < a.directions.cols; ++j) {
    for (int i = 0; i < a.directions.rows; ++i) {
      if (std::abs(a.directions.at(i, j)) > 1e-12) {
        CHECK(a.directions.at(i, j) > 0);
        break;
      }
    }
  }
}

#ifdef UBALAB_HAVE_EIGEN
TEST_CASE("lda eigenstructure agrees with Eigen's generalized solver") {
  auto t = blob_table(21, 50);
  Mat sw, sb;
  scatter_matrices(t, sw, sb);
  LdaProjection p = lda_fit(t, 2);
  Mat reg = sw;
  for (int i = 0; i < reg.rows; ++i) reg.at(i, i) += p.lambda;

  const int d = 5;
  Eigen::MatrixXd eb(d, d), ew(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      eb(i, j) = sb.at(i, j);
      ew(i, j) = reg.at(i, j);
    }
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(eb, ew);
  REQUIRE(solver.info() == Eigen::Success);

  // Top-2 generalized eigenvectors (Eigen sorts ascending) match up to
  // scale: check via normalized dot product = +-1.
  for (int j = 0; j < 2; ++j) {
    Eigen::VectorXd ref = solver.eigenvectors().col(d - 1 - j);
    double dot = 0, nref = 0, nmine = 0;
    for (int i = 0; i < d; ++i) {
      dot += ref(i) * p.directions.at(i, j);
      nref += ref(i) * ref(i);
      nmine += p.directions.at(i, j) * p.directions.at(i, j);
    }
    CHECK(std::abs(dot) / std::sqrt(nref * nmine) == doctest::Approx(1.0).epsilon(1e-8));
  }
}
#endif

TEST_CASE("binarization puts strictly-above-centroid coordinates to 1") {
  // Projected values arranged so the class means and centroid are known.
  Mat z(4, 2, {1.0, 0.0, 3.0, 2.0, -1.0, 5.0, -3.0, 3.0});
  std::vector<int> labels = {0, 0, 1, 1};
  auto codes = binarize_codes(z, labels, 2);
  // Means: class0 (2,1), class1 (-2,4); centroid (0, 2.5).
  CHECK(codes.class_means.at(0, 0) == doctest::Approx(2.0));
  CHECK(codes.centroid[1] == doctest::Approx(2.5));
  CHECK(codes.bit(0, 0) == 1);  // 2 > 0
  CHECK(codes.bit(0, 1) == 0);  // 1 < 2.5
  CHECK(codes.bit(1, 0) == 0);
  CHECK(codes.bit(1, 1) == 1);
  CHECK(codes.warnings.empty());
}

TEST_CASE("ties at the centroid binarize to zero (strict inequality)") {
  // Both class means equal the centroid in coordinate 0.
  Mat z(2, 2, {1.0, 2.0, 1.0, -2.0});
  std::vector<int> labels = {0, 1};
  auto codes = binarize_codes(z, labels, 2);
  CHECK(codes.bit(0, 0) == 0);
  CHECK(codes.bit(1, 0) == 0);
  CHECK(codes.bit(0, 1) == 1);
  CHECK(codes.bit(1, 1) == 0);
}

TEST_CASE("identical class codes produce a warning, not an error") {
  Mat z(4, 1, {1.0, 1.0, 1.0, 1.0});
  std::vector<int> labels = {0, 0, 1, 1};
  auto codes = binarize_codes(z, labels, 2);
  REQUIRE(codes.warnings.size() == 1);
  CHECK(codes.warnings[0].find("identical codes") != std::string::npos);
}

TEST_CASE("end-to-end: codes from a trained surrogate are deterministic") {
  DataGenSpec s;
  s.classes = 6;
  s.channels = 3;
  s.height = 8;
  s.width = 8;
  s.train_per_class = 20;
  s.test_per_class = 6;
  s.sample_per_class = 10;
  s.seed = 5;
  auto data = generate_synthetic_dataset(s);
  ArchConfig arch;
  arch.kind = ArchKind::kMlp;
  arch.hidden = 32;
  arch.feature_dim = 16;
  TrainConfig cfg;
  cfg.epochs = 10;
  Classifier surrogate = train_classifier(data.train, arch, cfg, 7);

  auto run = [&]() {
    LatentTable t = extract_latents(surrogate, data.sample);
    LdaProjection p = lda_fit(t, 4);
    Mat z = lda_project(p, t.features);
    return binarize_codes(z, t.labels, t.class_count);
  };
  auto a = run();
  auto b = run();
  CHECK(a.codes == b.codes);
  CHECK(a.code_length == 4);
  CHECK(a.class_count == 6);
  // Codes are not all identical across classes (the task is separable).
  bool any_diff = false;
  for (int c = 1; c < 6; ++c)
    for (int j = 0; j < 4; ++j) any_diff = any_diff || a.bit(c, j) != a.bit(0, j);
  CHECK(any_diff);
}

TEST_CASE("lda input validation") {
  auto t = blob_table();
  CHECK_THROWS_AS(lda_fit(t, 0), std::invalid_argument);
  LatentTable bad = t;
  bad.labels[0] = 99;
  Mat sw, sb;
  CHECK_THROWS(scatter_matrices(bad, sw, sb));
}
