#include <cmath>

#include "doctest.h"
#include "ubalab/linalg.hpp"
#include "ubalab/rng.hpp"
#include "ubalab/tensor.hpp"

#ifdef UBALAB_HAVE_EIGEN
#include <Eigen/Dense>
#endif

using namespace uba;

namespace {

Mat random_spd(int n, uint64_t seed) {
  Rng rng(seed);
  Mat b(n, n);
  for (auto& v : b.a) v = rng.uniform(-1.0, 1.0);
  Mat spd = matmul(transpose(b), b);
  for (int i = 0; i < n; ++i) spd.at(i, i) += 0.5;  // keep it comfortably PD
  return spd;
}

Mat random_symmetric(int n, uint64_t seed) {
  Rng rng(seed);
  Mat s(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      const double v = rng.uniform(-2.0, 2.0);
      s.at(i, j) = v;
      s.at(j, i) = v;
    }
  return s;
}

double max_abs_diff(const Mat& a, const Mat& b) {
  double m = 0;
  for (size_t i = 0; i < a.a.size(); ++i) m = std::max(m, std::abs(a.a[i] - b.a[i]));
  return m;
}

}  // namespace

TEST_CASE("matmul / transpose / trace basics") {
  Mat a(2, 3, {1, 2, 3, 4, 5, 6});
  Mat b(3, 2, {7, 8, 9, 10, 11, 12});
  Mat c = matmul(a, b);
  CHECK(c.at(0, 0) == 58);
  CHECK(c.at(0, 1) == 64);
  CHECK(c.at(1, 0) == 139);
  CHECK(c.at(1, 1) == 154);
  Mat at = transpose(a);
  CHECK(at.rows == 3);
  CHECK(at.at(2, 1) == 6);
  CHECK(trace(Mat::identity(5)) == 5.0);
  CHECK_THROWS(matmul(a, a));
}

TEST_CASE("cholesky reconstructs and rejects indefinite input") {
  Mat spd = random_spd(6, 11);
  Mat l = cholesky(spd);
  for (int i = 0; i < 6; ++i)
    for (int j = i + 1; j < 6; ++j) CHECK(l.at(i, j) == 0.0);
  CHECK(max_abs_diff(matmul(l, transpose(l)), spd) < 1e-12);

  Mat neg = Mat::identity(3);
  neg.at(2, 2) = -1.0;
  CHECK_THROWS_AS(cholesky(neg), NumericError);
}

TEST_CASE("triangular solves invert the factorization") {
  Mat spd = random_spd(5, 21);
  Rng rng(22);
  Mat x(5, 2);
  for (auto& v : x.a) v = rng.uniform(-3.0, 3.0);
  Mat b = matmul(spd, x);
  Mat got = solve_spd(spd, b);
  CHECK(max_abs_diff(got, x) < 1e-10);
}

TEST_CASE("jacobi eigensolve: reconstruction, orthonormality, ordering") {
  Mat s = random_symmetric(8, 31);
  SymEig e = jacobi_eigensolve(s);
  REQUIRE(e.values.size() == 8);
  for (size_t i = 1; i < e.values.size(); ++i) CHECK(e.values[i - 1] >= e.values[i]);

  // V diag(w) V^T == S
  Mat d(8, 8);
  for (int i = 0; i < 8; ++i) d.at(i, i) = e.values[static_cast<size_t>(i)];
  Mat rec = matmul(e.vectors, matmul(d, transpose(e.vectors)));
  CHECK(max_abs_diff(rec, s) < 1e-10);

  // V^T V == I
  Mat vtv = matmul(transpose(e.vectors), e.vectors);
  CHECK(max_abs_diff(vtv, Mat::identity(8)) < 1e-10);
}

TEST_CASE("jacobi eigensolve: known 2x2 answer") {
  Mat s(2, 2, {2, 1, 1, 2});
  SymEig e = jacobi_eigensolve(s);
  CHECK(e.values[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(e.values[1] == doctest::Approx(1.0).epsilon(1e-12));
  const double r = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(e.vectors.at(0, 0)) == doctest::Approx(r));
  // sign convention: first significant component positive
  CHECK(e.vectors.at(0, 0) > 0);
  CHECK(e.vectors.at(0, 1) > 0);
}

TEST_CASE("jacobi eigensolve is deterministic") {
  Mat s = random_symmetric(7, 99);
  SymEig a = jacobi_eigensolve(s);
  SymEig b = jacobi_eigensolve(s);
  CHECK(a.values == b.values);
  CHECK(a.vectors.a == b.vectors.a);
}

#ifdef UBALAB_HAVE_EIGEN
TEST_CASE("eigensolver agrees with Eigen on random symmetric matrices") {
  for (uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
    const int n = 6 + static_cast<int>(seed % 3);
    Mat s = random_symmetric(n, 500 + seed);
    SymEig mine = jacobi_eigensolve(s);

    Eigen::MatrixXd es(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) es(i, j) = s.at(i, j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(es);
    REQUIRE(solver.info() == Eigen::Success);

    // Eigen sorts ascending; compare against reversed order.
    for (int i = 0; i < n; ++i)
      CHECK(mine.values[static_cast<size_t>(i)] ==
            doctest::Approx(solver.eigenvalues()(n - 1 - i)).epsilon(1e-9));
    // Eigenvectors match up to sign.
    for (int j = 0; j < n; ++j) {
      double dot = 0;
      for (int i = 0; i < n; ++i)
        dot += mine.vectors.at(i, j) * solver.eigenvectors()(i, n - 1 - j);
      CHECK(std::abs(dot) == doctest::Approx(1.0).epsilon(1e-8));
    }
  }
}

TEST_CASE("cholesky solve agrees with Eigen LDLT") {
  Mat spd = random_spd(9, 77);
  Rng rng(78);
  Mat b(9, 1);
  for (auto& v : b.a) v = rng.uniform(-1.0, 1.0);
  Mat mine = solve_spd(spd, b);

  Eigen::MatrixXd ea(9, 9);
  Eigen::VectorXd eb(9);
  for (int i = 0; i < 9; ++i) {
    eb(i) = b.at(i, 0);
    for (int j = 0; j < 9; ++j) ea(i, j) = spd.at(i, j);
  }
  Eigen::VectorXd ex = ea.ldlt().solve(eb);
  for (int i = 0; i < 9; ++i)
    CHECK(mine.at(i, 0) == doctest::Approx(ex(i)).epsilon(1e-10));
}
#endif
