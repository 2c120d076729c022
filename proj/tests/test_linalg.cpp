#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "rbk/linalg.hpp"
#include "test_util.hpp"

using namespace rbk;
using rbk::testing::Mat;
using rbk::testing::Rng;
using rbk::testing::Vec;
using rbk::testing::to_eigen;

TEST(Sparse, TripletsCanonical) {
  const auto s = SparseMatrix::from_triplets(3, 2, {{2, 1, 1.0}, {0, 0, 2.0}, {2, 1, 3.0}, {1, 0, 0.0}});
  EXPECT_TRUE(s.is_canonical());
  EXPECT_EQ(s.nnz(), 2u);
  EXPECT_DOUBLE_EQ(s.to_dense()(2, 1), 4.0);
  EXPECT_THROW(SparseMatrix::from_triplets(2, 2, {{2, 0, 1.0}}), Error);
}

TEST(Sparse, FromCscRejectsUnsorted) {
  EXPECT_THROW(SparseMatrix::from_csc(3, 1, {0, 2}, {2, 0}, {1.0, 1.0}), Error);
  EXPECT_NO_THROW(SparseMatrix::from_csc(3, 1, {0, 2}, {0, 2}, {1.0, 1.0}));
}

TEST(Sparse, SpmvExamples) {
  const auto id = SparseMatrix::from_dense(DenseMatrix::identity(3));
  const Vector v{1.0, -2.0, 3.0};
  EXPECT_EQ(spmv(id, v), v);
  const auto c = SparseMatrix::from_triplets(3, 1, {{0, 0, 2.0}, {2, 0, 3.0}});
  const Vector r = spmv(c, Vector{4.0});
  EXPECT_EQ(r, (Vector{8.0, 0.0, 12.0}));
}

TEST(Sparse, SpmvRandomAgainstDense) {
  Rng rng(11);
  const auto s = rng.sparse_full_rank(20, 7);
  const Mat d = to_eigen(s);
  const Vector v = rng.normal_vector(7), w = rng.normal_vector(20);
  EXPECT_LT((to_eigen(spmv(s, v)) - d * to_eigen(v)).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((to_eigen(spmv_t(s, w)) - d.transpose() * to_eigen(w)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Sparse, TransposeAndPermute) {
  Rng rng(12);
  const auto s = rng.sparse_full_rank(9, 4);
  EXPECT_TRUE(s.transpose().is_canonical());
  EXPECT_EQ((to_eigen(s.transpose()) - to_eigen(s).transpose()).norm(), 0.0);
  const std::vector<std::size_t> order{3, 1, 4, 0, 8, 2, 7, 5, 6};
  const auto p = s.permute_rows(order);
  const Mat d = to_eigen(s), dp = to_eigen(p);
  for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ((dp.row(i) - d.row(order[i])).norm(), 0.0);
}

TEST(Sparse, CoordinateRoundTrip) {
  Rng rng(13);
  const auto s = rng.sparse_full_rank(15, 6);
  std::stringstream ss;
  write_coordinate(ss, s);
  const auto back = read_coordinate(ss);
  EXPECT_EQ(back.colptr(), s.colptr());
  EXPECT_EQ(back.rowind(), s.rowind());
  EXPECT_EQ(back.values(), s.values());
  std::stringstream bad("2 2 1\n0;0;1\n");
  EXPECT_THROW(read_coordinate(bad), Error);
}

TEST(Gram, Examples) {
  const auto s = SparseMatrix::from_triplets(3, 2, {{0, 0, 1.0}, {1, 1, 1.0}});
  const DenseMatrix g = gram(s);
  EXPECT_DOUBLE_EQ(g(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(g(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(g(0, 1), 0.0);
  const auto c = SparseMatrix::from_triplets(2, 1, {{0, 0, 3.0}, {1, 0, 4.0}});
  EXPECT_DOUBLE_EQ(gram(c)(0, 0), 25.0);
}

TEST(Gram, RandomAgainstDense) {
  Rng rng(14);
  const auto s = rng.sparse_full_rank(100, 10, 0.2);
  const Mat d = to_eigen(s);
  EXPECT_LT(rbk::testing::rel_err(to_eigen(gram(s)), d.transpose() * d), 1e-12);
  const Vector w = rng.positive_vector(100);
  EXPECT_LT(rbk::testing::rel_err(to_eigen(weighted_gram(s, w)), d.transpose() * to_eigen(w).asDiagonal() * d),
            1e-12);
}

TEST(Cholesky, Examples) {
  const auto f = cholesky(DenseMatrix::identity(2, 4.0));
  EXPECT_DOUBLE_EQ(f.lower(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(f.lower(1, 1), 2.0);
  EXPECT_DOUBLE_EQ(f.lower(1, 0), 0.0);
  EXPECT_NEAR(chol_logdet(f), 2.0 * std::log(4.0), 1e-15);
  EXPECT_EQ(chol_solve(f, Vector{8.0, 4.0}), (Vector{2.0, 1.0}));
  const auto g = cholesky(DenseMatrix::from_rows({{4, 2}, {2, 5}}));
  EXPECT_DOUBLE_EQ(g.lower(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(g.lower(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(g.lower(1, 1), 2.0);
  EXPECT_DOUBLE_EQ(g.lower(0, 1), 0.0);
}

TEST(Cholesky, Errors) {
  try {
    (void)cholesky(DenseMatrix::from_rows({{1, 2}, {2, 1}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::not_positive_definite);
  }
  EXPECT_THROW((void)cholesky(DenseMatrix::from_rows({{1, 0.5}, {0.2, 1}})), Error);
  EXPECT_NO_THROW((void)cholesky_semidefinite(DenseMatrix::from_rows({{1, 1}, {1, 1}})));
}

TEST(Cholesky, RandomReconstructAndSolve) {
  Rng rng(15);
  for (std::size_t m : {3u, 8u, 20u}) {
    const DenseMatrix k = rng.spd(m);
    const auto f = cholesky(k);
    const Mat l = to_eigen(f.lower);
    EXPECT_LT(rbk::testing::rel_err(l * l.transpose(), to_eigen(k)), 1e-12);
    const Vector b = rng.normal_vector(m);
    const Vec oracle = to_eigen(k).inverse() * to_eigen(b);
    EXPECT_LT(rbk::testing::rel_err(chol_solve(f, b), oracle), 1e-10);
    EXPECT_NEAR(chol_logdet(f), std::log(to_eigen(k).determinant()), 1e-10);
    EXPECT_LT(rbk::testing::rel_err(to_eigen(chol_inverse(f)), to_eigen(k).inverse()), 1e-10);
  }
}

TEST(ThinQR, Examples) {
  const auto s = SparseMatrix::from_triplets(3, 2, {{0, 0, 1.0}, {1, 1, 1.0}});
  const auto qr = thin_qr(s);
  EXPECT_EQ(to_eigen(qr.r1()), Mat::Identity(2, 2));
  EXPECT_EQ(apply_qt(qr, Vector{1, 2, 3}), (Vector{1, 2}));
  const auto c = thin_qr(SparseMatrix::from_triplets(2, 1, {{0, 0, 3.0}, {1, 0, 4.0}}));
  EXPECT_DOUBLE_EQ(c.r1()(0, 0), 5.0);
}

TEST(ThinQR, RankDeficient) {
  const auto s = SparseMatrix::from_triplets(3, 2, {{0, 0, 1.0}, {1, 0, 1.0}, {0, 1, 2.0}, {1, 1, 2.0}});
  try {
    (void)thin_qr(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::rank_deficient_basis);
  }
}

TEST(ThinQR, RandomAgainstHouseholder) {
  Rng rng(16);
  for (int rep = 0; rep < 10; ++rep) {
    const auto s = rng.sparse_full_rank(60, 8);
    const auto qr = thin_qr(s);
    const Mat r1 = to_eigen(qr.r1()), d = to_eigen(s);
    EXPECT_LT(rbk::testing::rel_err(r1.transpose() * r1, d.transpose() * d), 1e-10);
    // Householder Q1 up to column signs; fix signs so diag(R) > 0.
    Eigen::HouseholderQR<Mat> hh(d);
    Mat q1 = hh.householderQ() * Mat::Identity(60, 8);
    const Mat r = hh.matrixQR().topRows(8).triangularView<Eigen::Upper>();
    for (int j = 0; j < 8; ++j)
      if (r(j, j) < 0) q1.col(j) *= -1.0;
    const Vector v = rng.normal_vector(60);
    EXPECT_LT(rbk::testing::rel_err(apply_qt(qr, v), q1.transpose() * to_eigen(v)), 1e-9);
    const Vector w = rng.normal_vector(8);
    EXPECT_LT(rbk::testing::rel_err(apply_qt(qr, spmv(s, w)), r1 * to_eigen(w)), 1e-10);
    const Vector dvec = rng.positive_vector(60);
    EXPECT_LT(rbk::testing::rel_err(to_eigen(reduced_noise_matrix(qr, dvec)),
                                    q1.transpose() * to_eigen(dvec).asDiagonal() * q1),
              1e-9);
  }
}

TEST(ThinQR, ReducedNoiseSpecialCases) {
  Rng rng(17);
  const auto qr = thin_qr(rng.sparse_full_rank(30, 5));
  const DenseMatrix h = reduced_noise_matrix(qr, Vector(30, 0.7));
  EXPECT_EQ(to_eigen(h), 0.7 * Mat::Identity(5, 5));
  const DenseMatrix z = reduced_noise_matrix(qr, Vector(30, 0.0));
  EXPECT_EQ(z.max_abs(), 0.0);
}

TEST(Householder, LeastSquares) {
  Rng rng(18);
  DenseMatrix x(25, 4);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t i = 0; i < 25; ++i) x(i, j) = rng.normal();
  const Vector y = rng.normal_vector(25);
  const HouseholderQR qr(x);
  const Vec oracle = to_eigen(x).colPivHouseholderQr().solve(to_eigen(y));
  EXPECT_LT(rbk::testing::rel_err(qr.solve(y), oracle), 1e-10);
  const Vector back = qr.apply_q(qr.apply_qt(y));
  EXPECT_LT(rbk::testing::rel_err(back, to_eigen(y)), 1e-13);
}

TEST(Eigen, Examples) {
  DenseMatrix d(3, 3);
  d(0, 0) = 3;
  d(1, 1) = 1;
  d(2, 2) = 2;
  const auto e = symmetric_eigen(d);
  EXPECT_EQ(e.values, (Vector{3, 2, 1}));
  const Vector v{1, 2, 2};
  DenseMatrix r1(3, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) r1(i, j) = v[i] * v[j];
  const auto e1 = symmetric_eigen(r1);
  EXPECT_NEAR(e1.values[0], 9.0, 1e-12);
  EXPECT_NEAR(e1.values[1], 0.0, 1e-12);
  EXPECT_NEAR(e1.values[2], 0.0, 1e-12);
}

TEST(Eigen, RandomReconstruction) {
  Rng rng(19);
  DenseMatrix m(12, 12);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j <= i; ++j) m(i, j) = m(j, i) = rng.normal();
  const auto e = symmetric_eigen(m);
  const Mat p = to_eigen(e.vectors);
  const Mat rec = p * to_eigen(e.values).asDiagonal() * p.transpose();
  EXPECT_LT((rec - to_eigen(m)).norm(), 1e-9);
  EXPECT_LT((p.transpose() * p - Mat::Identity(12, 12)).norm(), 1e-10);
  Eigen::SelfAdjointEigenSolver<Mat> oracle(to_eigen(m));
  for (int k = 0; k < 12; ++k) EXPECT_NEAR(e.values[k], oracle.eigenvalues()(11 - k), 1e-10);
}

TEST(Woodbury, ScalarExamples) {
  const auto s = SparseMatrix::from_triplets(1, 1, {{0, 0, 1.0}});
  const Vector g = woodbury_gain(DenseMatrix::identity(1, 2.0), s, Vector{3.0}, Vector{1.0});
  EXPECT_NEAR(g[0], 0.4, 1e-15);
  const Vector x = smw_inverse_apply(DenseMatrix::identity(1, 1.0), s, Vector{1.0}, Vector{2.0});
  EXPECT_NEAR(x[0], 1.0, 1e-15);
}

TEST(Woodbury, ZeroKIsDiagonalSolve) {
  Rng rng(20);
  const auto s = rng.sparse_full_rank(12, 3);
  const Vector d = rng.positive_vector(12), v = rng.normal_vector(12);
  const Vector x = smw_inverse_apply(DenseMatrix(3, 3), s, d, v);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(x[i], v[i] / d[i], 1e-14);
  EXPECT_THROW((void)woodbury_gain(DenseMatrix(3, 3), s, d, v), Error);
}

TEST(Woodbury, OrthonormalScaledIdentity) {
  const auto s = SparseMatrix::from_triplets(4, 2, {{0, 0, 1.0}, {2, 1, 1.0}});
  const double kappa = 1.7, sig = 0.3;
  const Vector v{1.0, 2.0, -1.0, 5.0};
  const Vector g = woodbury_gain(DenseMatrix::identity(2, kappa), s, Vector(4, sig), v);
  EXPECT_NEAR(g[0], kappa / (kappa + sig) * 1.0, 1e-14);
  EXPECT_NEAR(g[1], kappa / (kappa + sig) * -1.0, 1e-14);
}

TEST(Woodbury, RandomAgainstDense) {
  Rng rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 40, m = 5;
    const auto s = rng.sparse_full_rank(n, m);
    const DenseMatrix k = rng.spd(m);
    const Vector d = rng.positive_vector(n), v = rng.normal_vector(n);
    const Mat sd = to_eigen(s), kd = to_eigen(k);
    const Mat sigma = sd * kd * sd.transpose() + Mat(to_eigen(d).asDiagonal());
    const Mat sinv = sigma.inverse();
    EXPECT_LT(rbk::testing::rel_err(woodbury_gain(k, s, d, v), kd * sd.transpose() * sinv * to_eigen(v)), 1e-9);
    EXPECT_LT(rbk::testing::rel_err(smw_inverse_apply(k, s, d, v), sinv * to_eigen(v)), 1e-9);
    const WoodburySystem w(k, s, d);
    EXPECT_NEAR(w.logdet(), std::log(sigma.determinant()), 1e-9 * std::abs(std::log(sigma.determinant())) + 1e-9);
    EXPECT_LT(rbk::testing::rel_err(w.inverse_diagonal(), sinv.diagonal()), 1e-9);
  }
}
