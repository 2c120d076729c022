#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "rbk/prediction.hpp"
#include "rbk/simulation.hpp"
#include "test_util.hpp"

using namespace rbk;
using rbk::testing::Mat;
using rbk::testing::Rng;
using rbk::testing::Vec;
using rbk::testing::to_eigen;

namespace {

SparseMatrix scalar_one() { return SparseMatrix::from_triplets(1, 1, {{0, 0, 1.0}}); }

}  // namespace

TEST(KrigePredict, Examples) {
  const SREParams p{ScaledK{1.0}, NoiseSpec::homoskedastic(1, 1.0)};
  EXPECT_NEAR(krige_predict(scalar_one(), scalar_one(), p, Vector{2.0})[0], 1.0, 1e-15);
  Rng rng(1);
  const auto s = rng.sparse_full_rank(20, 4), a = rng.sparse_full_rank(7, 4);
  const SREParams q{FullK{rng.spd(4)}, NoiseSpec::homoskedastic(20, 0.5)};
  for (double v : krige_predict(a, s, q, Vector(20, 0.0))) EXPECT_EQ(v, 0.0);
}

TEST(KrigeSe, Examples) {
  const SREParams p{ScaledK{1.0}, NoiseSpec{0.0, 1.0, {1.0}, {1.0}}};
  EXPECT_NEAR(krige_se(scalar_one(), scalar_one(), p, Vector{1.0})[0], std::sqrt(0.5), 1e-15);
  // a site outside every bandwidth gets the prior nugget SE
  Rng rng(2);
  const auto s = rng.sparse_full_rank(15, 3);
  const auto a = SparseMatrix::from_triplets(2, 3, {{0, 1, 0.4}});
  const SREParams q{ScaledK{0.8}, NoiseSpec::homoskedastic(15, 0.3)};
  const Vector se = krige_se(a, s, q, Vector{1.0, 2.0});
  EXPECT_NEAR(se[1], std::sqrt(0.3 * 2.0), 1e-15);
}

TEST(Krige, RandomAgainstDenseOracle) {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 40, m = 5, sites = 25;
    const auto s = rng.sparse_full_rank(n, m), a = rng.sparse_full_rank(sites, m);
    const DenseMatrix k = rng.spd(m);
    const NoiseSpec noise{0.4, 0.15, rng.positive_vector(n), rng.positive_vector(n)};
    const SREParams p{FullK{k}, noise};
    const Vector y = rng.normal_vector(n), v0 = rng.positive_vector(sites);
    const Mat sd = to_eigen(s), ad = to_eigen(a), kd = to_eigen(k);
    const Mat sigma = sd * kd * sd.transpose() + Mat(to_eigen(noise.diagonal()).asDiagonal());
    const Mat si = sigma.inverse();
    const Vec want_pred = ad * kd * sd.transpose() * si * to_eigen(y);
    EXPECT_LT(rbk::testing::rel_err(krige_predict(a, s, p, y), want_pred), 1e-9);
    const Mat cov = ad * kd * ad.transpose() - ad * kd * sd.transpose() * si * sd * kd * ad.transpose();
    const Vector se = krige_se(a, s, p, v0);
    for (std::size_t i = 0; i < sites; ++i)
      EXPECT_NEAR(se[i], std::sqrt(cov(i, i) + 0.4 * v0[i]), 1e-8 * std::sqrt(cov(i, i) + 0.4 * v0[i]));
  }
}

TEST(Krige, ResultBundle) {
  Rng rng(4);
  const auto s = rng.sparse_full_rank(12, 3), a = rng.sparse_full_rank(4, 3);
  const SREParams p{ScaledK{1.0}, NoiseSpec::homoskedastic(12, 0.2)};
  const std::vector<Location2D> sites(4);
  const auto r = krige(a, s, p, rng.normal_vector(12), sites, Vector(4, 1.0));
  EXPECT_EQ(r.predictions.size(), 4u);
  EXPECT_NEAR(r.mean_se, std::accumulate(r.std_errors.begin(), r.std_errors.end(), 0.0) / 4.0, 1e-15);
  EXPECT_THROW(krige_se(a, s, p, Vector(4, 0.0)), Error);
  EXPECT_THROW(krige_predict(a, s, p, Vector(3, 0.0)), Error);
}

TEST(OracleKrige, Examples) {
  const MaternParams cov{1.0, 1.0, 0.2};
  ObservationSet obs;
  obs.locations = {{0.1, 0.1}, {0.5, 0.4}, {0.9, 0.8}};
  obs.values = {1.0, -2.0, 0.5};
  const std::vector<Location2D> at{{0.5, 0.4}};
  EXPECT_NEAR(oracle_krige(cov, obs, at, 0.0)[0], -2.0, 1e-10);
  obs.values = {0.0, 0.0, 0.0};
  EXPECT_EQ(oracle_krige(cov, obs, at, 0.1)[0], 0.0);
}

TEST(OracleKrige, OneDimensionalNormalEquations) {
  const MaternParams cov{0.5, 2.0, 0.3};
  ObservationSet obs;
  Rng rng(5);
  for (int i = 0; i < 10; ++i) {
    obs.locations.push_back({0.1 * i, 0.0});
    obs.values.push_back(rng.normal());
  }
  const std::vector<Location2D> sites{{0.05, 0.0}, {0.47, 0.0}, {1.2, 0.0}};
  Mat c(10, 10);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) c(i, j) = 2.0 * std::exp(-std::abs(0.1 * (i - j)) / 0.3) + (i == j ? 0.25 : 0.0);
  const Vec w = c.ldlt().solve(to_eigen(obs.values));
  const Vector got = oracle_krige(cov, obs, sites, 0.25);
  for (std::size_t s = 0; s < sites.size(); ++s) {
    double want = 0.0;
    for (int i = 0; i < 10; ++i) want += 2.0 * std::exp(-std::abs(sites[s].x - 0.1 * i) / 0.3) * w(i);
    EXPECT_NEAR(got[s], want, 1e-10);
  }
}

TEST(Mspe, Examples) {
  EXPECT_EQ(mspe(Vector{1, 2, 3}, Vector{1, 2, 3}), 0.0);
  EXPECT_EQ(mspe(Vector{1, 1}, Vector{0, 2}), 1.0);
  Rng rng(6);
  const Vector a = rng.normal_vector(101), b = rng.normal_vector(101);
  double s = 0.0;
  for (std::size_t i = 0; i < 101; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_EQ(mspe(a, b), s / 101.0);
  EXPECT_THROW(mspe(Vector{}, Vector{}), Error);
}

TEST(ModelSelect, SingleAndDuplicate) {
  SimDesign d;
  d.grid_side = 20;
  d.n_obs = 150;
  d.sigma2_noise = 0.1;
  const auto field = simulate_field(d);
  const auto obs = field.observations();
  const auto noise = NoiseSpec::homoskedastic(obs.size(), 1.0);
  const std::vector<Candidate> one{{{1.5}, triangular_knot_grid(5)}};
  EXPECT_EQ(model_select(one, obs, noise, SelectionCriterion::mean_krig_se).winner, 0u);
  const std::vector<Candidate> dup{{{1.5}, triangular_knot_grid(5)}, {{1.5}, triangular_knot_grid(5)}};
  for (auto crit : {SelectionCriterion::mean_krig_se, SelectionCriterion::min_sigma2}) {
    const auto r = model_select(dup, obs, noise, crit);
    EXPECT_EQ(r.winner, 0u);
    EXPECT_EQ(r.candidates[0].score, r.candidates[1].score);
  }
}

TEST(ModelSelect, FailuresReportedAndAllFailIsNoModel) {
  SimDesign d;
  d.grid_side = 20;
  d.n_obs = 100;
  const auto obs = simulate_field(d).observations();
  const auto noise = NoiseSpec::homoskedastic(obs.size(), 1.0);
  // a tiny bandwidth leaves columns of S empty -> rank deficient
  const std::vector<Candidate> c{{{0.05}, triangular_knot_grid(13)}, {{1.5}, triangular_knot_grid(5)}};
  const auto r = model_select(c, obs, noise, SelectionCriterion::min_sigma2);
  EXPECT_FALSE(r.candidates[0].ok);
  EXPECT_FALSE(r.candidates[0].message.empty());
  EXPECT_EQ(r.winner, 1u);
  const std::vector<Candidate> bad{{{0.05}, triangular_knot_grid(13)}};
  try {
    (void)model_select(bad, obs, noise, SelectionCriterion::min_sigma2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::no_model);
  }
}
