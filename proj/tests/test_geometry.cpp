#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rbk/geometry.hpp"
#include "test_util.hpp"

using namespace rbk;

namespace {

std::vector<Location2D> uniform_points(std::size_t n, std::uint64_t seed) {
  rbk::testing::Rng rng(seed);
  std::vector<Location2D> pts(n);
  for (auto& p : pts) p = {rng.uniform(), rng.uniform()};
  return pts;
}

}  // namespace

TEST(KnotGrid, PublishedCounts) {
  EXPECT_EQ(triangular_knot_grid(5).size(), 23u);
  EXPECT_EQ(triangular_knot_grid(9).size(), 77u);
  EXPECT_EQ(triangular_knot_grid(13).size(), 175u);
  EXPECT_EQ(triangular_knot_grid(2).size(), 3u);
}

TEST(KnotGrid, CountFormula) {
  for (std::size_t k = 2; k <= 30; ++k) {
    const std::size_t r = triangular_row_count(k, Domain::unit_square());
    const std::size_t expected = (r + 1) / 2 * k + r / 2 * (k - 1);
    EXPECT_EQ(triangular_knot_grid(k).size(), expected) << "k=" << k;
  }
  // k rows for the two smaller published grids
  EXPECT_EQ(triangular_row_count(5, Domain::unit_square()), 5u);
  EXPECT_EQ(triangular_row_count(9, Domain::unit_square()), 9u);
}

TEST(KnotGrid, InsideDomainAndErrors) {
  const Domain dom{-2.0, 3.0, 1.0, 2.0};
  const auto grid = triangular_knot_grid(7, dom);
  for (const auto& p : grid.knots()) {
    EXPECT_GE(p.x, dom.xmin);
    EXPECT_LE(p.x, dom.xmax);
    EXPECT_GE(p.y, dom.ymin);
    EXPECT_LE(p.y, dom.ymax + 1e-12);
  }
  EXPECT_THROW(triangular_knot_grid(1), Error);
  EXPECT_THROW(triangular_knot_grid(5, Domain{0, 0, 0, 1}), Error);
}

TEST(MultiResolution, Examples) {
  const std::vector<std::size_t> one{5};
  const auto single = multi_resolution_knots(one, Domain::unit_square(), 0.0);
  EXPECT_EQ(single.knots(), triangular_knot_grid(5).knots());
  const std::vector<std::size_t> two{5, 9};
  const auto ks = multi_resolution_knots(two, Domain::unit_square(), 0.01);
  EXPECT_EQ(ks.size(), 100u);
  EXPECT_EQ(ks.levels(), 2u);
  for (std::size_t i = 0; i < ks.size(); ++i)
    for (std::size_t j = i + 1; j < ks.size(); ++j) EXPECT_GT(distance(ks[i], ks[j]), 0.0);
  const std::vector<std::size_t> dup{5, 5};
  try {
    (void)multi_resolution_knots(dup, Domain::unit_square(), 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_knots);
  }
  EXPECT_NEAR(default_jitter(two, Domain::unit_square()), 0.01 * 0.125, 1e-15);
}

TEST(Spacing, Examples) {
  const KnotSet line({{0, 0}, {0.25, 0}, {0.5, 0}, {0.75, 0}, {1, 0}});
  EXPECT_DOUBLE_EQ(min_knot_spacing(line, 0), 0.25);
  EXPECT_DOUBLE_EQ(min_knot_spacing(triangular_knot_grid(5), 0), 0.25);
  EXPECT_DOUBLE_EQ(min_knot_spacing(KnotSet({{0, 0}, {3, 4}}), 0), 5.0);
  EXPECT_THROW(min_knot_spacing(KnotSet({{0, 0}}), 0), Error);
}

TEST(Spacing, Bandwidth) {
  EXPECT_DOUBLE_EQ(bandwidth({1.5}, triangular_knot_grid(5), 0), 0.375);
  EXPECT_DOUBLE_EQ(bandwidth({1.0}, KnotSet({{0, 0}, {1, 0}}), 0), 1.0);
  const KnotSet app({{0, 0}, {0.7, 0}, {0, 0.9}});
  EXPECT_DOUBLE_EQ(bandwidth({1.6}, app, 0), 1.6 * 0.7);
  EXPECT_THROW(bandwidth({0.0}, app, 0), Error);
}

TEST(Bisquare, Examples) {
  EXPECT_DOUBLE_EQ(bisquare(0.0), 1.0);
  EXPECT_DOUBLE_EQ(bisquare(0.5), 0.5625);
  EXPECT_DOUBLE_EQ(bisquare(1.2), 0.0);
  EXPECT_DOUBLE_EQ(bisquare(1.0), 0.0);
  EXPECT_THROW(bisquare(-0.1), Error);
}

TEST(Basis, SmallExamples) {
  const KnotSet knots({{0, 0}, {1, 1}});
  const BasisConfig cfg{0.5 / std::sqrt(2.0)};
  const std::vector<Location2D> p{{0, 0}};
  const auto s = build_basis(p, knots, cfg);
  EXPECT_EQ(s.nnz(), 1u);
  EXPECT_DOUBLE_EQ(s.to_dense()(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(s.to_dense()(0, 1), 0.0);
  const std::vector<Location2D> q{{0.25, 0}};
  EXPECT_DOUBLE_EQ(build_basis(q, knots, cfg).to_dense()(0, 0), 0.5625);
  // exactly at the bandwidth: not stored
  const std::vector<Location2D> edge{{0.5, 0}};
  EXPECT_EQ(build_basis(edge, knots, cfg).nnz(), 0u);
}

TEST(Basis, StructureAgainstDistanceScan) {
  const auto pts = uniform_points(300, 3);
  const auto knots = triangular_knot_grid(9);
  const BasisConfig cfg{1.5};
  const auto s = build_basis(pts, knots, cfg);
  ASSERT_EQ(s.cols(), 77u);
  EXPECT_TRUE(s.is_canonical());
  const double r = 1.5 * 0.125;
  const DenseMatrix d = s.to_dense();
  std::size_t stored = 0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t k = 0; k < knots.size(); ++k) {
      const double dist = distance(pts[i], knots[k]);
      if (dist < r) {
        ++stored;
        EXPECT_GT(d(i, k), 0.0);
        EXPECT_LE(d(i, k), 1.0);
        EXPECT_DOUBLE_EQ(d(i, k), bisquare(dist / r));
      } else {
        EXPECT_EQ(d(i, k), 0.0);
      }
    }
  EXPECT_EQ(stored, s.nnz());
}

TEST(Basis, PermutationEquivariance) {
  auto pts = uniform_points(80, 4);
  const auto knots = triangular_knot_grid(5);
  const auto s = build_basis(pts, knots, {1.5});
  std::vector<std::size_t> order(pts.size());
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  std::rotate(order.begin(), order.begin() + 17, order.end());
  std::vector<Location2D> shuffled;
  for (std::size_t i : order) shuffled.push_back(pts[i]);
  const auto sp = build_basis(shuffled, knots, {1.5});
  const auto expected = s.permute_rows(order);
  EXPECT_EQ(sp.colptr(), expected.colptr());
  EXPECT_EQ(sp.rowind(), expected.rowind());
  EXPECT_EQ(sp.values(), expected.values());
}

TEST(Basis, MonotoneSparsity) {
  const auto pts = uniform_points(200, 5);
  const auto knots = triangular_knot_grid(9);
  std::size_t prev = 0;
  for (double b = 0.5; b <= 2.51; b += 0.1) {
    const std::size_t nnz = build_basis(pts, knots, {b}).nnz();
    EXPECT_GE(nnz, prev);
    prev = nnz;
  }
}

TEST(Basis, MultiResolutionUsesPerLevelBandwidth) {
  const std::vector<std::size_t> div{5, 9};
  const auto knots = multi_resolution_knots(div, Domain::unit_square(), 0.001);
  const auto pts = uniform_points(100, 6);
  const auto s = build_basis(pts, knots, {1.0});
  const DenseMatrix d = s.to_dense();
  const double r0 = min_knot_spacing(knots, 0), r1 = min_knot_spacing(knots, 1);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t k = 0; k < knots.size(); ++k) {
      const double r = knots.level_of(k) == 0 ? r0 : r1;
      const double dist = distance(pts[i], knots[k]);
      EXPECT_DOUBLE_EQ(d(i, k), dist < r ? bisquare(dist / r) : 0.0);
    }
}

TEST(KnotCsv, RoundTrip) {
  const std::vector<std::size_t> div{5, 9};
  const auto knots = multi_resolution_knots(div, Domain::unit_square(), 0.00125);
  std::stringstream ss;
  write_knots_csv(ss, knots);
  const auto back = read_knots_csv(ss);
  EXPECT_EQ(back.knots(), knots.knots());
  EXPECT_EQ(back.level_of(), knots.level_of());
  std::stringstream bad("x,y\n1,2\n");
  EXPECT_THROW(read_knots_csv(bad), Error);
}
