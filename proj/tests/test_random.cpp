#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "rbk/random.hpp"

using namespace rbk;

TEST(SplitMix, Deterministic) {
  SplitMix64 a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
  SplitMix64 c(0);
  EXPECT_EQ(c.next(), 0xE220A8397B1DCDAFULL);
}

TEST(SplitMix, UniformOpenInterval) {
  SplitMix64 r(1);
  double mean = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    mean += u;
  }
  EXPECT_NEAR(mean / 100000.0, 0.5, 0.005);
}

TEST(SplitMix, SplitStreamsDiffer) {
  SplitMix64 m(9);
  SplitMix64 x = m.split(), y = m.split();
  EXPECT_NE(x.next(), y.next());
}

TEST(NormalQuantile, AgainstBoost) {
  const boost::math::normal_distribution<double> nd;
  for (double p : {1e-300, 1e-20, 1e-8, 0.001, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.97575, 0.999, 1 - 1e-12}) {
    const double want = boost::math::quantile(nd, p);
    EXPECT_NEAR(normal_quantile(p), want, 1e-14 * std::max(1.0, std::abs(want))) << p;
  }
}

TEST(Normal, Moments) {
  SplitMix64 r(5);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.015);
}

TEST(Sampling, DistinctAndDeterministic) {
  SplitMix64 a(3), b(3);
  const auto s = sample_without_replacement(a, 2500, 300);
  EXPECT_EQ(s, sample_without_replacement(b, 2500, 300));
  EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 300u);
  EXPECT_TRUE(std::all_of(s.begin(), s.end(), [](std::size_t i) { return i < 2500; }));
  SplitMix64 c(4);
  auto all = sample_without_replacement(c, 25, 25);
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 25; ++i) EXPECT_EQ(all[i], i);
}

TEST(Sampling, RoughlyUniform) {
  SplitMix64 r(8);
  std::vector<int> counts(10, 0);
  for (int rep = 0; rep < 20000; ++rep)
    for (std::size_t i : sample_without_replacement(r, 10, 3)) ++counts[i];
  for (int c : counts) EXPECT_NEAR(c, 6000, 300);
}
