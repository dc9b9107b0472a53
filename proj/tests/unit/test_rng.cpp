#include <gtest/gtest.h>

#include <set>

#include "nagl/rng.hpp"

using nagl::Rng;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(Rng(1).next_u64(), Rng(2).next_u64());
}

TEST(Rng, ForkIsPureAndDistinct) {
  const Rng root(7);
  Rng a = root.fork(1), b = root.fork(1), c = root.fork(2);
  EXPECT_EQ(root.counter(), 0u);
  const auto x = a.next_u64();
  EXPECT_EQ(x, b.next_u64());
  EXPECT_NE(x, c.next_u64());
}

TEST(Rng, SplitAdvancesParent) {
  Rng a(3), b(3);
  (void)a.split();
  EXPECT_EQ(a.counter(), 1u);
  (void)b.next_u64();
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, UniformRangeAndMean) {
  Rng r(9);
  double sum = 0;
  for (int i = 0; i < 20000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 20000, 0.5, 0.01);
}

TEST(Rng, NormalMoments) {
  Rng r(10);
  double s = 0, s2 = 0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.03);
}

TEST(Rng, BelowCoversRangeUniformly) {
  Rng r(11);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 7000; ++i) ++hist[r.below(7)];
  for (int h : hist) EXPECT_NEAR(h, 1000, 150);
  EXPECT_THROW(r.below(0), std::invalid_argument);
}

TEST(Rng, SampleWithoutReplacementIsDistinct) {
  Rng r(12);
  const auto s = r.sample_without_replacement(20, 20);
  EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 20u);
  EXPECT_TRUE(r.sample_without_replacement(5, 0).empty());
  EXPECT_THROW(r.sample_without_replacement(3, 4), std::invalid_argument);
}
