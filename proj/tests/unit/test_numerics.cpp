#include "pbrl/numerics.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace pbrl;

TEST(Rng, MatchesReferenceSplitMix64Stream) {
  SeededRng zero(0);
  EXPECT_EQ(zero.next_u64(), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(zero.next_u64(), 0x6e789e6aa1b965f4ULL);
  EXPECT_EQ(zero.next_u64(), 0x06c45d188009454fULL);

  SeededRng r(1234567);
  EXPECT_EQ(r.next_u64(), 6457827717110365317ULL);
  EXPECT_EQ(r.next_u64(), 3203168211198807973ULL);
  EXPECT_EQ(r.next_u64(), 9817491932198370423ULL);
}

TEST(Rng, SameSeedSameStream) {
  SeededRng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.normal(), b.normal());
}

TEST(Rng, DeriveIsStableAndDistinct) {
  const SeededRng root(7);
  SeededRng c1 = root.derive(3), c2 = root.derive(3), c3 = root.derive(4);
  const auto x = c1.next_u64();
  EXPECT_EQ(x, c2.next_u64());
  EXPECT_NE(x, c3.next_u64());
}

TEST(Rng, UniformAndBelowRanges) {
  SeededRng rng(1);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 5000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double w = rng.uniform(-2.0, 3.0);
    ASSERT_GE(w, -2.0);
    ASSERT_LT(w, 3.0);
    const auto k = rng.below(7);
    ASSERT_LT(k, 7u);
    seen.insert(k);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Rng, NormalMoments) {
  SeededRng rng(99);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  const double mean = s / n;
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(s2 / n - mean * mean, 1.0, 0.01);
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a64(std::string()), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64(std::string("a")), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64(std::string("foobar")), 0x85944171f73967e8ULL);
}

TEST(SpdFactor, SolveMatchesDenseInverse) {
  SeededRng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.below(8));
    const Mat b = test::random_mat(d, d + 3, rng);
    const Mat a = b * b.transpose() + 0.5 * Mat::Identity(d, d);
    const Vec rhs = test::random_vec(d, rng);
    const SpdFactor f(a);
    const Vec x = f.solve(rhs);
    EXPECT_LT((a * x - rhs).norm(), 1e-10);
    EXPECT_NEAR(f.quad_form(rhs), rhs.dot(a.inverse() * rhs), 1e-9 * (1.0 + std::abs(f.quad_form(rhs))));
    EXPECT_LT((f.inverse() - a.inverse()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_FALSE(f.jittered());
  }
}

TEST(SpdFactor, JitterRescuesSemidefinite) {
  Mat a(2, 2);
  a << 1.0, 1.0, 1.0, 1.0;  // rank one
  const SpdFactor f(a);
  EXPECT_TRUE(f.jittered());
}

TEST(SpdFactor, IndefiniteThrows) {
  Mat a(2, 2);
  a << 1.0, 0.0, 0.0, -1.0;
  EXPECT_THROW(SpdFactor{a}, NumericalError);
}

TEST(SpdFactor, NonFiniteThrows) {
  Mat a = Mat::Identity(2, 2);
  a(0, 0) = std::nan("");
  EXPECT_THROW(SpdFactor{a}, NumericalError);
}

TEST(FiniteDifference, ExactOnQuadratic) {
  SeededRng rng(5);
  const Mat q = test::random_mat(4, 4, rng);
  const Vec c = test::random_vec(4, rng);
  auto f = [&](const Vec& x) { return 0.5 * x.dot(q * x) + c.dot(x); };
  const Vec x = test::random_vec(4, rng);
  const Vec exact = 0.5 * (q + q.transpose()) * x + c;
  EXPECT_LT((fd_gradient(f, x) - exact).norm(), 1e-8);
}

TEST(AllFinite, DetectsNanAndInf) {
  Vec v = Vec::Ones(3);
  EXPECT_TRUE(all_finite(v));
  v[1] = std::numeric_limits<double>::infinity();
  EXPECT_FALSE(all_finite(v));
}
